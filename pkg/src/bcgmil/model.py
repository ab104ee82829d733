"""Core domain types and the mixed-concept objective.

Training data is a set of bags of fixed-length waveform instances.  A bag
is positive when at least one of its instances contains a heartbeat; the
learner estimates a target (heartbeat) concept vector plus a small set of
background concept vectors, together with per-instance convex mixing
weights on the probability simplex.

Everything in this module is a plain value plus pure functions over those
values, safe to call from any thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DimensionMismatch, NumericalError

# Column sums below this are treated as dead when forming adaptive
# sparsity weights; the concept gets pruned on the next sweep anyway.
DEAD_COLUMN_FLOOR = 1e-12

SIMPLEX_TOL = 1e-9


def _as_float_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DataError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Instance:
    """One windowed waveform sub-segment centered on a detected peak."""

    samples: np.ndarray
    channel: int
    peak_time: float
    source_id: str = ""

    def __post_init__(self):
        samples = _as_float_vector(self.samples, "samples")
        if not np.all(np.isfinite(samples)):
            bad = int(np.flatnonzero(~np.isfinite(samples))[0])
            raise DataError(f"instance samples contain non-finite value at index {bad}")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class Bag:
    """A multi-set of instances with a binary label (1 = contains a heartbeat)."""

    instances: tuple
    label: int
    bag_id: int

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if len(self.instances) == 0:
            raise DataError(f"bag {self.bag_id} is empty")
        if self.label not in (0, 1):
            raise DataError(f"bag {self.bag_id} label must be 0 or 1, got {self.label}")
        d = len(self.instances[0].samples)
        for i, inst in enumerate(self.instances):
            if len(inst.samples) != d:
                raise DimensionMismatch(
                    f"bag {self.bag_id} instance {i} has length "
                    f"{len(inst.samples)}, expected {d}"
                )


@dataclass(frozen=True)
class TrainingSet:
    """All bags stacked for training, with cached instance matrix and counts.

    ``X`` holds the instances row-wise in bag order and ``positive_mask``
    marks rows that belong to positive bags; both are derived from ``bags``
    at construction time.
    """

    bags: tuple
    d: int
    N: int
    N_pos: int
    N_neg: int
    mu0: np.ndarray
    X: np.ndarray = field(repr=False)
    positive_mask: np.ndarray = field(repr=False)

    @classmethod
    def from_bags(cls, bags) -> "TrainingSet":
        bags = tuple(bags)
        if not bags:
            raise DataError("training set needs at least one bag")
        d = len(bags[0].instances[0].samples)
        rows = []
        pos = []
        for bag in bags:
            for inst in bag.instances:
                if len(inst.samples) != d:
                    raise DimensionMismatch(
                        f"bag {bag.bag_id} instance length {len(inst.samples)} != {d}"
                    )
                rows.append(inst.samples)
                pos.append(bag.label == 1)
        X = np.asarray(rows, dtype=float)
        positive_mask = np.asarray(pos, dtype=bool)
        n_pos = int(positive_mask.sum())
        return cls(
            bags=bags,
            d=d,
            N=len(rows),
            N_pos=n_pos,
            N_neg=len(rows) - n_pos,
            mu0=X.mean(axis=0),
            X=X,
            positive_mask=positive_mask,
        )

    def __post_init__(self):
        if self.N != self.N_pos + self.N_neg:
            raise DataError("instance counts are inconsistent")
        ref = self.X.mean(axis=0)
        scale = max(float(np.linalg.norm(ref)), 1.0)
        if np.linalg.norm(self.mu0 - ref) > 1e-12 * scale:
            raise DataError("mu0 does not match the global instance mean")


@dataclass(frozen=True)
class ConceptModel:
    """Target concept plus current background concepts, all length ``d``."""

    target: np.ndarray
    background: np.ndarray  # (M, d)

    def __post_init__(self):
        target = _as_float_vector(self.target, "target")
        background = np.asarray(self.background, dtype=float)
        if background.ndim != 2:
            raise DataError(f"background must be (M, d), got shape {background.shape}")
        if background.shape[1] != target.shape[0]:
            raise DimensionMismatch(
                f"background width {background.shape[1]} != target length {target.shape[0]}"
            )
        if not np.all(np.isfinite(target)):
            raise NumericalError("target concept contains non-finite values")
        if not np.all(np.isfinite(background)):
            raise NumericalError("background concepts contain non-finite values")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "background", background)

    @property
    def m(self) -> int:
        return self.background.shape[0]

    @property
    def d(self) -> int:
        return self.target.shape[0]

    def stacked(self) -> np.ndarray:
        """Target and background concepts as one (M+1, d) matrix, target first."""
        return np.vstack([self.target[None, :], self.background])


@dataclass(frozen=True)
class ProportionMatrix:
    """Per-instance convex weights, column 0 for the target concept.

    Every row is non-negative and sums to one; rows of negative-bag
    instances carry exactly zero target weight.
    """

    rows: np.ndarray  # (N, M+1)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise DataError(f"proportions must be (N, M+1), got shape {rows.shape}")
        object.__setattr__(self, "rows", rows)

    @property
    def n_concepts(self) -> int:
        return self.rows.shape[1]

    def check(self, positive_mask: np.ndarray) -> None:
        """Raise unless simplex and negative-bag constraints hold."""
        rows = self.rows
        if rows.shape[0] != positive_mask.shape[0]:
            raise DimensionMismatch(
                f"proportions have {rows.shape[0]} rows for {positive_mask.shape[0]} instances"
            )
        if np.any(rows < -SIMPLEX_TOL):
            bad = int(np.flatnonzero((rows < -SIMPLEX_TOL).any(axis=1))[0])
            raise DataError(f"proportion row {bad} has a negative entry")
        sums = rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
            bad = int(np.flatnonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)[0])
            raise DataError(f"proportion row {bad} sums to {sums[bad]!r}, not 1")
        neg_target = rows[~positive_mask, 0]
        if neg_target.size and np.any(neg_target != 0.0):
            bad = int(np.flatnonzero(rows[:, 0] * ~positive_mask)[0])
            raise DataError(f"negative-bag instance {bad} has nonzero target weight")


@dataclass(frozen=True)
class EMConfig:
    """Hyperparameters of the EM concept learner.

    Defaults follow the standard operating point for bed-sensor heartbeat
    data: mean shrinkage u=0.05, three initial background concepts,
    sparsity scale 0.1, positive-bag weight factor 1.5, posterior scale 5.
    """

    u: float = 0.05
    m_init: int = 3
    sparsity: float = 0.1
    alpha: float = 1.5
    beta: float = 5.0
    tau: float = 1e-6
    max_iters: int = 200
    conv_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.u < 1.0:
            raise ConfigError(f"u must be in (0, 1), got {self.u}")
        if self.m_init < 1:
            raise ConfigError(f"m_init must be >= 1, got {self.m_init}")
        if self.sparsity < 0.0:
            raise ConfigError(f"sparsity must be >= 0, got {self.sparsity}")
        if self.alpha <= 0.0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.beta <= 0.0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must be in (0, 1), got {self.tau}")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.conv_tol <= 0.0:
            raise ConfigError(f"conv_tol must be > 0, got {self.conv_tol}")


@dataclass(frozen=True)
class Posterior:
    """Per-instance probability that the instance truly contains the target."""

    p_z1: np.ndarray
    p_z0: np.ndarray

    def __post_init__(self):
        p_z1 = _as_float_vector(self.p_z1, "p_z1")
        p_z0 = _as_float_vector(self.p_z0, "p_z0")
        if p_z1.shape != p_z0.shape:
            raise DimensionMismatch("p_z1 and p_z0 lengths differ")
        if np.any((p_z1 < 0.0) | (p_z1 > 1.0)):
            raise DataError("posterior probabilities must lie in [0, 1]")
        if np.any(p_z0 + p_z1 != 1.0):
            raise DataError("posterior rows must sum to 1 exactly")
        object.__setattr__(self, "p_z1", p_z1)
        object.__setattr__(self, "p_z0", p_z0)


def reconstruct(row: np.ndarray, model: ConceptModel, z: int) -> np.ndarray:
    """Mix concepts with one proportion row: z * p_T * target + sum_k p_k * bg_k.

    ``z`` gates the target term, matching the latent instance label: with
    z=0 only the background part of the row contributes.
    """
    row = _as_float_vector(row, "row")
    if row.shape[0] != model.m + 1:
        raise DimensionMismatch(
            f"proportion row has length {row.shape[0]}, expected {model.m + 1} "
            f"(target + {model.m} background)"
        )
    if z not in (0, 1):
        raise DataError(f"z must be 0 or 1, got {z}")
    out = row[1:] @ model.background
    if z:
        out = out + row[0] * model.target
    return out


def instance_weights(training: TrainingSet, alpha: float) -> np.ndarray:
    """Residual weights: alpha * N_neg / N_pos on positive-bag rows, 1 elsewhere."""
    if training.N_pos == 0:
        raise DataError("no positive bags: cannot form instance weights")
    w = np.ones(training.N)
    w[training.positive_mask] = alpha * training.N_neg / training.N_pos
    return w


def sparsity_weights(p_prev_rows: np.ndarray, sparsity: float) -> np.ndarray:
    """Adaptive per-concept penalties from the previous proportions.

    Each background concept k gets sparsity / column_sum(k), so weakly used
    concepts are pushed toward zero usage and eventually pruned.  Dead
    columns are capped instead of dividing by zero.
    """
    rows = np.asarray(p_prev_rows, dtype=float)
    col_sums = rows[:, 1:].sum(axis=0)
    return sparsity / np.maximum(col_sums, DEAD_COLUMN_FLOOR)


def _check_finite(value: float, term: str) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"objective {term} term is non-finite")
    return float(value)


def expected_objective(
    training: TrainingSet,
    model: ConceptModel,
    p: ProportionMatrix,
    post: Posterior,
    cfg: EMConfig,
    sparsity_w: np.ndarray | None = None,
) -> float:
    """Posterior-weighted least-squares objective the EM loop descends.

    Three terms: the z-weighted reconstruction residuals scaled by
    (1-u)/2 and the instance weights, the u/2 shrinkage of every concept
    toward the global mean, and the adaptive sparsity penalty on
    background usage.  ``sparsity_w`` fixes the per-concept penalties; by
    default they are recomputed from ``p`` itself (treating it as the
    previous iterate).
    """
    rows = p.rows
    if rows.shape != (training.N, model.m + 1):
        raise DimensionMismatch(
            f"proportions shape {rows.shape} does not match "
            f"N={training.N}, M+1={model.m + 1}"
        )
    if sparsity_w is None:
        sparsity_w = sparsity_weights(rows, cfg.sparsity)
    sparsity_w = np.asarray(sparsity_w, dtype=float)
    if sparsity_w.shape[0] != model.m:
        raise DimensionMismatch(
            f"sparsity weights length {sparsity_w.shape[0]} != M={model.m}"
        )

    w = instance_weights(training, cfg.alpha)
    bg_part = rows[:, 1:] @ model.background
    resid0 = training.X - bg_part
    resid1 = resid0 - rows[:, :1] * model.target[None, :]
    r0 = np.einsum("ij,ij->i", resid0, resid0)
    r1 = np.einsum("ij,ij->i", resid1, resid1)
    residual = 0.5 * (1.0 - cfg.u) * float(np.dot(w, post.p_z0 * r0 + post.p_z1 * r1))
    residual = _check_finite(residual, "residual")

    diffs = model.stacked() - training.mu0[None, :]
    shrink = 0.5 * cfg.u * float(np.einsum("ij,ij->", diffs, diffs))
    shrink = _check_finite(shrink, "mean-shrinkage")

    penalty = float(np.dot(sparsity_w, rows[:, 1:].sum(axis=0)))
    penalty = _check_finite(penalty, "sparsity")

    return residual + shrink + penalty
