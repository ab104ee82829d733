"""EM learner for the target / background concept model.

Each iteration runs four steps:

1. E-step: per-instance posterior that the instance carries the target,
   computed from the background-only reconstruction residual.
2. Concept update: with proportions and posteriors fixed the objective is
   an unconstrained convex quadratic in the stacked concepts.  Every
   coordinate decouples, so all concepts come from one shared
   (M+1) x (M+1) normal-equation system solved across coordinates.
3. Proportion update: each instance row is an independent simplex QP over
   its mixing weights (target weight pinned to zero in negative bags).
4. Pruning: background concepts whose usage never exceeds ``tau`` are
   dropped and the remaining rows renormalized.

Both M-steps are exact block minimizers, so the objective cannot increase
while posteriors and sparsity weights are held fixed; ``fit`` checks that
invariant every iteration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError
from .model import (
    ConceptModel,
    EMConfig,
    Posterior,
    ProportionMatrix,
    TrainingSet,
    expected_objective,
    instance_weights,
    sparsity_weights,
)
from .simplex import solve_simplex_qp_batch

_MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class FitResult:
    """Converged model, final proportions, and per-iteration diagnostics."""

    model: ConceptModel
    p: ProportionMatrix
    objective_trace: tuple
    iterations: int
    pruned_history: tuple = field(default=())


def e_step(
    training: TrainingSet, model: ConceptModel, p: ProportionMatrix, beta: float
) -> Posterior:
    """Posterior of the latent instance label from the background residual.

    Positive-bag instances: P(z=0) = exp(-beta * ||x - background mix||^2)
    using only the background coordinates of the row (the target column
    does not enter), P(z=1) its complement.  Negative-bag instances are
    pinned to P(z=1) = 0.  Exponent underflow cleanly clamps P(z=0) to 0.
    """
    bg_resid = training.X - p.rows[:, 1:] @ model.background
    sq = np.einsum("ij,ij->i", bg_resid, bg_resid)
    with np.errstate(under="ignore"):
        p_z0 = np.exp(-beta * sq)
    p_z0[~training.positive_mask] = 1.0
    p_z1 = 1.0 - p_z0
    return Posterior(p_z1=p_z1, p_z0=p_z0)


def m_step_concepts(
    training: TrainingSet, p: ProportionMatrix, post: Posterior, cfg: EMConfig
) -> ConceptModel:
    """Exact minimizer of the objective over all concepts jointly.

    Stationarity gives one shared Gram system: with A1 the proportion rows
    and A0 the same rows with the target column zeroed,

        G = (1-u) * (A0' W0 A0 + A1' W1 A1) + u * I
        B = (1-u) * (A0' W0 X  + A1' W1 X)  + u * 1 mu0'

    where W0/W1 are the posterior-weighted instance weights, and the new
    stacked concepts solve G E = B.  A singular G (possible only when the
    shrinkage weight is zero) is ridge-regularized and reported.
    """
    w = instance_weights(training, cfg.alpha)
    a1 = p.rows
    a0 = a1.copy()
    a0[:, 0] = 0.0
    w0 = w * post.p_z0
    w1 = w * post.p_z1

    gram = (1.0 - cfg.u) * ((a0 * w0[:, None]).T @ a0 + (a1 * w1[:, None]).T @ a1)
    gram[np.diag_indices_from(gram)] += cfg.u
    rhs = (1.0 - cfg.u) * ((a0 * w0[:, None]).T @ training.X + (a1 * w1[:, None]).T @ training.X)
    rhs += cfg.u * training.mu0[None, :]

    try:
        stacked = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * np.trace(gram) + 1e-300
        warnings.warn(
            f"singular concept system; adding ridge {ridge:g}",
            RuntimeWarning,
            stacklevel=2,
        )
        gram[np.diag_indices_from(gram)] += ridge
        stacked = np.linalg.solve(gram, rhs)
    if not np.all(np.isfinite(stacked)):
        raise NumericalError("concept update produced non-finite values")
    return ConceptModel(target=stacked[0], background=stacked[1:])


def _row_objectives(
    training: TrainingSet,
    model: ConceptModel,
    post: Posterior,
    rows: np.ndarray,
    w: np.ndarray,
    sparsity_w: np.ndarray,
    u: float,
) -> np.ndarray:
    """Per-instance contribution to the objective for given proportion rows."""
    bg_part = rows[:, 1:] @ model.background
    resid0 = training.X - bg_part
    resid1 = resid0 - rows[:, :1] * model.target[None, :]
    r0 = np.einsum("ij,ij->i", resid0, resid0)
    r1 = np.einsum("ij,ij->i", resid1, resid1)
    quad = 0.5 * (1.0 - u) * w * (post.p_z0 * r0 + post.p_z1 * r1)
    return quad + rows[:, 1:] @ sparsity_w


def m_step_proportions(
    training: TrainingSet,
    model: ConceptModel,
    post: Posterior,
    p_prev: ProportionMatrix,
    cfg: EMConfig,
) -> ProportionMatrix:
    """Exact minimizer of each instance's proportion row on the simplex.

    Sparsity weights come from the previous proportions, per the adaptive
    penalty rule.  Negative-bag rows optimize over background coordinates
    only.  Each solved row is kept only if it does not score worse than
    the previous row, which pins down the non-increase guarantee even
    under floating-point noise.
    """
    n, m = training.N, model.m
    w = instance_weights(training, cfg.alpha)
    gamma = sparsity_weights(p_prev.rows, cfg.sparsity)
    concepts = model.stacked()
    gram_full = concepts @ concepts.T
    gram_bg = gram_full[1:, 1:]
    cx = training.X @ concepts.T  # x_i . concept_k
    scale = (1.0 - cfg.u) * w

    rows = np.zeros((n, m + 1))
    pos = training.positive_mask
    if np.any(pos):
        gram0 = gram_full.copy()
        gram0[0, :] = 0.0
        gram0[:, 0] = 0.0
        coef0 = (scale * post.p_z0)[pos, None, None]
        coef1 = (scale * post.p_z1)[pos, None, None]
        q_batch = coef0 * gram0[None, :, :] + coef1 * gram_full[None, :, :]
        cx0 = cx.copy()
        cx0[:, 0] = 0.0
        lin = -(scale * post.p_z0)[pos, None] * cx0[pos] - (scale * post.p_z1)[pos, None] * cx[pos]
        lin[:, 1:] += gamma[None, :]
        rows[pos] = solve_simplex_qp_batch(q_batch, lin)
    neg = ~pos
    if np.any(neg):
        coef = scale[neg, None, None]
        q_batch = coef * gram_bg[None, :, :]
        lin = -scale[neg, None] * cx[neg, 1:] + gamma[None, :]
        rows[neg, 1:] = solve_simplex_qp_batch(q_batch, lin)

    new_vals = _row_objectives(training, model, post, rows, w, gamma, cfg.u)
    old_vals = _row_objectives(training, model, post, p_prev.rows, w, gamma, cfg.u)
    worse = new_vals > old_vals
    if np.any(worse):
        rows[worse] = p_prev.rows[worse]
    return ProportionMatrix(rows=rows)


def prune(model: ConceptModel, p: ProportionMatrix, tau: float, keep_at_least: int = 1):
    """Drop background concepts whose peak usage never exceeds ``tau``.

    Returns (model, proportions, pruned_indices).  The target concept is
    never pruned; surviving rows are renormalized back onto the simplex.
    If every background concept is below threshold, the ``keep_at_least``
    most used ones are retained (an empty background would leave
    negative-bag rows unable to sum to one).
    """
    if tau <= 0.0:
        raise DataError(f"tau must be > 0, got {tau}")
    col_max = p.rows[:, 1:].max(axis=0)
    keep = col_max > tau
    if not np.any(keep) and keep_at_least > 0:
        order = np.argsort(-col_max, kind="stable")[:keep_at_least]
        keep[order] = True
        warnings.warn(
            "pruning would remove every background concept; keeping the most used one",
            RuntimeWarning,
            stacklevel=2,
        )
    pruned = [int(k) for k in np.flatnonzero(~keep)]
    if not pruned:
        return model, p, pruned

    new_model = ConceptModel(target=model.target, background=model.background[keep])
    new_rows = np.column_stack([p.rows[:, :1], p.rows[:, 1:][:, keep]])
    sums = new_rows.sum(axis=1, keepdims=True)
    degenerate = sums[:, 0] <= 0.0
    if np.any(degenerate):
        # Mass sat entirely on pruned columns; spread it over the survivors.
        new_rows[degenerate, 1:] = 1.0 / new_model.m
        sums = new_rows.sum(axis=1, keepdims=True)
    new_rows /= sums
    return new_model, ProportionMatrix(rows=new_rows), pruned


def initialize(training: TrainingSet, cfg: EMConfig):
    """Deterministic starting point for the EM loop.

    Target concept: global mean plus the positive-minus-negative mean
    contrast.  Background concepts: centroids of a short seeded k-means
    over the negative-bag instances.  Proportions: uniform rows, with the
    target column zeroed (and renormalized) in negative bags.
    """
    if training.N_pos == 0:
        raise DataError("no positive bags: cannot initialize")
    if training.N_neg == 0:
        raise DataError("no negative bags: cannot initialize")

    pos_mean = training.X[training.positive_mask].mean(axis=0)
    neg_mean = training.X[~training.positive_mask].mean(axis=0)
    target = training.mu0 + (pos_mean - neg_mean)

    rng = np.random.default_rng(cfg.seed)
    negatives = training.X[~training.positive_mask]
    replace = negatives.shape[0] < cfg.m_init
    if replace:
        warnings.warn(
            f"only {negatives.shape[0]} negative instances for {cfg.m_init} "
            "background concepts; sampling with replacement",
            RuntimeWarning,
            stacklevel=2,
        )
    picks = rng.choice(negatives.shape[0], size=cfg.m_init, replace=replace)
    centroids = negatives[picks].copy()
    for _ in range(10):
        d2 = ((negatives[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        for k in range(cfg.m_init):
            members = negatives[assign == k]
            if members.shape[0]:
                centroids[k] = members.mean(axis=0)

    model = ConceptModel(target=target, background=centroids)
    rows = np.full((training.N, cfg.m_init + 1), 1.0 / (cfg.m_init + 1))
    rows[~training.positive_mask, 0] = 0.0
    rows[~training.positive_mask, 1:] = 1.0 / cfg.m_init
    return model, ProportionMatrix(rows=rows)


def _guard_monotone(before: float, after: float, step: str) -> None:
    slack = _MONOTONE_SLACK * max(1.0, abs(before))
    if after > before + slack:
        raise NumericalError(
            f"{step} increased the objective: {before!r} -> {after!r}"
        )


def fit(training: TrainingSet, cfg: EMConfig) -> FitResult:
    """Run the EM loop until the concepts stop moving or the budget ends.

    Stops when the relative Frobenius change of the stacked concepts falls
    below ``conv_tol``.  Records the expected objective once per completed
    iteration and raises if an M-step ever increases it (beyond relative
    floating-point slack) or if the objective turns non-finite.
    """
    model, p = initialize(training, cfg)
    trace = []
    pruned_history = []
    iterations = 0
    for it in range(1, cfg.max_iters + 1):
        gamma = sparsity_weights(p.rows, cfg.sparsity)
        post = e_step(training, model, p, cfg.beta)

        f0 = expected_objective(training, model, p, post, cfg, sparsity_w=gamma)
        new_model = m_step_concepts(training, p, post, cfg)
        f1 = expected_objective(training, new_model, p, post, cfg, sparsity_w=gamma)
        _guard_monotone(f0, f1, "concept update")

        new_p = m_step_proportions(training, new_model, post, p, cfg)
        f2 = expected_objective(training, new_model, new_p, post, cfg, sparsity_w=gamma)
        _guard_monotone(f1, f2, "proportion update")

        pruned_model, pruned_p, dropped = prune(new_model, new_p, cfg.tau)
        for idx in dropped:
            pruned_history.append((it, idx))
        if dropped:
            keep = np.ones(new_model.m, dtype=bool)
            keep[dropped] = False
            gamma_now = gamma[keep]
        else:
            gamma_now = gamma
        trace.append(
            expected_objective(
                training, pruned_model, pruned_p, post, cfg, sparsity_w=gamma_now
            )
        )
        iterations = it

        converged = False
        if not dropped and new_model.m == model.m:
            prev_stack = model.stacked()
            delta = np.linalg.norm(new_model.stacked() - prev_stack)
            denom = max(np.linalg.norm(prev_stack), 1e-30)
            converged = delta / denom < cfg.conv_tol
        model, p = pruned_model, pruned_p
        if converged:
            break

    p.check(training.positive_mask)
    return FitResult(
        model=model,
        p=p,
        objective_trace=tuple(trace),
        iterations=iterations,
        pruned_history=tuple(pruned_history),
    )
