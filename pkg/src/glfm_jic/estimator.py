"""Constrained joint maximum likelihood by alternating projected block ascent.

Each sweep updates every person row ``F_i`` with the item parameters held
fixed, then every item column ``(d_j, A_j)`` with the scores held fixed.  A
block update is projected gradient ascent with Armijo backtracking onto the
feasible ball, so the joint log-likelihood never decreases.  All blocks of a
phase are independent given the frozen side and are processed together as
one vectorised batch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model_core import (
    FamilyKind,
    ObservationSet,
    ParameterSet,
    get_family,
    joint_log_likelihood,
)

logger = logging.getLogger(__name__)

__all__ = [
    "FitConfig",
    "FitResult",
    "project_factor",
    "project_item",
    "project_rows",
    "row_objective",
    "row_gradient",
    "column_objective",
    "column_gradient",
    "update_row",
    "update_column",
    "initialize",
    "fit_jml",
]

ARMIJO_SIGMA = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACKS = 60
MAX_STEP = 1e12


@dataclass(frozen=True)
class FitConfig:
    max_sweeps: int = 500
    rel_tol: float = 1e-4
    inner_max_iter: int = 5
    inner_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if self.rel_tol <= 0 or self.inner_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.inner_max_iter < 1:
            raise ValueError("inner_max_iter must be at least 1")


@dataclass(frozen=True)
class FitResult:
    params: ParameterSet
    loglik: float
    sweeps_used: int
    converged: bool
    K: int
    trace: tuple = field(default=(), repr=False)

    @property
    def M(self) -> np.ndarray:
        return self.params.F @ self.params.A.T + self.params.d[None, :]


def project_rows(X, radius: float) -> np.ndarray:
    """Project each row of ``X`` onto the Euclidean ball of the given radius."""
    X = np.asarray(X, dtype=float)
    norms = np.sqrt(np.sum(X * X, axis=-1, keepdims=True))
    # slack keeps projection idempotent despite rounding in the rescaled norm
    outside = norms > radius * (1.0 + 1e-13)
    scale = np.where(outside, radius / np.where(norms > 0, norms, 1.0), 1.0)
    return X * scale


def _factor_radius(C: float) -> float:
    if C <= 1:
        raise ValueError(f"C must exceed 1 for a non-degenerate factor ball, got {C}")
    return math.sqrt(C * C - 1.0)


def project_factor(v, C: float) -> np.ndarray:
    """Project a factor vector so that ``(|v|^2 + 1)^(1/2) <= C``."""
    return project_rows(np.asarray(v, dtype=float), _factor_radius(C))


def project_item(v, C: float) -> np.ndarray:
    """Project a stacked ``(d_j, A_j)`` vector onto the ball of radius ``C``."""
    if C <= 0:
        raise ValueError("C must be positive")
    return project_rows(np.asarray(v, dtype=float), C)


# ---------------------------------------------------------------------------
# batched block ascent
#
# Blocks are the rows of X; the natural parameters of block b are
# X[b] @ Z.T + offset[b].  WY = mask * y and W = mask are dense (B, T).


def _evaluate(X, Z, offset, WY, W, family, phi):
    """Block objectives and the matching ``b'(M)`` for the gradient."""
    M = X @ Z.T + offset
    bm, bprime = family._b_and_prime(M)
    return np.sum(WY * M - W * bm, axis=1) / phi, bprime


def _block_ascent(X, Z, offset, WY, W, family, phi, radius, max_iter, tol):
    X = np.array(X, dtype=float)
    offset = np.broadcast_to(offset, WY.shape)
    active = np.flatnonzero(W.sum(axis=1) > 0)
    obj = np.zeros(X.shape[0])
    P = np.zeros(WY.shape)
    if active.size:
        obj[active], P[active] = _evaluate(
            X[active], Z, offset[active], WY[active], W[active], family, phi
        )
    step = np.full(X.shape[0], 0.5)
    X_prev = np.zeros_like(X)
    G_prev = np.zeros_like(X)
    has_prev = np.zeros(X.shape[0], dtype=bool)
    for _ in range(max_iter):
        if active.size == 0:
            break
        Xa = X[active]
        G = ((WY[active] - W[active] * P[active]) @ Z) / phi
        pg = project_rows(Xa + G, radius) - Xa
        moving = np.sqrt(np.sum(pg * pg, axis=1)) > tol
        active, Xa, G = active[moving], Xa[moving], G[moving]
        # first trial: Barzilai-Borwein step from the last move, else twice the last step
        t = 2.0 * step[active]
        hp = has_prev[active]
        if hp.any():
            s_ = Xa[hp] - X_prev[active[hp]]
            curv = -np.sum(s_ * (G[hp] - G_prev[active[hp]]), axis=1)
            ss = np.sum(s_ * s_, axis=1)
            bb = np.divide(ss, curv, out=np.full_like(ss, np.nan), where=curv > 0)
            t[hp] = np.where(np.isfinite(bb) & (bb > 0), bb, t[hp])
        t = np.clip(t, 1e-12, MAX_STEP)
        X_prev[active] = Xa
        G_prev[active] = G
        has_prev[active] = True
        pending = np.arange(active.size)
        accepted = np.zeros(active.size, dtype=bool)
        for _ in range(MAX_BACKTRACKS):
            if pending.size == 0:
                break
            rows = active[pending]
            Xn = project_rows(Xa[pending] + t[pending, None] * G[pending], radius)
            fn, Pn = _evaluate(Xn, Z, offset[rows], WY[rows], W[rows], family, phi)
            gain = np.sum(G[pending] * (Xn - Xa[pending]), axis=1)
            ok = (fn >= obj[rows] + ARMIJO_SIGMA * gain) & (fn >= obj[rows])
            good = pending[ok]
            X[active[good]] = Xn[ok]
            obj[active[good]] = fn[ok]
            P[active[good]] = Pn[ok]
            step[active[good]] = t[good]
            accepted[good] = True
            pending = pending[~ok]
            t[pending] *= ARMIJO_SHRINK
        active = active[accepted]
    return X


def _dense(obs: ObservationSet):
    W = obs.mask.astype(float)
    WY = obs.to_dense(fill=0.0)
    return WY, W


def row_objective(F_i, A, d, cols, y, family, phi=1.0) -> float:
    """Row block objective ``sum_j [y_ij m_ij - b(m_ij)] / phi`` over observed columns."""
    family = get_family(family)
    m = np.asarray(A)[cols] @ np.asarray(F_i, dtype=float) + np.asarray(d)[cols]
    return float(np.sum(np.asarray(y) * m - family.b(m)) / phi)


def row_gradient(F_i, A, d, cols, y, family, phi=1.0) -> np.ndarray:
    family = get_family(family)
    A_obs = np.asarray(A)[cols]
    m = A_obs @ np.asarray(F_i, dtype=float) + np.asarray(d)[cols]
    return (np.asarray(y) - family.b_prime(m)) @ A_obs / phi


def column_objective(B_j, F, rows, y, family, phi=1.0) -> float:
    """Column block objective in the stacked ``B_j = (d_j, A_j)``."""
    family = get_family(family)
    G = np.column_stack([np.ones(len(rows)), np.asarray(F)[rows]])
    m = G @ np.asarray(B_j, dtype=float)
    return float(np.sum(np.asarray(y) * m - family.b(m)) / phi)


def column_gradient(B_j, F, rows, y, family, phi=1.0) -> np.ndarray:
    family = get_family(family)
    G = np.column_stack([np.ones(len(rows)), np.asarray(F)[rows]])
    m = G @ np.asarray(B_j, dtype=float)
    return (np.asarray(y) - family.b_prime(m)) @ G / phi


def update_row(F_i, A, d, cols, y, family, C, config: FitConfig | None = None, phi=1.0):
    """Ascend the objective of one person row; returns the new ``F_i``.

    ``cols`` and ``y`` are the observed column indices and values of the row.
    A row without observations comes back unchanged.
    """
    config = config or FitConfig()
    family = get_family(family)
    A = np.asarray(A, dtype=float)
    d = np.asarray(d, dtype=float)
    cols = np.asarray(cols, dtype=np.int64)
    WY = np.zeros((1, A.shape[0]))
    W = np.zeros((1, A.shape[0]))
    W[0, cols] = 1.0
    WY[0, cols] = np.asarray(y, dtype=float)
    X = _block_ascent(
        np.asarray(F_i, dtype=float)[None, :], A, d[None, :], WY, W, family, phi,
        _factor_radius(C), config.inner_max_iter, config.inner_tol,
    )
    return X[0]


def update_column(d_j, A_j, F, rows, y, family, C, config: FitConfig | None = None, phi=1.0):
    """Ascend the objective of one item column; returns ``(d_j, A_j)``."""
    config = config or FitConfig()
    family = get_family(family)
    F = np.asarray(F, dtype=float)
    rows = np.asarray(rows, dtype=np.int64)
    G = np.column_stack([np.ones(F.shape[0]), F])
    WY = np.zeros((1, F.shape[0]))
    W = np.zeros((1, F.shape[0]))
    W[0, rows] = 1.0
    WY[0, rows] = np.asarray(y, dtype=float)
    B = np.concatenate([[float(d_j)], np.asarray(A_j, dtype=float).ravel()])
    X = _block_ascent(
        B[None, :], G, np.zeros((1, 1)), WY, W, family, phi,
        float(C), config.inner_max_iter, config.inner_tol,
    )
    return float(X[0, 0]), X[0, 1:]


def _naive_link(family, y):
    if family.kind is FamilyKind.LOGISTIC:
        return 0.5 * (2.0 * y - 1.0)
    if family.kind is FamilyKind.POISSON:
        return np.log(y + 1.0)
    return y


def initialize(obs: ObservationSet, K: int, family, C: float = 4.0, seed: int = 0,
               phi: float = 1.0) -> ParameterSet:
    """Starting values from a truncated SVD of a naively linked, mean-filled matrix."""
    family = get_family(family)
    if K < 1:
        raise ValueError("K must be at least 1")
    if K + 1 > min(obs.N, obs.J):
        raise ValueError(f"K + 1 = {K + 1} exceeds min(N, J) = {min(obs.N, obs.J)}")
    rng = np.random.default_rng(seed)
    work = np.full(obs.shape, np.nan)
    work[obs.rows, obs.cols] = _naive_link(family, obs.values)
    counts = obs.mask.sum(axis=0)
    col_sum = np.where(obs.mask, work, 0.0).sum(axis=0)
    overall = float(np.nanmean(work)) if obs.n else 0.0
    col_mean = np.where(counts > 0, col_sum / np.maximum(counts, 1), overall)
    work = np.where(obs.mask, work, col_mean[None, :])

    d = work.mean(axis=0)
    U, S, Vt = np.linalg.svd(work - d[None, :], full_matrices=False)
    U, S, V = U[:, :K], S[:K], Vt[:K].T
    sqrtN = math.sqrt(obs.N)
    F = U * sqrtN
    A = V * (S / sqrtN)
    degenerate = S <= 1e-8 * max(1.0, float(np.linalg.norm(work)))
    if np.any(degenerate):
        # no signal in these directions: small random scores break the F = A = 0 saddle
        F[:, degenerate] = 1e-2 * rng.standard_normal((obs.N, int(degenerate.sum())))
        A[:, degenerate] = 0.0

    F = project_factor(F, C)
    B = project_item(np.column_stack([d, A]), C)
    return ParameterSet(F=F, A=B[:, 1:], d=B[:, 0], C=C, phi=phi)


def _loglik_dense(F, B, WY, W, family, phi, c_const):
    M = F @ B[:, 1:].T + B[:, 0][None, :]
    return float(np.sum(WY * M - W * family._b_and_prime(M)[0]) / phi + c_const)


def fit_jml(obs: ObservationSet, K: int, family, C: float = 4.0,
            config: FitConfig | None = None, phi: float = 1.0,
            init: ParameterSet | None = None) -> FitResult:
    """Fit a K-factor model by alternating projected block ascent.

    Stops once the relative log-likelihood gain of a full sweep falls below
    ``config.rel_tol`` or after ``config.max_sweeps`` sweeps.
    """
    config = config or FitConfig()
    family = get_family(family)
    if obs.n == 0:
        raise ValueError("cannot fit a model without observed entries")
    family.validate_y(obs.values)
    params = init if init is not None else initialize(obs, K, family, C, config.seed, phi)
    if params.K != K or (params.N, params.J) != obs.shape:
        raise ValueError("initial parameters do not match K or the data shape")

    WY, W = _dense(obs)
    WYt, Wt = np.ascontiguousarray(WY.T), np.ascontiguousarray(W.T)
    c_const = float(np.sum(family.c(obs.values, phi)))
    rF = _factor_radius(C)
    F = np.array(params.F)
    B = np.column_stack([params.d, params.A])
    ones = np.ones((obs.N, 1))

    ll = _loglik_dense(F, B, WY, W, family, phi, c_const)
    trace = [ll]
    converged = False
    sweeps = 0
    for sweeps in range(1, config.max_sweeps + 1):
        F = _block_ascent(F, B[:, 1:], B[:, 0][None, :], WY, W, family, phi, rF,
                          config.inner_max_iter, config.inner_tol)
        G = np.hstack([ones, F])
        B = _block_ascent(B, G, np.zeros((1, 1)), WYt, Wt, family, phi, C,
                          config.inner_max_iter, config.inner_tol)
        new_ll = _loglik_dense(F, B, WY, W, family, phi, c_const)
        trace.append(new_ll)
        gain = new_ll - ll
        ll = new_ll
        if gain < config.rel_tol * abs(ll):
            converged = True
            break
    logger.debug("K=%d: %d sweeps, loglik %.4f, converged=%s", K, sweeps, ll, converged)

    fitted = ParameterSet(F=F, A=B[:, 1:], d=B[:, 0], C=C, phi=phi)
    return FitResult(
        params=fitted,
        loglik=joint_log_likelihood(fitted, obs, family),
        sweeps_used=sweeps,
        converged=converged,
        K=K,
        trace=tuple(trace),
    )


def with_dispersion(fit: FitResult, obs: ObservationSet, family, phi: float) -> FitResult:
    """Same fitted values, log-likelihood re-evaluated at dispersion ``phi``."""
    params = replace(fit.params, phi=phi)
    return replace(fit, params=params, loglik=joint_log_likelihood(params, obs, family))
