"""Joint-likelihood information criterion and selection of the number of factors."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .estimator import FitConfig, FitResult, fit_jml, with_dispersion
from .model_core import ObservationSet, get_family

logger = logging.getLogger(__name__)

__all__ = [
    "PenaltyWarning",
    "SelectionRow",
    "SelectionResult",
    "penalty",
    "jic",
    "estimate_dispersion",
    "select_K",
]

PHI_FLOOR = 1e-12


class PenaltyWarning(UserWarning):
    """The suggested penalty is nonpositive because n <= max(N, J)."""


def penalty(n: int, N: int, J: int, K: int) -> float:
    """Suggested penalty ``K * max(N, J) * log(n / max(N, J))`` (natural log)."""
    if n < 1:
        raise ValueError("n must be positive")
    if K < 0:
        raise ValueError("K must be nonnegative")
    big = max(N, J)
    if n <= big:
        warnings.warn(
            f"n={n} <= max(N, J)={big}: penalty is nonpositive and the criterion unreliable",
            PenaltyWarning,
            stacklevel=2,
        )
    return K * (big * math.log(n / big))


def jic(fit: FitResult, n: int, N: int, J: int,
        penalty_fn: Callable[[int, int, int, int], float] = penalty) -> float:
    return -2.0 * fit.loglik + penalty_fn(n, N, J, fit.K)


def estimate_dispersion(fit_kmax: FitResult, obs: ObservationSet, family) -> float:
    """Mean squared residual over observed cells for the Gaussian family, 1 otherwise."""
    family = get_family(family)
    if obs.n == 0:
        raise ValueError("cannot estimate dispersion without observations")
    if family.dispersion_known:
        return 1.0
    p = fit_kmax.params
    m = np.einsum("nk,nk->n", p.F[obs.rows], p.A[obs.cols]) + p.d[obs.cols]
    phi = float(np.mean((obs.values - m) ** 2))
    if phi < PHI_FLOOR:
        warnings.warn(f"degenerate dispersion estimate {phi:g}; flooring at {PHI_FLOOR:g}",
                      RuntimeWarning, stacklevel=2)
        phi = PHI_FLOOR
    return phi


@dataclass(frozen=True)
class SelectionRow:
    K: int
    deviance: float
    penalty: float
    jic: float
    loglik: float
    sweeps: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "deviance": self.deviance,
            "penalty": self.penalty,
            "jic": self.jic,
            "loglik": self.loglik,
            "sweeps": self.sweeps,
            "converged": self.converged,
        }


@dataclass
class SelectionResult:
    rows: list
    chosen_K: int
    phi_used: float
    n: int
    N: int
    J: int
    family: str = "logistic"
    errors: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict, repr=False)

    def row(self, K: int) -> SelectionRow:
        for r in self.rows:
            if r.K == K:
                return r
        raise KeyError(K)


def select_K(obs: ObservationSet, candidates: Sequence[int] = tuple(range(1, 9)),
             family="logistic", C: float = 4.0, config: FitConfig | None = None,
             penalty_fn: Callable[[int, int, int, int], float] = penalty,
             keep_fits: bool = False) -> SelectionResult:
    """Fit every candidate K and return the JIC table with its minimiser.

    Each candidate starts from its own initialisation seeded with
    ``config.seed ^ K``.  For the Gaussian family the dispersion is taken from
    the largest candidate's fit and shared by all rows.  Ties go to the
    smaller K.
    """
    family = get_family(family)
    config = config or FitConfig()
    cands = sorted(set(int(k) for k in candidates))
    if not cands:
        raise ValueError("candidate list is empty")
    if cands[0] < 1:
        raise ValueError("candidates must be at least 1")

    fits: dict[int, FitResult] = {}
    errors: dict[int, str] = {}
    for K in cands:
        cfg = FitConfig(config.max_sweeps, config.rel_tol, config.inner_max_iter,
                        config.inner_tol, config.seed ^ K)
        try:
            fits[K] = fit_jml(obs, K, family, C, cfg)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.warning("fit for K=%d failed: %s", K, exc)
            errors[K] = f"{type(exc).__name__}: {exc}"
    if not fits:
        raise RuntimeError(f"every candidate fit failed: {errors}")

    phi = 1.0
    if not family.dispersion_known:
        phi = estimate_dispersion(fits[max(fits)], obs, family)
        fits = {K: with_dispersion(f, obs, family, phi) for K, f in fits.items()}

    rows = []
    for K, f in sorted(fits.items()):
        pen = penalty_fn(obs.n, obs.N, obs.J, K)
        dev = -2.0 * f.loglik
        rows.append(SelectionRow(K, dev, pen, dev + pen, f.loglik, f.sweeps_used, f.converged))
    best = min(rows, key=lambda r: (r.jic, r.K))
    return SelectionResult(
        rows=rows, chosen_K=best.K, phi_used=phi, n=obs.n, N=obs.N, J=obs.J,
        family=family.name, errors=errors, fits=fits if keep_fits else {},
    )
