"""Error and spectrum diagnostics for fitted natural-parameter matrices."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .estimator import FitConfig, fit_jml
from .simulation import MissingScheme, SimSetting, simulate_dataset

__all__ = [
    "ErrorReport",
    "scaled_frobenius_error",
    "singular_values",
    "rate_bound",
    "error_report",
    "error_scaling_study",
    "random_low_rank_pair",
    "hadamard_nuclear_check",
    "hadamard_audit",
]


def scaled_frobenius_error(M_hat, M_star) -> float:
    """``(NJ)^(-1/2) * ||M_hat - M_star||_F``."""
    M_hat = np.asarray(M_hat, dtype=float)
    M_star = np.asarray(M_star, dtype=float)
    if M_hat.shape != M_star.shape:
        raise ValueError(f"shape mismatch: {M_hat.shape} vs {M_star.shape}")
    return float(math.sqrt(np.mean((M_hat - M_star) ** 2)))


def singular_values(M) -> np.ndarray:
    """Full singular value spectrum in descending order."""
    return np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)


def rate_bound(K: int, N: int, J: int, n: float) -> float:
    """The error rate ``sqrt(K * max(N, J) / n)``."""
    return math.sqrt(K * max(N, J) / n)


@dataclass(frozen=True)
class ErrorReport:
    scaled_frobenius: float | None
    singular_values: tuple
    n_star_proxy: float
    rate_bound_value: float
    K: int
    N: int
    J: int

    def to_dict(self) -> dict:
        out = asdict(self)
        out["singular_values"] = list(self.singular_values)
        return out


def error_report(M_hat, n: int, K: int, M_star=None) -> ErrorReport:
    """Audit a fitted matrix; the observed count ``n`` stands in for ``n*``."""
    M_hat = np.asarray(M_hat, dtype=float)
    N, J = M_hat.shape
    err = None if M_star is None else scaled_frobenius_error(M_hat, M_star)
    return ErrorReport(
        scaled_frobenius=err,
        singular_values=tuple(float(s) for s in singular_values(M_hat)),
        n_star_proxy=float(n),
        rate_bound_value=rate_bound(K, N, J, n),
        K=K, N=N, J=J,
    )


def error_scaling_study(family, K_star: int, sizes, p: float = 1.0, reps: int = 10,
                        seed: int = 0, phi: float = 1.0, C: float = 4.0,
                        config: FitConfig | None = None) -> list[dict]:
    """Mean scaled Frobenius error of oracle-K fits for each ``(N, J)``.

    ``p = 1`` means fully observed data, otherwise cells are observed
    independently with probability ``p``.
    """
    config = config or FitConfig()
    table = []
    for N, J in sizes:
        setting = SimSetting(
            family=family, N=N, J=J, K_star=K_star,
            missing=MissingScheme.NONE if p >= 1 else MissingScheme.UNIFORM,
            p=p, replications=reps, seed=seed, C=C, phi=phi,
        )
        errors, ns = [], []
        for rep in range(reps):
            rng = np.random.default_rng(seed ^ rep)
            _, M_star, obs = simulate_dataset(setting, rng)
            cfg = FitConfig(config.max_sweeps, config.rel_tol, config.inner_max_iter,
                            config.inner_tol, seed ^ rep)
            fit = fit_jml(obs, K_star, family, C, cfg)
            errors.append(scaled_frobenius_error(fit.M, M_star))
            ns.append(obs.n)
        n_star = p * N * J if p < 1 else float(N * J)
        table.append({
            "N": N, "J": J, "p": p, "reps": reps,
            "mean_error": float(np.mean(errors)),
            "sd_error": float(np.std(errors, ddof=1)) if reps > 1 else 0.0,
            "mean_n": float(np.mean(ns)),
            "rate_bound": rate_bound(K_star, N, J, n_star),
        })
    return table


def random_low_rank_pair(N: int, J: int, r: int, r_star: int, C: float, rng):
    """Two matrices ``G B^T`` whose factor rows all lie in the radius-``C`` ball."""

    def ball_rows(count, dim):
        v = rng.standard_normal((count, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * (C * rng.random((count, 1)) ** (1.0 / dim))

    M = ball_rows(N, r) @ ball_rows(J, r).T
    M_star = ball_rows(N, r_star) @ ball_rows(J, r_star).T
    return M, M_star


def hadamard_nuclear_check(M, M_star, C: float, r: int, r_star: int, tol: float = 1e-9):
    """Check ``||D o D||_* <= 2 C^2 sqrt(r + r*) ||D||_F`` for ``D = M - M*``.

    Returns ``(lhs, rhs, holds)``.
    """
    D = np.asarray(M, dtype=float) - np.asarray(M_star, dtype=float)
    lhs = float(np.sum(singular_values(D * D)))
    rhs = float(2.0 * C * C * math.sqrt(r + r_star) * np.linalg.norm(D))
    return lhs, rhs, lhs <= rhs + tol


def hadamard_audit(trials: int = 1000, N: int = 20, J: int = 20, r: int = 3,
                   r_star: int = 3, C: float = 2.0, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    violations = 0
    worst = 0.0
    for _ in range(trials):
        M, M_star = random_low_rank_pair(N, J, r, r_star, C, rng)
        lhs, rhs, holds = hadamard_nuclear_check(M, M_star, C, r, r_star)
        violations += not holds
        if rhs > 0:
            worst = max(worst, lhs / rhs)
    return {"trials": trials, "violations": violations, "max_ratio": worst}
