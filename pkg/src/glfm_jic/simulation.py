"""Synthetic data generation and replication studies for JIC selection."""
from __future__ import annotations

import enum
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .estimator import FitConfig
from .model_core import FamilyKind, ObservationSet, ParameterSet, get_family, natural_params
from .selection import select_K

logger = logging.getLogger(__name__)

__all__ = [
    "MissingScheme",
    "SimSetting",
    "ReplicationOutcome",
    "StudySummary",
    "sample_ball_truncated_normal",
    "generate_truth",
    "generate_mask",
    "generate_data",
    "simulate_dataset",
    "run_replication",
    "run_study",
    "PRESET_SETTINGS",
    "preset_setting",
]

FACTOR_RADIUS = 2.0 * math.sqrt(2.0)
ITEM_RADIUS = 3.0
MAX_REJECTIONS = 10**6


class MissingScheme(str, enum.Enum):
    NONE = "none"
    UNIFORM = "uniform"
    NON_UNIFORM = "nonuniform"


@dataclass(frozen=True)
class SimSetting:
    family: str = "logistic"
    N: int = 1000
    J: int = 100
    K_star: int = 5
    missing: MissingScheme = MissingScheme.NONE
    p: float = 0.5
    replications: int = 100
    candidates: tuple = (4, 5, 6)
    seed: int = 0
    C: float = 4.0
    phi: float = 1.0
    rel_tol: float = 1e-4
    max_sweeps: int = 500

    def __post_init__(self):
        object.__setattr__(self, "family", get_family(self.family).name)
        object.__setattr__(self, "missing", MissingScheme(self.missing))
        object.__setattr__(self, "candidates", tuple(int(k) for k in self.candidates))
        if self.K_star < 1:
            raise ValueError("K_star must be at least 1")
        if self.missing is MissingScheme.UNIFORM and not 0 < self.p < 1:
            raise ValueError("uniform missingness needs 0 < p < 1")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")

    def fit_config(self, seed: int) -> FitConfig:
        return FitConfig(rel_tol=self.rel_tol, max_sweeps=self.max_sweeps, seed=seed)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["missing"] = self.missing.value
        out["candidates"] = list(self.candidates)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimSetting":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown simulation setting fields: {sorted(unknown)}")
        return cls(**data)


def sample_ball_truncated_normal(dim: int, radius: float, rng, size: int | None = None):
    """Standard normal vectors conditioned on ``|v| <= radius``, by rejection.

    With ``size`` given, returns a ``(size, dim)`` array of independent draws.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    count = 1 if size is None else int(size)
    out = np.empty((count, dim))
    filled = 0
    rejected = 0
    while filled < count:
        need = count - filled
        batch = rng.standard_normal((max(need, 16) * 2, dim))
        ok = np.sum(batch * batch, axis=1) <= radius * radius
        rejected += int((~ok).sum())
        take = batch[ok][:need]
        out[filled : filled + take.shape[0]] = take
        filled += take.shape[0]
        if rejected >= MAX_REJECTIONS * count and filled < count:
            raise ValueError(
                f"acceptance too low for dim={dim}, radius={radius}: {rejected} rejections"
            )
    return out[0] if size is None else out


def generate_truth(setting: SimSetting, rng) -> tuple[ParameterSet, np.ndarray]:
    """True scores in the radius-2*sqrt(2) ball, stacked item vectors in the radius-3 ball."""
    F = sample_ball_truncated_normal(setting.K_star, FACTOR_RADIUS, rng, size=setting.N)
    B = sample_ball_truncated_normal(setting.K_star + 1, ITEM_RADIUS, rng, size=setting.J)
    params = ParameterSet(F=F, A=B[:, 1:], d=B[:, 0], C=setting.C, phi=setting.phi)
    return params, natural_params(params)


def observation_probabilities(setting: SimSetting, F_star) -> np.ndarray:
    shape = (setting.N, setting.J)
    if setting.missing is MissingScheme.NONE:
        return np.ones(shape)
    if setting.missing is MissingScheme.UNIFORM:
        return np.full(shape, setting.p)
    F_star = np.asarray(F_star)
    return np.broadcast_to(expit(F_star[:, 0])[:, None], shape).copy()


def generate_mask(setting: SimSetting, F_star, rng) -> np.ndarray:
    if setting.missing is MissingScheme.NONE:
        return np.ones((setting.N, setting.J), dtype=bool)
    probs = observation_probabilities(setting, F_star)
    return rng.random(probs.shape) < probs


def generate_data(family, M_star, phi, mask, rng) -> ObservationSet:
    """Draw each observed cell from the family at its natural parameter."""
    family = get_family(family)
    M_star = np.asarray(M_star, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    r, c = np.nonzero(mask)
    m = M_star[r, c]
    if family.kind is FamilyKind.LOGISTIC:
        y = (rng.random(m.shape) < expit(m)).astype(float)
    elif family.kind is FamilyKind.POISSON:
        y = rng.poisson(np.exp(m)).astype(float)
    else:
        y = m + math.sqrt(phi) * rng.standard_normal(m.shape)
    return ObservationSet(M_star.shape[0], M_star.shape[1], r, c, y)


def simulate_dataset(setting: SimSetting, rng):
    truth, M_star = generate_truth(setting, rng)
    mask = generate_mask(setting, truth.F, rng)
    obs = generate_data(setting.family, M_star, setting.phi, mask, rng)
    return truth, M_star, obs


@dataclass(frozen=True)
class ReplicationOutcome:
    replication: int
    seed: int
    chosen_K: int | None
    n: int
    runtime: float
    error: str | None = None


@dataclass
class StudySummary:
    setting: SimSetting
    correct: int = 0
    under: int = 0
    over: int = 0
    failed: int = 0
    outcomes: list = field(default_factory=list)

    @property
    def replications(self) -> int:
        return self.correct + self.under + self.over + self.failed

    def to_dict(self, include_runtimes: bool = True) -> dict:
        outcomes = []
        for o in self.outcomes:
            row = asdict(o)
            if not include_runtimes:
                row.pop("runtime")
            outcomes.append(row)
        return {
            "setting": self.setting.to_dict(),
            "correct": self.correct,
            "under": self.under,
            "over": self.over,
            "failed": self.failed,
            "outcomes": outcomes,
        }


def run_replication(setting: SimSetting, rep: int) -> ReplicationOutcome:
    seed = setting.seed ^ rep
    start = time.perf_counter()
    try:
        rng = np.random.default_rng(seed)
        _, _, obs = simulate_dataset(setting, rng)
        result = select_K(obs, setting.candidates, setting.family, setting.C,
                          setting.fit_config(seed))
        chosen, err = result.chosen_K, None
        n = obs.n
    except Exception as exc:  # recorded per replication, never fatal to the study
        logger.warning("replication %d failed: %s", rep, exc)
        chosen, err, n = None, f"{type(exc).__name__}: {exc}", 0
    return ReplicationOutcome(rep, seed, chosen, n, time.perf_counter() - start, err)


def _tally(setting: SimSetting, outcomes) -> StudySummary:
    summary = StudySummary(setting=setting)
    for o in sorted(outcomes, key=lambda o: o.replication):
        summary.outcomes.append(o)
        if o.chosen_K is None:
            summary.failed += 1
        elif o.chosen_K == setting.K_star:
            summary.correct += 1
        elif o.chosen_K < setting.K_star:
            summary.under += 1
        else:
            summary.over += 1
    return summary


def run_study(setting: SimSetting, workers: int = 1) -> StudySummary:
    """Run every replication of a setting and count correct/under/over selections."""
    reps = range(setting.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_replication, [setting] * len(reps), reps))
    else:
        outcomes = [run_replication(setting, r) for r in reps]
    return _tally(setting, outcomes)


def _presets() -> dict:
    out = {}
    idx = 1
    for family in ("logistic", "poisson"):
        for N, J in ((1000, 100), (2000, 200)):
            for missing in (MissingScheme.NONE, MissingScheme.UNIFORM, MissingScheme.NON_UNIFORM):
                out[idx] = dict(family=family, N=N, J=J, K_star=5, missing=missing,
                                p=0.5, replications=100, candidates=(4, 5, 6), C=4.0)
                idx += 1
    return out


PRESET_SETTINGS = _presets()


def preset_setting(number: int, replications: int | None = None, seed: int = 0,
                   scale: float = 1.0) -> SimSetting:
    """One of the twelve simulation settings; ``scale`` shrinks N and J for desk runs."""
    if number not in PRESET_SETTINGS:
        raise ValueError(f"setting must be one of 1..12, got {number}")
    kw = dict(PRESET_SETTINGS[number])
    if replications is not None:
        kw["replications"] = replications
    if scale != 1.0:
        kw["N"] = max(int(round(kw["N"] * scale)), 10)
        kw["J"] = max(int(round(kw["J"] * scale)), 10)
    return SimSetting(seed=seed, **kw)
