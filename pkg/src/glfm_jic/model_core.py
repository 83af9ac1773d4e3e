"""Exponential-family specifications, parameters, observations and the joint
log-likelihood of a generalised latent factor model."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import expit, gammaln

__all__ = [
    "FamilyKind",
    "Family",
    "LOGISTIC",
    "POISSON",
    "GAUSSIAN",
    "get_family",
    "ParameterSet",
    "ObservationSet",
    "natural_params",
    "joint_log_likelihood",
    "cell_log_density",
]


class FamilyKind(str, enum.Enum):
    LOGISTIC = "logistic"
    POISSON = "poisson"
    GAUSSIAN = "gaussian"


def _check_finite(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("natural parameter must be finite")
    return x


@dataclass(frozen=True)
class Family:
    """Exponential family with cumulant function ``b`` and base measure ``c``.

    Logistic and Poisson have dispersion fixed at 1; the Gaussian dispersion
    is unknown and gets plugged in from the largest fitted model.
    """

    kind: FamilyKind

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def dispersion_known(self) -> bool:
        return self.kind is not FamilyKind.GAUSSIAN

    def b(self, x):
        x = _check_finite(x)
        if self.kind is FamilyKind.LOGISTIC:
            # max(x, 0) + log1p(exp(-|x|)) never overflows
            return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
        if self.kind is FamilyKind.POISSON:
            return np.exp(x)
        return 0.5 * x * x

    def b_prime(self, x):
        x = _check_finite(x)
        if self.kind is FamilyKind.LOGISTIC:
            return expit(x)
        if self.kind is FamilyKind.POISSON:
            return np.exp(x)
        return x

    def b_double_prime(self, x):
        x = _check_finite(x)
        if self.kind is FamilyKind.LOGISTIC:
            # evaluate on the negative side where 1 - p keeps full precision
            p = expit(-np.abs(x))
            return p * (1.0 - p)
        if self.kind is FamilyKind.POISSON:
            return np.exp(x)
        return np.ones_like(x)

    def c(self, y, phi: float = 1.0):
        y = np.asarray(y, dtype=float)
        if self.kind is FamilyKind.LOGISTIC:
            return np.zeros_like(y)
        if self.kind is FamilyKind.POISSON:
            return -gammaln(y + 1.0)
        return -y * y / (2.0 * phi) - 0.5 * math.log(2.0 * math.pi * phi)

    def validate_y(self, y) -> None:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError(f"{self.name}: observations must be finite")
        if self.kind is FamilyKind.LOGISTIC:
            if not np.all((y == 0.0) | (y == 1.0)):
                raise ValueError("logistic: observations must be 0 or 1")
        elif self.kind is FamilyKind.POISSON:
            if not np.all((y >= 0.0) & (y == np.floor(y))):
                raise ValueError("poisson: observations must be nonnegative integers")

    def _b_and_prime(self, x):
        """``(b(x), b'(x))`` without input checks, sharing one exponential."""
        if self.kind is FamilyKind.LOGISTIC:
            e = np.exp(-np.abs(x))
            inv = 1.0 / (1.0 + e)
            return np.maximum(x, 0.0) + np.log1p(e), np.where(x >= 0, inv, e * inv)
        if self.kind is FamilyKind.POISSON:
            e = np.exp(x)
            return e, e
        return 0.5 * x * x, x


LOGISTIC = Family(FamilyKind.LOGISTIC)
POISSON = Family(FamilyKind.POISSON)
GAUSSIAN = Family(FamilyKind.GAUSSIAN)


def get_family(family) -> Family:
    if isinstance(family, Family):
        return family
    return Family(FamilyKind(str(family).lower()))


@dataclass(frozen=True)
class ParameterSet:
    """Factor scores ``F`` (N x K), loadings ``A`` (J x K), intercepts ``d`` (J).

    ``C`` is the constraint radius and ``phi`` the dispersion.
    """

    F: np.ndarray
    A: np.ndarray
    d: np.ndarray
    C: float = 4.0
    phi: float = 1.0

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = np.asarray(self.d, dtype=float).ravel()
        if F.shape[1] != A.shape[1]:
            raise ValueError(f"F has {F.shape[1]} factors but A has {A.shape[1]}")
        if A.shape[0] != d.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but d has length {d.shape[0]}")
        if self.C <= 0 or self.phi <= 0:
            raise ValueError("C and phi must be positive")
        for name, arr in (("F", F), ("A", A), ("d", d)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def N(self) -> int:
        return self.F.shape[0]

    @property
    def J(self) -> int:
        return self.A.shape[0]

    @property
    def K(self) -> int:
        return self.F.shape[1]

    def is_feasible(self, atol: float = 1e-9) -> bool:
        row = np.sqrt(np.sum(self.F**2, axis=1) + 1.0)
        col = np.sqrt(self.d**2 + np.sum(self.A**2, axis=1))
        return bool(np.all(row <= self.C + atol) and np.all(col <= self.C + atol))


def natural_params(params: ParameterSet) -> np.ndarray:
    """Return the N x J matrix ``m_ij = d_j + A_j . F_i``."""
    return params.F @ params.A.T + params.d[None, :]


@dataclass(frozen=True)
class ObservationSet:
    """Observed cells of an N x J matrix stored as (row, col, value) triplets."""

    N: int
    J: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    _by_row: tuple = field(init=False, repr=False, compare=False)
    _by_col: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 1 or self.J < 1:
            raise ValueError("N and J must be positive")
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.N:
                raise ValueError("row index out of range")
            if cols.min() < 0 or cols.max() >= self.J:
                raise ValueError("column index out of range")
            flat = rows * self.J + cols
            if np.unique(flat).size != flat.size:
                uniq, counts = np.unique(flat, return_counts=True)
                i, j = divmod(int(uniq[counts > 1][0]), self.J)
                raise ValueError(f"duplicate observation at ({i}, {j})")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values must be finite")
        for name, arr in (("rows", rows), ("cols", cols), ("values", values)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        order_r = np.argsort(rows, kind="stable")
        order_c = np.argsort(cols, kind="stable")
        object.__setattr__(
            self, "_by_row", (order_r, np.searchsorted(rows[order_r], np.arange(self.N + 1)))
        )
        object.__setattr__(
            self, "_by_col", (order_c, np.searchsorted(cols[order_c], np.arange(self.J + 1)))
        )

    @classmethod
    def from_dense(cls, Y, mask=None) -> "ObservationSet":
        """Build from a dense matrix; NaN cells (or ``mask == False``) are missing."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2:
            raise ValueError("Y must be two-dimensional")
        observed = ~np.isnan(Y)
        if mask is not None:
            observed &= np.asarray(mask, dtype=bool)
        r, c = np.nonzero(observed)
        return cls(Y.shape[0], Y.shape[1], r, c, Y[r, c])

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N, self.J)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values observed in row ``i``."""
        order, ptr = self._by_row
        idx = order[ptr[i] : ptr[i + 1]]
        return self.cols[idx], self.values[idx]

    def col(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Row indices and values observed in column ``j``."""
        order, ptr = self._by_col
        idx = order[ptr[j] : ptr[j + 1]]
        return self.rows[idx], self.values[idx]

    @cached_property
    def mask(self) -> np.ndarray:
        out = np.zeros((self.N, self.J), dtype=bool)
        out[self.rows, self.cols] = True
        out.flags.writeable = False
        return out

    def to_dense(self, fill=np.nan) -> np.ndarray:
        out = np.full((self.N, self.J), fill, dtype=float)
        out[self.rows, self.cols] = self.values
        return out

    def subset(self, keep) -> "ObservationSet":
        keep = np.asarray(keep)
        return ObservationSet(
            self.N, self.J, self.rows[keep], self.cols[keep], self.values[keep]
        )


def cell_log_density(family, y, m, phi: float = 1.0):
    """Per-cell log density ``(y m - b(m)) / phi + c(y, phi)``."""
    family = get_family(family)
    return (np.asarray(y) * m - family.b(m)) / phi + family.c(y, phi)


def joint_log_likelihood(params: ParameterSet, obs: ObservationSet, family) -> float:
    """Sum of log densities over the observed cells."""
    family = get_family(family)
    if (params.N, params.J) != obs.shape:
        raise ValueError(
            f"parameter shape {(params.N, params.J)} does not match data {obs.shape}"
        )
    if obs.n == 0:
        return 0.0
    family.validate_y(obs.values)
    m = np.einsum("nk,nk->n", params.F[obs.rows], params.A[obs.cols]) + params.d[obs.cols]
    return float(np.sum(cell_log_density(family, obs.values, m, params.phi)))
