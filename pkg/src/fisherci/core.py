"""Shared domain types and the confidence-interval / confidence-level math.

The confidence level of an interval built from a variance candidate ``x`` when
the true variance of the estimator is ``v_ref`` is

    pi(x) = 2 * Phi(z_{1 - alpha/2} * sqrt(x / v_ref)) - 1

so ``pi(v_ref) = 1 - alpha`` and ``pi`` increases with ``x``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .errors import DomainError, IllConditioned, NotPositiveDefinite

DEFAULT_ALPHA = 0.05
SYMMETRY_RTOL = 1e-10
RCOND_WARN = 1e-12


# --------------------------------------------------------------------------- #
# domain types
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Named parameter vector with open box constraints."""

    values: np.ndarray
    names: tuple[str, ...]
    lower_bounds: np.ndarray = None
    upper_bounds: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        p = values.size
        if p < 1:
            raise DomainError("parameter vector must have at least one component")
        names = tuple(self.names)
        if len(names) != p:
            raise DomainError(f"expected {p} names, got {len(names)}")
        if len(set(names)) != p:
            raise DomainError(f"parameter names are not unique: {names}")
        lo = np.full(p, -np.inf) if self.lower_bounds is None else np.asarray(self.lower_bounds, float)
        hi = np.full(p, np.inf) if self.upper_bounds is None else np.asarray(self.upper_bounds, float)
        if lo.shape != (p,) or hi.shape != (p,):
            raise DomainError("bounds must match the parameter dimension")
        bad = ~((lo < values) & (values < hi))
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise DomainError(
                f"{names[j]}={values[j]!r} outside ({lo[j]!r}, {hi[j]!r})"
            )
        for arr in (values, lo, hi):
            arr.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower_bounds", lo)
        object.__setattr__(self, "upper_bounds", hi)

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __repr__(self):
        body = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.names, self.values))
        return f"ParameterVector({body})"

    @property
    def p(self) -> int:
        return self.values.size

    def with_values(self, values) -> "ParameterVector":
        return ParameterVector(values, self.names, self.lower_bounds, self.upper_bounds)


@dataclass(frozen=True, eq=False)
class Dataset:
    """n observations of dimension q, stored as an (n, q) array.

    ``meta`` carries one opaque entry per observation (e.g. the index that
    selects a noise covariance for non-identically distributed models).
    """

    observations: np.ndarray
    meta: tuple = None

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2 or obs.shape[0] < 1 or obs.shape[1] < 1:
            raise DomainError(f"observations must be a non-empty (n, q) array, got shape {obs.shape}")
        obs.setflags(write=False)
        meta = tuple(range(1, obs.shape[0] + 1)) if self.meta is None else tuple(self.meta)
        if len(meta) != obs.shape[0]:
            raise DomainError("meta length must equal the number of observations")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "meta", meta)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def q(self) -> int:
        return self.observations.shape[1]


class FimKind(enum.Enum):
    OBSERVED = "observed"
    EXPECTED = "expected"


@dataclass(frozen=True, eq=False)
class FimMatrix:
    """Per-sample Fisher information (the total information divided by n)."""

    entries: np.ndarray
    kind: FimKind
    at_parameter: np.ndarray
    sample_size: int

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError(f"FIM must be square, got shape {m.shape}")
        scale = max(np.max(np.abs(m)), np.finfo(float).tiny)
        if np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * scale:
            raise DomainError("FIM is not symmetric")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "kind", FimKind(self.kind))
        object.__setattr__(self, "at_parameter", np.asarray(self.at_parameter, dtype=float))

    @property
    def p(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class ConfidenceInterval:
    component_index: int
    lower: float
    upper: float
    nominal_level: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise DomainError(f"lower {self.lower} exceeds upper {self.upper}")
        if not 0.0 < self.nominal_level < 1.0:
            raise DomainError(f"nominal level {self.nominal_level} not in (0, 1)")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class JointRegion:
    """Bonferroni product of componentwise intervals."""

    intervals: tuple[ConfidenceInterval, ...]
    total_alpha: float = field(default=None)

    def __post_init__(self):
        intervals = tuple(self.intervals)
        spent = sum(1.0 - ci.nominal_level for ci in intervals)
        total = spent if self.total_alpha is None else float(self.total_alpha)
        if abs(spent - total) > 1e-12:
            raise DomainError(f"interval levels spend alpha={spent!r}, expected {total!r}")
        object.__setattr__(self, "intervals", intervals)
        object.__setattr__(self, "total_alpha", total)

    def contains(self, point: Sequence[float]) -> bool:
        return all(ci.contains(point[ci.component_index]) for ci in self.intervals)


# --------------------------------------------------------------------------- #
# normal distribution
# --------------------------------------------------------------------------- #


def normal_cdf(x):
    return special.ndtr(x)


def normal_quantile(prob):
    prob = np.asarray(prob, dtype=float)
    if np.any((prob <= 0.0) | (prob >= 1.0)):
        raise DomainError("normal quantile requires a probability in (0, 1)")
    out = special.ndtri(prob)
    return float(out) if out.ndim == 0 else out


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha={alpha!r} not in (0, 1)")


def confidence_level(x, v_ref, alpha: float = DEFAULT_ALPHA):
    """Coverage of an interval built from variance ``x`` when the truth is ``v_ref``.

    Vectorized over ``x``. A non-positive ``x`` means the FIM inverse it came
    from was not positive definite, which is reported as a ``DomainError``.
    """
    _check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0.0)):
        raise DomainError("variance candidate must be positive")
    if not v_ref > 0.0:
        raise DomainError("reference variance must be positive")
    z = special.ndtri(1.0 - alpha / 2.0)
    out = 2.0 * special.ndtr(z * np.sqrt(x / v_ref)) - 1.0
    return float(out) if out.ndim == 0 else out


def confidence_interval(t_hat: float, var_est: float, n: int, alpha: float = DEFAULT_ALPHA,
                        component_index: int = 0) -> ConfidenceInterval:
    """Asymptotic interval ``t_hat +/- z_{1-alpha/2} sqrt(var_est / n)``."""
    _check_alpha(alpha)
    if not var_est > 0.0:
        raise DomainError("variance estimate must be positive")
    if n < 1:
        raise DomainError("n must be at least 1")
    half = special.ndtri(1.0 - alpha / 2.0) * np.sqrt(var_est / n)
    return ConfidenceInterval(component_index, t_hat - half, t_hat + half, 1.0 - alpha)


def bonferroni_split(alpha_total: float, p: int) -> np.ndarray:
    _check_alpha(alpha_total)
    if p < 1:
        raise DomainError("p must be at least 1")
    return np.full(p, alpha_total / p)


def joint_region(theta_hat, var_diag, n: int, alpha_total: float = DEFAULT_ALPHA) -> JointRegion:
    """Product of componentwise intervals with a uniform Bonferroni split."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    alphas = bonferroni_split(alpha_total, theta_hat.size)
    cis = tuple(
        confidence_interval(t, v, n, a, component_index=j)
        for j, (t, v, a) in enumerate(zip(theta_hat, np.asarray(var_diag, float), alphas))
    )
    return JointRegion(cis, alpha_total)


# --------------------------------------------------------------------------- #
# FIM inversion
# --------------------------------------------------------------------------- #


def invert_fim(fim, with_rcond: bool = False):
    """Inverse of a symmetric positive definite FIM via eigendecomposition.

    Raises ``NotPositiveDefinite`` when any eigenvalue is <= 0 and warns with
    ``IllConditioned`` when the reciprocal condition number is below 1e-12.
    """
    m = fim.entries if isinstance(fim, FimMatrix) else np.asarray(fim, dtype=float)
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if not np.all(np.isfinite(w)) or w[0] <= 0.0:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]!r} is not positive")
    rcond = w[0] / w[-1]
    if rcond < RCOND_WARN:
        warnings.warn(f"reciprocal condition number {rcond:.3e}", IllConditioned, stacklevel=2)
    inv = (v / w) @ v.T
    inv = 0.5 * (inv + inv.T)
    return (inv, rcond) if with_rcond else inv
