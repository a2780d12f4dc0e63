"""Two-component Gaussian mixture with a known common standard deviation.

Parameters are ordered ``[lam, mu1, mu2]`` where ``lam`` is the weight of the
first component::

    f(x) = lam * N(x; mu1, sigma^2) + (1 - lam) * N(x; mu2, sigma^2)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ..core import Dataset, FimKind, FimMatrix
from ..errors import DomainError, QuadratureNotConverged
from .base import Model

LAMBDA_FLOOR = 1e-6
QUAD_HALF_WIDTH = 8.0  # in units of sigma
QUAD_TOL = 1e-9
NAMES = ("lam", "mu1", "mu2")

_IU = np.triu_indices(3)


@dataclass(frozen=True)
class GaussMixSpec:
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")


def _unpack(theta):
    lam, mu1, mu2 = np.asarray(theta, dtype=float)
    if not 0.0 < lam < 1.0:
        raise DomainError(f"mixing weight {lam!r} not in (0, 1)")
    return lam, mu1, mu2


def _as_array(data):
    if isinstance(data, Dataset):
        return data.observations[:, 0]
    return np.atleast_1d(np.asarray(data, dtype=float))


def _pieces(x, theta, spec):
    """Log-density and component responsibilities, all via log-sum-exp."""
    lam, mu1, mu2 = _unpack(theta)
    s2 = spec.sigma ** 2
    c = -0.5 * np.log(2.0 * np.pi * s2)
    lf1 = c - (x - mu1) ** 2 / (2.0 * s2)
    lf2 = c - (x - mu2) ** 2 / (2.0 * s2)
    lf = np.logaddexp(np.log(lam) + lf1, np.log1p(-lam) + lf2)
    # r_k = f_k / f; lam*r1 + (1-lam)*r2 == 1
    r1 = np.exp(lf1 - lf)
    r2 = np.exp(lf2 - lf)
    a1 = (x - mu1) / s2
    a2 = (x - mu2) / s2
    return lf, r1, r2, a1, a2, lam, s2


def gm_logpdf(x, theta, spec: GaussMixSpec):
    return _pieces(np.asarray(x, dtype=float), theta, spec)[0]


def gm_density(x, theta, spec: GaussMixSpec):
    return np.exp(gm_logpdf(x, theta, spec))


def gm_sample(n: int, theta, spec: GaussMixSpec, seed) -> Dataset:
    lam, mu1, mu2 = np.asarray(theta, dtype=float)
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"mixing weight {lam!r} not in [0, 1]")
    rng = np.random.default_rng(seed)
    first = rng.random(n) < lam
    x = np.where(first, mu1, mu2) + spec.sigma * rng.standard_normal(n)
    return Dataset(x[:, None])


def gm_scores(x, theta, spec: GaussMixSpec) -> np.ndarray:
    """Per-observation gradient of log f, shape (n, 3)."""
    _, r1, r2, a1, a2, lam, _ = _pieces(np.atleast_1d(np.asarray(x, float)), theta, spec)
    return np.stack([r1 - r2, lam * r1 * a1, (1.0 - lam) * r2 * a2], axis=-1)


def gm_obs_hessians(x, theta, spec: GaussMixSpec) -> np.ndarray:
    """Per-observation Hessian of -log f, shape (n, 3, 3)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _, r1, r2, a1, a2, lam, s2 = _pieces(x, theta, spec)
    g = np.stack([r1 - r2, lam * r1 * a1, (1.0 - lam) * r2 * a2], axis=-1)
    # second derivatives of f, divided by f
    d = np.zeros(x.shape + (3, 3))
    d[:, 0, 1] = d[:, 1, 0] = r1 * a1
    d[:, 0, 2] = d[:, 2, 0] = -r2 * a2
    d[:, 1, 1] = lam * r1 * (a1 ** 2 - 1.0 / s2)
    d[:, 2, 2] = (1.0 - lam) * r2 * (a2 ** 2 - 1.0 / s2)
    return g[:, :, None] * g[:, None, :] - d


def gm_nll(data, theta, spec: GaussMixSpec) -> float:
    return float(-np.sum(gm_logpdf(_as_array(data), theta, spec)))


def gm_grad(data, theta, spec: GaussMixSpec) -> np.ndarray:
    return -gm_scores(_as_array(data), theta, spec).sum(axis=0)


def gm_hessian(data, theta, spec: GaussMixSpec) -> np.ndarray:
    h = gm_obs_hessians(_as_array(data), theta, spec).sum(axis=0)
    return 0.5 * (h + h.T)


def _quadrature(integrand, theta, spec):
    _, mu1, mu2 = _unpack(theta)
    lo = min(mu1, mu2) - QUAD_HALF_WIDTH * spec.sigma
    hi = max(mu1, mu2) + QUAD_HALF_WIDTH * spec.sigma
    pts = sorted({mu1, mu2})
    res, err, info = integrate.quad_vec(
        integrand, lo, hi, epsabs=QUAD_TOL, epsrel=0.0, points=pts, full_output=True
    )
    if not info.success or np.max(err) > QUAD_TOL:
        raise QuadratureNotConverged(f"quadrature error estimate {np.max(err):.3e} at theta={theta}")
    m = np.zeros((3, 3))
    m[_IU] = res
    return m + np.triu(m, 1).T


def gm_expected_fim(theta, spec: GaussMixSpec) -> FimMatrix:
    """Per-observation expected information: the density-weighted integral of
    the Hessian of -log f over the range of X."""

    def integrand(x):
        return (gm_obs_hessians(x, theta, spec)[0] * gm_density(x, theta, spec))[_IU]

    m = _quadrature(integrand, theta, spec)
    return FimMatrix(m, FimKind.EXPECTED, np.asarray(theta, float), 1)


def gm_score_outer_fim(theta, spec: GaussMixSpec) -> np.ndarray:
    """Expected information from the outer product of scores (information equality)."""

    def integrand(x):
        g = gm_scores(x, theta, spec)[0]
        return (np.outer(g, g) * gm_density(x, theta, spec))[_IU]

    return _quadrature(integrand, theta, spec)


class GaussMixModel(Model):
    names = NAMES
    lower = np.array([0.0, -np.inf, -np.inf])
    upper = np.array([1.0, np.inf, np.inf])
    log_space = np.array([False, False, False])

    def __init__(self, spec: GaussMixSpec = GaussMixSpec()):
        self.spec = spec

    def nll(self, data, theta):
        return gm_nll(data, theta, self.spec)

    def grad(self, data, theta):
        return gm_grad(data, theta, self.spec)

    def hessian(self, data, theta):
        return gm_hessian(data, theta, self.spec)

    def expected_fim(self, theta, n):
        f = gm_expected_fim(theta, self.spec)
        return FimMatrix(f.entries, FimKind.EXPECTED, f.at_parameter, n)

    def sample(self, n, theta, seed):
        return gm_sample(n, theta, self.spec, seed)

    def project(self, theta):
        theta = np.array(theta, dtype=float)
        theta[0] = np.clip(theta[0], LAMBDA_FLOOR, 1.0 - LAMBDA_FLOOR)
        return theta

    def at_boundary(self, theta):
        lam = theta[0]
        return lam <= LAMBDA_FLOOR or lam >= 1.0 - LAMBDA_FLOOR

    def canonicalize(self, theta):
        lam, mu1, mu2 = np.asarray(theta, dtype=float)
        if mu1 > mu2:
            return np.array([1.0 - lam, mu2, mu1]), True
        return np.array([lam, mu1, mu2]), False
