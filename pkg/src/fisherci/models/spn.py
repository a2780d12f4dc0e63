"""Signal plus non-identical noise: ``X_i ~ N(mu, Sigma + Q_i)``.

``Sigma`` is diagonal and the ``Q_i`` are known. The parameter vector is
``[mu_1..mu_q, Sigma_11..Sigma_qq]``. ``Dataset.meta`` holds the 1-based
observation index used to look up ``Q_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Dataset, FimKind, FimMatrix
from ..errors import DomainError, NotPositiveDefinite
from .base import Model

VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class SpnSpec:
    noise_covs: np.ndarray  # (n, q, q)

    def __post_init__(self):
        qs = np.asarray(self.noise_covs, dtype=float)
        if qs.ndim == 1:
            qs = qs[:, None, None]
        if qs.ndim != 3 or qs.shape[1] != qs.shape[2]:
            raise DomainError(f"noise covariances must have shape (n, q, q), got {qs.shape}")
        if not np.allclose(qs, np.swapaxes(qs, 1, 2), rtol=0, atol=1e-12):
            raise DomainError("noise covariances must be symmetric")
        if np.min(np.linalg.eigvalsh(qs)) < -1e-12:
            raise DomainError("noise covariances must be positive semidefinite")
        qs.setflags(write=False)
        object.__setattr__(self, "noise_covs", qs)

    @property
    def q(self) -> int:
        return self.noise_covs.shape[1]

    @property
    def size(self) -> int:
        return self.noise_covs.shape[0]

    def names(self) -> tuple[str, ...]:
        if self.q == 1:
            return ("mu", "sigma2")
        return tuple(f"mu{j + 1}" for j in range(self.q)) + tuple(
            f"Sigma{j + 1}{j + 1}" for j in range(self.q)
        )


SCHEDULES_1D = ("cyclic", "scaled")


def spn_noise_schedule_1d(n: int, scheme: str = "cyclic") -> np.ndarray:
    """Noise variances for ``i = 1..n``.

    ``cyclic``: ``q_i = 0.1 * (i mod 10)``, period 10 over {0, 0.1, .., 0.9}.
    ``scaled``: ``q_i = (0.1 * i) mod 10``, period 100 over {0, 0.1, .., 9.9}.
    """
    i = np.arange(1, n + 1)
    if scheme == "cyclic":
        return 0.1 * (i % 10)
    if scheme == "scaled":
        # integer arithmetic avoids rounding in the modulus
        return 0.1 * (i % 100)
    raise DomainError(f"unknown noise schedule {scheme!r}; expected one of {SCHEDULES_1D}")


def spn_noise_factor(seed, dim: int = 4, high: float = 0.1) -> np.ndarray:
    """The matrix ``U`` with iid Uniform(0, high) entries, drawn once per experiment."""
    return np.random.default_rng(seed).uniform(0.0, high, size=(dim, dim))


def spn_noise_schedule_4d(n: int, seed=None, u: np.ndarray = None) -> np.ndarray:
    """``Q_i = sqrt(i) * U U^T`` for ``i = 1..n``; ``U`` is drawn from ``seed``
    unless given explicitly."""
    if u is None:
        u = spn_noise_factor(seed)
    base = u @ u.T
    return np.sqrt(np.arange(1, n + 1))[:, None, None] * base


def _split(theta, q):
    theta = np.asarray(theta, dtype=float)
    if theta.size != 2 * q:
        raise DomainError(f"expected {2 * q} parameters, got {theta.size}")
    return theta[:q], theta[q:]


def _noise_for(data: Dataset, spec: SpnSpec):
    idx = np.asarray(data.meta, dtype=int) - 1
    if idx.min() < 0 or idx.max() >= spec.size:
        raise DomainError("observation index outside the noise schedule")
    return spec.noise_covs[idx]


def _inverse_covs(sig, qs):
    s = qs + np.diag(sig)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Sigma + Q_i is not positive definite") from exc
    chol_inv = np.linalg.inv(chol)
    s_inv = np.swapaxes(chol_inv, 1, 2) @ chol_inv
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    return s_inv, logdet


def _terms(data: Dataset, theta, spec: SpnSpec):
    mu, sig = _split(theta, spec.q)
    s_inv, logdet = _inverse_covs(sig, _noise_for(data, spec))
    r = data.observations - mu
    u = np.einsum("ijk,ik->ij", s_inv, r)
    return s_inv, logdet, r, u


def spn_sample(n: int, theta, spec: SpnSpec, seed) -> Dataset:
    mu, sig = _split(theta, spec.q)
    if np.any(sig <= 0):
        raise DomainError("Sigma diagonal must be positive")
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(spec.noise_covs[:n] + np.diag(sig))
    z = rng.standard_normal((n, spec.q))
    return Dataset(mu + np.einsum("ijk,ik->ij", chol, z))


def spn_nll(data: Dataset, theta, spec: SpnSpec) -> float:
    _, logdet, r, u = _terms(data, theta, spec)
    quad = np.einsum("ij,ij->i", r, u)
    return float(0.5 * np.sum(spec.q * np.log(2.0 * np.pi) + logdet + quad))


def _grad(s_inv, u):
    g_mu = -u.sum(axis=0)
    g_sig = 0.5 * (np.diagonal(s_inv, axis1=1, axis2=2) - u ** 2).sum(axis=0)
    return np.concatenate([g_mu, g_sig])


def spn_grad(data: Dataset, theta, spec: SpnSpec) -> np.ndarray:
    s_inv, _, _, u = _terms(data, theta, spec)
    return _grad(s_inv, u)


def spn_hessian(data: Dataset, theta, spec: SpnSpec) -> np.ndarray:
    s_inv, _, _, u = _terms(data, theta, spec)
    q = spec.q
    h = np.empty((2 * q, 2 * q))
    h[:q, :q] = s_inv.sum(axis=0)
    cross = (s_inv * u[:, None, :]).sum(axis=0)  # [j, k] = sum_i Sinv_jk u_k
    h[:q, q:] = cross
    h[q:, :q] = cross.T
    h[q:, q:] = (-0.5 * s_inv ** 2 + s_inv * u[:, :, None] * u[:, None, :]).sum(axis=0)
    return 0.5 * (h + h.T)


def spn_expected_fim(theta, spec: SpnSpec, n: int = None) -> FimMatrix:
    """Closed-form per-sample information for observations ``1..n``.

    The mean block is the average of ``(Sigma + Q_i)^-1``, the variance block
    is half the average of its squared entries and the cross block is zero.
    """
    n = spec.size if n is None else n
    _, sig = _split(theta, spec.q)
    s_inv, _ = _inverse_covs(sig, spec.noise_covs[:n])
    q = spec.q
    f = np.zeros((2 * q, 2 * q))
    f[:q, :q] = s_inv.mean(axis=0)
    f[q:, q:] = 0.5 * (s_inv ** 2).mean(axis=0)
    return FimMatrix(f, FimKind.EXPECTED, np.asarray(theta, float), n)


class SpnModel(Model):
    def __init__(self, spec: SpnSpec):
        self.spec = spec
        q = spec.q
        self.names = spec.names()
        self.lower = np.concatenate([np.full(q, -np.inf), np.zeros(q)])
        self.upper = np.full(2 * q, np.inf)
        self.log_space = np.concatenate([np.zeros(q, bool), np.ones(q, bool)])

    def nll(self, data, theta):
        return spn_nll(data, theta, self.spec)

    def grad(self, data, theta):
        return spn_grad(data, theta, self.spec)

    def nll_grad(self, data, theta):
        s_inv, logdet, r, u = _terms(data, theta, self.spec)
        quad = np.einsum("ij,ij->i", r, u)
        f = 0.5 * np.sum(self.spec.q * np.log(2.0 * np.pi) + logdet + quad)
        return float(f), _grad(s_inv, u)

    def hessian(self, data, theta):
        return spn_hessian(data, theta, self.spec)

    def expected_fim(self, theta, n):
        return spn_expected_fim(theta, self.spec, n)

    def sample(self, n, theta, seed):
        return spn_sample(n, theta, self.spec, seed)

    def project(self, theta):
        theta = np.array(theta, dtype=float)
        q = self.spec.q
        theta[q:] = np.maximum(theta[q:], VARIANCE_FLOOR)
        return theta

    def at_boundary(self, theta):
        return bool(np.any(np.asarray(theta)[self.spec.q:] <= VARIANCE_FLOOR))
