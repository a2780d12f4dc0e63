"""Linear Gaussian state-space model with unknown diagonal process noise.

    x_t = A x_{t-1} + w_t,   w_t ~ N(0, diag(q))
    y_t = C x_t + v_t,       v_t ~ N(0, R)
    x_0 ~ N(mu0, P0)

The likelihood is evaluated with the Kalman filter in innovations form. For
scalar observations the first and second derivatives with respect to ``q``
are propagated alongside the filter. The covariance-side quantities
(``P``, ``S``, ``K`` and their derivatives) do not depend on the data, so they
are computed once per parameter value and the data-side recursion can run on
a batch of series at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Dataset, FimKind, FimMatrix
from ..errors import DomainError, FilterDivergence
from .base import Model

LOG_2PI = np.log(2.0 * np.pi)
Q_FLOOR = 1e-6
STEADY_TOL = 4.0 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class SsmSpec:
    A: np.ndarray
    C: np.ndarray
    R: np.ndarray
    mu0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        mu0 = np.asarray(self.mu0, dtype=float).reshape(-1)
        P0 = np.atleast_2d(np.asarray(self.P0, dtype=float))
        l, m = A.shape[0], C.shape[0]
        if A.shape != (l, l) or C.shape != (m, l) or R.shape != (m, m):
            raise DomainError("inconsistent A, C, R shapes")
        if mu0.shape != (l,) or P0.shape != (l, l):
            raise DomainError("inconsistent mu0, P0 shapes")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R)[0] <= 0:
            raise DomainError("R must be symmetric positive definite")
        if not np.allclose(P0, P0.T) or np.linalg.eigvalsh(P0)[0] < -1e-12:
            raise DomainError("P0 must be symmetric positive semidefinite")
        for name, arr in (("A", A), ("C", C), ("R", R), ("mu0", mu0), ("P0", P0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def l(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @classmethod
    def third_order_example(cls) -> "SsmSpec":
        """Third-order system observed through its first state with unit noise."""
        return cls(
            A=[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.8, 0.8, -0.8]],
            C=[[1.0, 0.0, 0.0]],
            R=[[1.0]],
            mu0=[0.0, 0.0, 0.0],
            P0=np.zeros((3, 3)),
        )


@dataclass(frozen=True, eq=False)
class FilterTrace:
    innovations: np.ndarray  # (n, m)
    innovation_covs: np.ndarray  # (n, m, m)
    gains: np.ndarray  # (n, l, m)
    predicted_covs: np.ndarray  # (n, l, l)
    filtered_covs: np.ndarray  # (n, l, l)
    predicted_states: np.ndarray  # (n, l)
    filtered_states: np.ndarray  # (n, l)
    loglik: float


def _q(theta, spec):
    q = np.asarray(theta, dtype=float).reshape(-1)
    if q.size != spec.l:
        raise DomainError(f"expected {spec.l} process-noise variances, got {q.size}")
    return q


def _series(y):
    if isinstance(y, Dataset):
        return y.observations
    y = np.asarray(y, dtype=float)
    return y[:, None] if y.ndim == 1 else y


def ssm_sample(n: int, theta, spec: SsmSpec, seed) -> Dataset:
    q = _q(theta, spec)
    if np.any(q < 0):
        raise DomainError("process-noise variances must be non-negative")
    rng = np.random.default_rng(seed)
    w0, v0 = np.linalg.eigh(spec.P0)
    x = spec.mu0 + v0 @ (np.sqrt(np.clip(w0, 0.0, None)) * rng.standard_normal(spec.l))
    r_chol = np.linalg.cholesky(spec.R)
    w = rng.standard_normal((n, spec.l)) * np.sqrt(q)
    v = rng.standard_normal((n, spec.m)) @ r_chol.T
    y = np.empty((n, spec.m))
    for t in range(n):
        x = spec.A @ x + w[t]
        y[t] = spec.C @ x + v[t]
    return Dataset(y)


def kalman_filter(y, theta, spec: SsmSpec, joseph: bool = False) -> FilterTrace:
    """Run the filter and return every intermediate quantity.

    With ``joseph=True`` the filtered covariance uses the Joseph form
    ``(I - K C) P (I - K C)^T + K R K^T`` instead of ``P - K C P``.
    """
    y = _series(y)
    q = _q(theta, spec)
    A, C, R = spec.A, spec.C, spec.R
    n, m, l = y.shape[0], spec.m, spec.l
    Q = np.diag(q)
    eye = np.eye(l)
    x, P = spec.mu0.copy(), spec.P0.copy()
    out = {k: [] for k in ("eps", "S", "K", "Pp", "Pf", "xp", "xf")}
    loglik = 0.0
    for t in range(n):
        xp = A @ x
        Pp = A @ P @ A.T + Q
        Pp = 0.5 * (Pp + Pp.T)
        S = C @ Pp @ C.T + R
        S = 0.5 * (S + S.T)
        try:
            S_chol = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise FilterDivergence(f"innovation covariance not positive definite at t={t + 1}") from exc
        K = np.linalg.solve(S, C @ Pp).T
        eps = y[t] - C @ xp
        x = xp + K @ eps
        if joseph:
            IKC = eye - K @ C
            P = IKC @ Pp @ IKC.T + K @ R @ K.T
        else:
            P = Pp - K @ C @ Pp
        P = 0.5 * (P + P.T)
        white = np.linalg.solve(S_chol, eps)
        loglik -= 0.5 * (m * LOG_2PI + 2.0 * np.log(np.diag(S_chol)).sum() + white @ white)
        for key, val in (("eps", eps), ("S", S), ("K", K), ("Pp", Pp), ("Pf", P), ("xp", xp), ("xf", x)):
            out[key].append(val)
    return FilterTrace(
        innovations=np.array(out["eps"]).reshape(n, m),
        innovation_covs=np.array(out["S"]).reshape(n, m, m),
        gains=np.array(out["K"]).reshape(n, l, m),
        predicted_covs=np.array(out["Pp"]).reshape(n, l, l),
        filtered_covs=np.array(out["Pf"]).reshape(n, l, l),
        predicted_states=np.array(out["xp"]).reshape(n, l),
        filtered_states=np.array(out["xf"]).reshape(n, l),
        loglik=float(loglik),
    )


# --------------------------------------------------------------------------- #
# sensitivity recursions (scalar observations)
# --------------------------------------------------------------------------- #


def _require_scalar(spec):
    if spec.m != 1:
        raise NotImplementedError("derivative recursions are implemented for scalar observations only")


def _covariance_sensitivities(q, spec: SsmSpec, n: int, order: int):
    """Data-free part of the filter and its derivatives with respect to q.

    Returns S (n,), dS (n,p), d2S (n,p,p), k (n,l), dk (n,p,l), d2k (n,p,p,l);
    second-order arrays are None when ``order < 2``.
    """
    _require_scalar(spec)
    A, c, R = spec.A, spec.C[0], spec.R[0, 0]
    l = p = spec.l
    Q = np.diag(q)
    E = np.zeros((p, l, l))
    E[np.arange(p), np.arange(p), np.arange(p)] = 1.0

    S = np.empty(n)
    dS = np.empty((n, p))
    k = np.empty((n, l))
    dk = np.empty((n, p, l))
    second = order >= 2
    d2S = np.empty((n, p, p)) if second else None
    d2k = np.empty((n, p, p, l)) if second else None

    Pf = spec.P0.copy()
    dPf = np.zeros((p, l, l))
    d2Pf = np.zeros((p, p, l, l))
    At = A.T
    for t in range(n):
        Pf_old, d2Pf_old = Pf, d2Pf
        Pp = A @ Pf @ At + Q
        dPp = A @ dPf @ At + E
        pc = Pp @ c
        dpc = dPp @ c
        s = c @ pc + R
        if not s > 0.0:
            raise FilterDivergence(f"innovation variance {s!r} not positive at t={t + 1}")
        ds = dpc @ c
        kt = pc / s
        dkt = dpc / s - np.outer(ds, pc) / s ** 2
        S[t], dS[t], k[t], dk[t] = s, ds, kt, dkt

        Pf = Pp - np.outer(kt, pc)
        Pf = 0.5 * (Pf + Pf.T)
        dPf_new = dPp - dkt[:, :, None] * pc[None, None, :] - kt[None, :, None] * dpc[:, None, :]
        if second:
            d2Pp = A @ d2Pf @ At
            d2pc = d2Pp @ c
            d2s = d2pc @ c
            d2kt = (
                d2pc / s
                - (dpc[:, None, :] * ds[None, :, None] + dpc[None, :, :] * ds[:, None, None]) / s ** 2
                - pc[None, None, :] * d2s[:, :, None] / s ** 2
                + 2.0 * pc[None, None, :] * (ds[:, None] * ds[None, :])[:, :, None] / s ** 3
            )
            d2S[t], d2k[t] = d2s, d2kt
            d2Pf = (
                d2Pp
                - d2kt[..., :, None] * pc
                - dkt[:, None, :, None] * dpc[None, :, None, :]
                - dkt[None, :, :, None] * dpc[:, None, None, :]
                - kt[:, None] * d2pc[..., None, :]
            )
            d2Pf_new = 0.5 * (d2Pf + np.swapaxes(d2Pf, -1, -2))
        dPf_new = 0.5 * (dPf_new + np.swapaxes(dPf_new, -1, -2))
        steady = _stationary(Pf, Pf_old) and _stationary(dPf_new, dPf)
        if second:
            steady = steady and _stationary(d2Pf_new, d2Pf_old)
            d2Pf = d2Pf_new
        dPf = dPf_new
        if steady and t + 1 < n:
            # the Riccati recursion has reached its fixed point
            for arr in (S, dS, k, dk) + ((d2S, d2k) if second else ()):
                arr[t + 1:] = arr[t]
            break
    return S, dS, d2S, k, dk, d2k


def _stationary(new, old):
    return np.max(np.abs(new - old)) <= STEADY_TOL * max(1.0, np.max(np.abs(new)))


def _innovation_sensitivities(Y, spec: SsmSpec, k, dk, d2k):
    """Innovations and their derivatives for a batch of series Y of shape (n, B)."""
    A, c = spec.A, spec.C[0]
    n, B = Y.shape
    l = p = spec.l
    cA = c @ A
    second = d2k is not None

    eps = np.empty((n, B))
    deps = np.empty((n, p, B))
    d2eps = np.empty((n, p, p, B)) if second else None

    xf = np.repeat(spec.mu0[:, None], B, axis=1)
    dxf = np.zeros((p, l, B))
    d2xf = np.zeros((p, p, l, B)) if second else None
    for t in range(n):
        e = Y[t] - cA @ xf
        de = -(cA @ dxf)
        eps[t], deps[t] = e, de
        xf_new = A @ xf + k[t][:, None] * e
        dxf_new = A @ dxf + dk[t][:, :, None] * e + k[t][None, :, None] * de[:, None, :]
        if second:
            d2e = -(cA @ d2xf)
            d2eps[t] = d2e
            d2xf = (
                A @ d2xf
                + d2k[t][..., None] * e
                + dk[t][:, None, :, None] * de[None, :, None, :]
                + dk[t][None, :, :, None] * de[:, None, None, :]
                + k[t][:, None] * d2e[:, :, None, :]
            )
        xf, dxf = xf_new, dxf_new
    return eps, deps, d2eps


def _batch_derivatives(Y, theta, spec: SsmSpec, order: int):
    q = _q(theta, spec)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[0]
    S, dS, d2S, k, dk, d2k = _covariance_sensitivities(q, spec, n, order)
    eps, deps, d2eps = _innovation_sensitivities(Y, spec, k, dk, d2k if order >= 2 else None)

    inv_s = 1.0 / S
    nll = 0.5 * (n * LOG_2PI + np.log(S).sum() + (eps ** 2 * inv_s[:, None]).sum(axis=0))
    if order == 0:
        return nll, None, None
    # d/dq_i of 0.5*[log S + eps^2/S]
    grad = 0.5 * (
        (dS * inv_s[:, None]).sum(axis=0)[None, :]
        - np.einsum("tb,tp->bp", eps ** 2, dS * inv_s[:, None] ** 2)
        + 2.0 * np.einsum("tb,tpb->bp", eps * inv_s[:, None], deps)
    )
    if order == 1:
        return nll, grad, None
    s1, s2, s3 = inv_s, inv_s ** 2, inv_s ** 3
    dSdS = dS[:, :, None] * dS[:, None, :]
    logdet_part = (d2S * s1[:, None, None] - dSdS * s2[:, None, None]).sum(axis=0)
    e2 = eps ** 2
    eS = eps * s1[:, None]
    hess = (
        2.0 * np.einsum("tib,tjb->bij", deps * s1[:, None, None], deps)
        + 2.0 * np.einsum("tb,tijb->bij", eS, d2eps)
        - 2.0 * np.einsum("tib,tj->bij", deps * (eps * s2[:, None])[:, None, :], dS)
        - 2.0 * np.einsum("tjb,ti->bij", deps * (eps * s2[:, None])[:, None, :], dS)
        - np.einsum("tb,tij->bij", e2, d2S * s2[:, None, None])
        + 2.0 * np.einsum("tb,tij->bij", e2, dSdS * s3[:, None, None])
    )
    hess = 0.5 * (hess + logdet_part[None])
    hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
    return nll, grad, hess


def ssm_nll(data, theta, spec: SsmSpec) -> float:
    """Negative log-likelihood including the ``n/2 log(2 pi)`` constant."""
    if spec.m != 1:
        return -kalman_filter(data, theta, spec).loglik
    nll, _, _ = _batch_derivatives(_series(data), theta, spec, 0)
    return float(nll[0])


def ssm_grad(data, theta, spec: SsmSpec) -> np.ndarray:
    return _batch_derivatives(_series(data), theta, spec, 1)[1][0]


def ssm_hessian(data, theta, spec: SsmSpec) -> np.ndarray:
    return _batch_derivatives(_series(data), theta, spec, 2)[2][0]


def ssm_hessian_batch(Y, theta, spec: SsmSpec) -> np.ndarray:
    """Hessians of the negative log-likelihood for a batch of series, Y of shape (n, B)."""
    return _batch_derivatives(Y, theta, spec, 2)[2]


def ssm_expected_fim(theta, spec: SsmSpec, n: int) -> FimMatrix:
    """Per-sample expected information from the innovations representation.

    ``F_ij = n^-1 sum_t [ dS_i dS_j / (2 S^2) + E(deps_i deps_j) / S ]`` where
    the second moments of the innovation derivatives come from propagating the
    joint second-moment matrix of (true state, filtered state, filtered-state
    derivatives) through the filter's linear dynamics.
    """
    q = _q(theta, spec)
    S, dS, _, k, dk, _ = _covariance_sensitivities(q, spec, n, 1)
    A, c, R = spec.A, spec.C[0], spec.R[0, 0]
    l = p = spec.l
    cA = c @ A
    dim = l * (2 + p)

    mu0 = spec.mu0
    mm = np.outer(mu0, mu0)
    M2 = np.zeros((dim, dim))
    M2[:l, :l] = spec.P0 + mm
    M2[:l, l:2 * l] = mm
    M2[l:2 * l, :l] = mm
    M2[l:2 * l, l:2 * l] = mm
    noise = np.zeros((l + 1, l + 1))
    noise[:l, :l] = np.diag(q)
    noise[l, l] = R

    info = np.zeros((p, p))
    for t in range(n):
        # rows of the innovation-derivative map: deps_i = -cA d_i
        blocks = M2[2 * l:, 2 * l:].reshape(p, l, p, l)
        e_dd = np.einsum("a,iajb,b->ij", cA, blocks, cA)
        info += 0.5 * np.outer(dS[t], dS[t]) / S[t] ** 2 + e_dd / S[t]

        kt, dkt = k[t], dk[t]
        T = np.zeros((dim, dim))
        N = np.zeros((dim, l + 1))
        T[:l, :l] = A
        N[:l, :l] = np.eye(l)
        T[l:2 * l, :l] = np.outer(kt, cA)
        T[l:2 * l, l:2 * l] = A - np.outer(kt, cA)
        N[l:2 * l, :l] = np.outer(kt, c)
        N[l:2 * l, l] = kt
        for i in range(p):
            r = slice(2 * l + i * l, 2 * l + (i + 1) * l)
            T[r, :l] = np.outer(dkt[i], cA)
            T[r, l:2 * l] = -np.outer(dkt[i], cA)
            T[r, r] = A - np.outer(kt, cA)
            N[r, :l] = np.outer(dkt[i], c)
            N[r, l] = dkt[i]
        M2 = T @ M2 @ T.T + N @ noise @ N.T
        M2 = 0.5 * (M2 + M2.T)
    info /= n
    return FimMatrix(0.5 * (info + info.T), FimKind.EXPECTED, q, n)


class SsmModel(Model):
    def __init__(self, spec: SsmSpec = None):
        self.spec = SsmSpec.third_order_example() if spec is None else spec
        l = self.spec.l
        self.names = tuple(f"q{j + 1}{j + 1}" for j in range(l))
        self.lower = np.zeros(l)
        self.upper = np.full(l, np.inf)
        self.log_space = np.ones(l, dtype=bool)

    positive_floor = Q_FLOOR

    def nll(self, data, theta):
        return ssm_nll(data, theta, self.spec)

    def grad(self, data, theta):
        return ssm_grad(data, theta, self.spec)

    def nll_grad(self, data, theta):
        nll, grad, _ = _batch_derivatives(_series(data), theta, self.spec, 1)
        return float(nll[0]), grad[0]

    def hessian(self, data, theta):
        return ssm_hessian(data, theta, self.spec)

    def expected_fim(self, theta, n):
        return ssm_expected_fim(theta, self.spec, n)

    def sample(self, n, theta, seed):
        return ssm_sample(n, theta, self.spec, seed)

    def project(self, theta):
        return np.maximum(np.asarray(theta, dtype=float), Q_FLOOR)

    def at_boundary(self, theta):
        return bool(np.any(np.asarray(theta) <= Q_FLOOR * (1.0 + 1e-9)))
