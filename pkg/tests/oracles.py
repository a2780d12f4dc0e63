"""Independent reference computations shared by several test modules."""

import numpy as np
from scipy import stats

from fisherci.models.ssm import SsmSpec, ssm_sample


def dense_ssm_loglik(y, q, spec: SsmSpec) -> float:
    """Log-density of the stacked observations from their full joint covariance."""
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    n, m = y.shape
    A, C, R = spec.A, spec.C, spec.R
    l = spec.l
    Q = np.diag(q)
    # state means and covariances; cov(x_t, x_s) = A^(t-s) P_s for t >= s
    means, covs = [], []
    mean, P = spec.mu0, spec.P0
    for _ in range(n):
        mean = A @ mean
        P = A @ P @ A.T + Q
        means.append(mean)
        covs.append(P)
    big = np.zeros((n * m, n * m))
    for t in range(n):
        prop = np.eye(l)
        for s in range(t, -1, -1):
            block = C @ prop @ covs[s] @ C.T
            big[t * m:(t + 1) * m, s * m:(s + 1) * m] = block
            big[s * m:(s + 1) * m, t * m:(t + 1) * m] = block.T
            prop = prop @ A
        big[t * m:(t + 1) * m, t * m:(t + 1) * m] += R
    mu = np.concatenate([C @ mn for mn in means])
    return float(stats.multivariate_normal(mu, big).logpdf(y.reshape(-1)))


def random_ssm_case(rng):
    """A random stable system with random dimensions, n <= 50 and P0 PSD."""
    l = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    A = rng.normal(0, 1, (l, l))
    A *= rng.uniform(0.3, 0.95) / max(np.abs(np.linalg.eigvals(A)).max(), 1e-3)
    C = rng.normal(0, 1, (m, l))
    Rf = rng.normal(0, 1, (m, m))
    R = Rf @ Rf.T + 0.5 * np.eye(m)
    Pf = rng.normal(0, 1, (l, l))
    P0 = Pf @ Pf.T * rng.uniform(0, 1)
    spec = SsmSpec(A, C, R, rng.normal(0, 1, l), P0)
    q = rng.uniform(0.25, 4.0, l)
    n = int(rng.integers(1, 51))
    y = ssm_sample(n, q, spec, rng.integers(2**32)).observations
    return spec, q, y


def batch_series(n, q, spec, seeds):
    return np.stack([ssm_sample(n, q, spec, s).observations[:, 0] for s in seeds], axis=1)
