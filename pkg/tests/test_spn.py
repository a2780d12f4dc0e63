import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fisherci.core import Dataset
from fisherci.errors import DomainError, NotPositiveDefinite
from fisherci.estimation import fd_gradient, fd_jacobian
from fisherci.models.spn import (
    SpnModel,
    SpnSpec,
    spn_expected_fim,
    spn_grad,
    spn_hessian,
    spn_nll,
    spn_noise_factor,
    spn_noise_schedule_1d,
    spn_noise_schedule_4d,
    spn_sample,
)

SPEC1 = SpnSpec(spn_noise_schedule_1d(200))
SPEC4 = SpnSpec(spn_noise_schedule_4d(200, seed=5))


def test_schedule_1d_values():
    q = spn_noise_schedule_1d(25)
    assert q[9] == 0.0  # i = 10
    assert q[2] == pytest.approx(0.3)  # i = 3
    assert q[10] == pytest.approx(0.1)  # i = 11
    assert np.array_equal(q[:10], q[10:20])


def test_schedule_1d_scaled_variant():
    q = spn_noise_schedule_1d(201, "scaled")
    assert q[9] == pytest.approx(1.0)  # i = 10
    assert q[98] == pytest.approx(9.9)  # i = 99
    assert q[99] == 0.0  # i = 100
    assert np.array_equal(q[:100], q[100:200])
    with pytest.raises(DomainError):
        spn_noise_schedule_1d(5, "weekly")


def test_schedule_4d_scaling():
    qs = spn_noise_schedule_4d(9, seed=1)
    assert np.allclose(qs[3], 2.0 * qs[0], rtol=1e-15, atol=0)
    assert np.allclose(qs[8], 3.0 * qs[0], rtol=1e-15, atol=0)
    assert np.array_equal(qs, np.swapaxes(qs, 1, 2))
    assert np.min(np.linalg.eigvalsh(qs)) > -1e-15
    ranks = {np.linalg.matrix_rank(q) for q in qs}
    assert ranks == {np.linalg.matrix_rank(qs[0])}


def test_noise_factor_range_and_determinism():
    u = spn_noise_factor(3)
    assert u.shape == (4, 4) and u.min() >= 0 and u.max() < 0.1
    assert np.array_equal(u, spn_noise_factor(3))
    assert np.array_equal(spn_noise_schedule_4d(4, u=u), spn_noise_schedule_4d(4, seed=3))


def test_spec_validation():
    with pytest.raises(DomainError):
        SpnSpec(np.array([[[1.0, 0.5], [0.0, 1.0]]]))
    with pytest.raises(DomainError):
        SpnSpec(np.array([[[-1.0]]]))
    assert SPEC1.names() == ("mu", "sigma2")
    assert SPEC4.names()[0] == "mu1" and SPEC4.names()[-1] == "Sigma44"


def test_sample_zero_noise_is_iid():
    spec = SpnSpec(np.zeros(5000))
    x = spn_sample(5000, [1.0, 4.0], spec, 0).observations[:, 0]
    assert abs(x.mean() - 1.0) < 4 * 2.0 / np.sqrt(5000)
    assert abs(x.var() - 4.0) < 0.3


def test_sample_mean_lln():
    n = 10**6
    spec = SpnSpec(spn_noise_schedule_1d(n))
    x = spn_sample(n, [10.0, 10.0], spec, 9).observations[:, 0]
    se = np.sqrt((10.0 + spec.noise_covs[:, 0, 0]).mean() / n)
    assert abs(x.mean() - 10.0) < 3 * se


def test_sample_index_covariance():
    theta = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 2.0, 1.0])
    u = spn_noise_factor(0, high=1.0)
    spec = SpnSpec(spn_noise_schedule_4d(3, u=u))
    reps = np.stack([spn_sample(3, theta, spec, s).observations[2] for s in range(20000)])
    target = np.diag(theta[4:]) + spec.noise_covs[2]
    cov = np.cov(reps.T)
    # standard error of a sample covariance entry: sqrt((s_ii s_jj + s_ij^2) / N)
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target ** 2) / len(reps))
    assert np.all(np.abs(cov - target) < 4 * se)


def test_sample_deterministic():
    assert np.array_equal(spn_sample(50, [1.0, 2.0], SPEC1, 4).observations,
                          spn_sample(50, [1.0, 2.0], SPEC1, 4).observations)


def test_iid_reduction_gradient_zero_at_sample_mean():
    spec = SpnSpec(np.zeros(30))
    x = spn_sample(30, [2.0, 3.0], spec, 1)
    g = spn_grad(x, [x.observations.mean(), 3.0], spec)
    assert abs(g[0]) < 1e-12


@given(mu=st.floats(-5, 5), s2=st.floats(0.2, 20.0), seed=st.integers(0, 10**6))
@settings(max_examples=30)
def test_derivatives_1d(mu, s2, seed):
    theta = np.array([mu, s2])
    x = spn_sample(200, theta, SPEC1, seed)
    g = spn_grad(x, theta, SPEC1)
    assert np.max(np.abs(g - fd_gradient(lambda t: spn_nll(x, t, SPEC1), theta))) < 1e-6
    h = spn_hessian(x, theta, SPEC1)
    assert np.array_equal(h, h.T)
    assert np.max(np.abs(h - fd_jacobian(lambda t: spn_grad(x, t, SPEC1), theta))) < 1e-5


@given(seed=st.integers(0, 10**6))
@settings(max_examples=15)
def test_derivatives_4d(seed):
    rng = np.random.default_rng(seed)
    theta = np.concatenate([rng.normal(0, 1, 4), rng.uniform(0.5, 2.0, 4)])
    x = spn_sample(200, theta, SPEC4, seed)
    g = spn_grad(x, theta, SPEC4)
    assert np.max(np.abs(g - fd_gradient(lambda t: spn_nll(x, t, SPEC4), theta))) < 1e-6
    h = spn_hessian(x, theta, SPEC4)
    assert np.max(np.abs(h - fd_jacobian(lambda t: spn_grad(x, t, SPEC4), theta))) < 1e-5


def test_nll_direct_oracle():
    x = spn_sample(20, [0.5, 2.0], SPEC1, 3)
    v = 2.0 + SPEC1.noise_covs[:20, 0, 0]
    r = x.observations[:, 0] - 0.5
    direct = 0.5 * np.sum(np.log(2 * np.pi * v) + r ** 2 / v)
    assert spn_nll(x, [0.5, 2.0], SPEC1) == pytest.approx(direct, rel=1e-13)


def test_mean_hessian_is_data_independent():
    theta = [10.0, 10.0]
    expected = np.sum(1.0 / (10.0 + SPEC1.noise_covs[:, 0, 0]))
    for seed in range(3):
        x = spn_sample(200, theta, SPEC1, seed)
        assert spn_hessian(x, theta, SPEC1)[0, 0] == pytest.approx(expected, rel=1e-14)


def test_not_positive_definite():
    x = Dataset(np.zeros((3, 1)))
    with pytest.raises(NotPositiveDefinite):
        spn_nll(x, [0.0, -1.0], SpnSpec(np.zeros(3)))


def test_expected_fim_iid_closed_form():
    f = spn_expected_fim([1.0, 3.0], SpnSpec(np.zeros(10)))
    assert np.allclose(f.entries, np.diag([1 / 3.0, 1 / (2 * 9.0)]), rtol=1e-15, atol=0)


def test_expected_fim_block_diagonal():
    f = spn_expected_fim(np.r_[np.zeros(4), np.ones(4)], SPEC4).entries
    assert np.all(f[:4, 4:] == 0.0) and np.all(f[4:, :4] == 0.0)
    f1 = spn_expected_fim([10.0, 10.0], SPEC1).entries
    assert f1[0, 1] == 0.0 and f1[1, 0] == 0.0


def test_expected_fim_matches_observed_mean_entry():
    x = spn_sample(200, [10.0, 10.0], SPEC1, 0)
    m = SpnModel(SPEC1)
    assert m.expected_fim([10.0, 10.0], 200).entries[0, 0] == m.observed_fim(x, [10.0, 10.0]).entries[0, 0]


@given(seed=st.integers(0, 10**6))
@settings(max_examples=10)
def test_mean_blocks_coincide_exactly(seed):
    rng = np.random.default_rng(seed)
    theta = np.concatenate([rng.normal(0, 1, 4), rng.uniform(0.5, 2.0, 4)])
    m = SpnModel(SPEC4)
    x = m.sample(200, theta, seed)
    est = theta * (1 + 0.05 * rng.uniform(-1, 1, 8))
    h = m.observed_fim(x, est).entries
    f = m.expected_fim(est, 200).entries
    assert np.array_equal(h[:4, :4], f[:4, :4])


def test_expected_fim_monte_carlo():
    theta = np.array([10.0, 10.0])
    spec = SpnSpec(spn_noise_schedule_1d(100))
    m = SpnModel(spec)
    hs = np.stack([m.observed_fim(m.sample(100, theta, s), theta).entries for s in range(10**4)])
    mean = hs.mean(axis=0)
    se = hs.std(axis=0, ddof=1) / np.sqrt(len(hs))
    f = m.expected_fim(theta, 100).entries
    # the mean-mean entry is deterministic, so its standard error is zero
    assert mean[0, 0] == pytest.approx(f[0, 0], rel=1e-13)
    mask = se > 1e-12 * np.abs(f).max()
    assert np.all(np.abs(mean - f)[mask] <= 3 * se[mask])


def test_project_floor():
    m = SpnModel(SPEC1)
    assert m.project([1.0, -3.0])[1] == 1e-8
    assert m.at_boundary(m.project([1.0, -3.0]))
