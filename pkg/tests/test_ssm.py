import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from fisherci.core import Dataset, FimKind
from fisherci.errors import DomainError, FilterDivergence
from fisherci.estimation import fd_gradient, fd_jacobian
from fisherci.models.ssm import (
    SsmModel,
    SsmSpec,
    kalman_filter,
    ssm_expected_fim,
    ssm_grad,
    ssm_hessian,
    ssm_hessian_batch,
    ssm_nll,
    ssm_sample,
)
from oracles import batch_series, dense_ssm_loglik, random_ssm_case

SPEC = SsmSpec.third_order_example()
THETA = np.array([1.0, 1.0, 1.0])
qs = st.tuples(*[st.floats(0.25, 4.0)] * 3).map(np.array)


def test_spec_validation():
    with pytest.raises(DomainError):
        SsmSpec(np.eye(2), [[1.0, 0.0]], [[0.0]], [0.0, 0.0], np.zeros((2, 2)))
    with pytest.raises(DomainError):
        SsmSpec(np.eye(2), [[1.0, 0.0, 0.0]], [[1.0]], [0.0, 0.0], np.zeros((2, 2)))
    assert SPEC.l == 3 and SPEC.m == 1


def test_sample_without_process_noise():
    y = ssm_sample(500, [0.0, 0.0, 0.0], SPEC, 3).observations[:, 0]
    assert abs(y.mean()) < 0.15 and abs(y.var() - 1.0) < 0.15
    assert np.array_equal(y, ssm_sample(500, [0.0, 0.0, 0.0], SPEC, 3).observations[:, 0])


def test_sample_stationary_variance_lyapunov():
    sigma = linalg.solve_discrete_lyapunov(SPEC.A, np.diag(THETA))
    target = float(SPEC.C[0] @ sigma @ SPEC.C[0] + SPEC.R[0, 0])
    ys = batch_series(400, THETA, SPEC, range(300))[200:]
    assert ys.var() == pytest.approx(target, rel=0.05)


def test_filter_without_process_noise():
    y = ssm_sample(30, THETA, SPEC, 1)
    tr = kalman_filter(y, [0.0, 0.0, 0.0], SPEC)
    assert np.allclose(tr.predicted_covs, 0.0)
    assert np.allclose(tr.innovation_covs, 1.0)
    yy = y.observations[:, 0]
    assert tr.loglik == pytest.approx(-0.5 * np.sum(np.log(2 * np.pi) + yy ** 2), rel=1e-14)


def test_filter_matches_dense_gaussian():
    rng = np.random.default_rng(20211)
    worst = 0.0
    for _ in range(100):
        spec, q, y = random_ssm_case(rng)
        worst = max(worst, abs(kalman_filter(y, q, spec).loglik - dense_ssm_loglik(y, q, spec)))
    assert worst < 1e-8


def test_nll_is_negative_loglik():
    y = ssm_sample(50, THETA, SPEC, 2)
    q = np.array([0.5, 2.0, 1.3])
    assert ssm_nll(y, q, SPEC) == pytest.approx(-kalman_filter(y, q, SPEC).loglik, rel=1e-13)
    assert ssm_nll(y, q, SPEC) == pytest.approx(-dense_ssm_loglik(y.observations, q, SPEC), rel=1e-12)


def test_filter_covariances():
    y = ssm_sample(50, THETA, SPEC, 5)
    tr = kalman_filter(y, [0.3, 2.0, 1.0], SPEC)
    for pp, pf in zip(tr.predicted_covs, tr.filtered_covs):
        assert np.array_equal(pf, pf.T)
        assert np.linalg.eigvalsh(pf)[0] > -1e-12
        assert np.linalg.eigvalsh(pp - pf)[0] > -1e-12
    joseph = kalman_filter(y, [0.3, 2.0, 1.0], SPEC, joseph=True)
    assert joseph.loglik == pytest.approx(tr.loglik, rel=1e-12)


def test_filter_divergence():
    y = ssm_sample(10, THETA, SPEC, 0)
    with pytest.raises(FilterDivergence):
        kalman_filter(y, [-5.0, 1.0, 1.0], SPEC)
    with pytest.raises(FilterDivergence):
        ssm_nll(y, [-5.0, 1.0, 1.0], SPEC)


@given(q=qs, seed=st.integers(0, 10**6))
@settings(max_examples=30)
def test_gradient_matches_finite_differences(q, seed):
    y = ssm_sample(60, q, SPEC, seed)
    g = ssm_grad(y, q, SPEC)
    fd = fd_gradient(lambda t: ssm_nll(y, t, SPEC), q, 1e-5)
    assert np.all(np.abs(g - fd) < 1e-5 * (1 + np.abs(g)))


@given(q=qs, seed=st.integers(0, 10**6))
@settings(max_examples=30)
def test_hessian_matches_finite_differences(q, seed):
    y = ssm_sample(60, q, SPEC, seed)
    h = ssm_hessian(y, q, SPEC)
    fd = fd_jacobian(lambda t: ssm_grad(y, t, SPEC), q, 1e-5)
    assert np.array_equal(h, h.T)
    assert np.max(np.abs(h - fd)) / np.max(np.abs(fd)) < 1e-4


def test_batch_hessian_matches_single():
    ys = batch_series(40, THETA, SPEC, range(5))
    hb = ssm_hessian_batch(ys, THETA, SPEC)
    for b in range(5):
        assert np.allclose(hb[b], ssm_hessian(Dataset(ys[:, b]), THETA, SPEC), rtol=1e-12, atol=0)


def test_expected_fim_properties():
    f = ssm_expected_fim(THETA, SPEC, 50)
    assert f.kind is FimKind.EXPECTED and f.sample_size == 50
    assert np.array_equal(f.entries, f.entries.T)
    assert np.linalg.eigvalsh(f.entries)[0] > 0
    assert np.array_equal(f.entries, ssm_expected_fim(THETA, SPEC, 50).entries)


def test_expected_fim_continuous_and_decreasing_in_scale():
    cs = np.linspace(0.5, 2.0, 31)
    fs = np.array([ssm_expected_fim(c * THETA, SPEC, 50).entries for c in cs])
    diag = np.diagonal(fs, axis1=1, axis2=2)
    assert np.all(np.diff(diag, axis=0) < 0)
    # jumps shrink in proportion to the grid spacing
    fine = np.array([ssm_expected_fim(c * THETA, SPEC, 50).entries for c in np.linspace(0.5, 2.0, 61)])
    assert np.abs(np.diff(fine, axis=0)).max() < 0.6 * np.abs(np.diff(fs, axis=0)).max()


def test_expected_fim_monte_carlo_small():
    reps = 4000
    ys = batch_series(50, THETA, SPEC, range(10**6, 10**6 + reps))
    hs = ssm_hessian_batch(ys, THETA, SPEC) / 50
    mean = hs.mean(axis=0)
    se = hs.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(mean - ssm_expected_fim(THETA, SPEC, 50).entries) <= 3 * se)


def test_model_bounds():
    m = SsmModel()
    assert m.names == ("q11", "q22", "q33")
    assert np.all(m.project([-1.0, 0.5, 2.0]) >= m.positive_floor)
    assert m.at_boundary(m.project([-1.0, 0.5, 2.0]))
    assert not m.at_boundary(THETA)
