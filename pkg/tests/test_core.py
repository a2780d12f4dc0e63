import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spd
from fisherci.core import (
    ConfidenceInterval,
    Dataset,
    FimKind,
    FimMatrix,
    JointRegion,
    ParameterVector,
    bonferroni_split,
    confidence_interval,
    confidence_level,
    invert_fim,
    joint_region,
    normal_cdf,
    normal_quantile,
)
from fisherci.errors import DomainError, IllConditioned, NotPositiveDefinite

mpmath.mp.dps = 40


def mp_cdf(x):
    return float(mpmath.ncdf(mpmath.mpf(x)))


def mp_quantile(p):
    p = mpmath.mpf(p)
    return float(mpmath.findroot(lambda z: mpmath.ncdf(z) - p, mpmath.sqrt(2) * mpmath.erfinv(2 * p - 1)))


# normal functions against a 40-digit oracle

@pytest.mark.parametrize("x", [-8.0, -3.5, -1.0, -1e-3, 0.0, 0.5, 1.959963984540054, 3.0, 6.0])
def test_normal_cdf_matches_high_precision(x):
    assert abs(normal_cdf(x) - mp_cdf(x)) <= 1e-15


@pytest.mark.parametrize("p", [1e-10, 0.005, 0.025, 0.3, 0.5, 0.95, 0.975, 0.995, 1 - 1e-10])
def test_normal_quantile_matches_high_precision(p):
    z = mp_quantile(p)
    assert abs(normal_quantile(p) - z) <= 1e-12 * max(1.0, abs(z))


def test_normal_quantile_domain():
    with pytest.raises(DomainError):
        normal_quantile(0.0)
    with pytest.raises(DomainError):
        normal_quantile(1.0)


# confidence level

def test_level_at_reference_is_nominal():
    assert confidence_level(2.5, 2.5, 0.05) == pytest.approx(0.95, abs=1e-15)


def test_level_vanishes_for_tiny_variance():
    assert confidence_level(1e-300, 1.0, 0.05) < 1e-140


def test_level_four_times_reference():
    z = mpmath.sqrt(2) * mpmath.erfinv(mpmath.mpf("0.95"))
    expected = float(2 * mpmath.ncdf(2 * z) - 1)
    assert expected == pytest.approx(0.99991, abs=5e-6)
    assert abs(confidence_level(4.0, 1.0, 0.05) - expected) < 1e-14


@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.10])
@given(v=st.floats(1e-6, 1e6))
def test_level_fixed_point(alpha, v):
    assert abs(confidence_level(v, v, alpha) - (1.0 - alpha)) <= 1e-12


@given(
    x1=st.floats(1e-4, 1e4),
    factor=st.floats(1.0001, 100.0),
    v_ref=st.floats(1e-3, 1e3),
    alpha=st.floats(0.001, 0.5),
)
def test_level_strictly_increasing(x1, factor, v_ref, alpha):
    a = confidence_level(x1, v_ref, alpha)
    b = confidence_level(x1 * factor, v_ref, alpha)
    # strict in exact arithmetic; in doubles both can saturate at 1
    assert 0.0 < a <= b <= 1.0
    assert a < b or 1.0 - a <= 2.0 * np.finfo(float).eps


def test_level_monotone_on_grid():
    x = np.linspace(1e-3, 5.0, 1000)
    levels = confidence_level(x, 1.0, 0.05)
    assert np.all(np.diff(levels) > 0)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
def test_level_rejects_nonpositive_variance(bad):
    with pytest.raises(DomainError):
        confidence_level(bad, 1.0)


def test_level_rejects_bad_reference_and_alpha():
    with pytest.raises(DomainError):
        confidence_level(1.0, 0.0)
    with pytest.raises(DomainError):
        confidence_level(1.0, 1.0, alpha=1.0)


# intervals

def test_interval_half_width():
    ci = confidence_interval(0.0, 1.0, 100, 0.05)
    half = mp_quantile(0.975) / 10.0
    assert ci.lower == pytest.approx(-half, abs=1e-15)
    assert ci.upper == pytest.approx(half, abs=1e-15)
    assert round(ci.upper, 5) == 0.19600
    assert ci.nominal_level == 0.95


def test_interval_degenerates_with_variance():
    ci = confidence_interval(5.0, 1e-300, 10)
    assert ci.lower == pytest.approx(5.0) and ci.upper == pytest.approx(5.0)
    with pytest.raises(DomainError):
        confidence_interval(5.0, 0.0, 10)


def test_interval_nested_in_level():
    wide = confidence_interval(1.0, 2.0, 30, 0.01)
    narrow = confidence_interval(1.0, 2.0, 30, 0.05)
    assert wide.lower < narrow.lower and narrow.upper < wide.upper


@given(var=st.floats(1e-4, 1e4), alpha=st.floats(0.001, 0.5))
def test_interval_level_duality(var, alpha):
    ci = confidence_interval(0.0, var, 10, alpha)
    assert ci.nominal_level == pytest.approx(confidence_level(var, var, alpha), abs=1e-12)


def test_interval_type_invariants():
    with pytest.raises(DomainError):
        ConfidenceInterval(0, 1.0, 0.0, 0.95)
    with pytest.raises(DomainError):
        ConfidenceInterval(0, 0.0, 1.0, 1.0)


# Bonferroni

@pytest.mark.parametrize(
    "alpha, p, each",
    [(0.05, 5, 0.01), (0.05, 1, 0.05), (0.10, 3, 0.10 / 3)],
)
def test_bonferroni_split(alpha, p, each):
    split = bonferroni_split(alpha, p)
    assert split.shape == (p,)
    assert np.allclose(split, each, rtol=0, atol=1e-17)
    assert abs(split.sum() - alpha) <= 1e-15


@given(alpha=st.floats(1e-4, 0.5), p=st.integers(1, 50))
def test_bonferroni_sum(alpha, p):
    assert abs(bonferroni_split(alpha, p).sum() - alpha) <= 1e-15


@given(alpha=st.floats(1e-4, 0.5), p=st.integers(1, 10))
def test_joint_region_bookkeeping(alpha, p):
    region = joint_region(np.zeros(p), np.ones(p), 50, alpha)
    assert len(region.intervals) == p
    assert abs(sum(1 - ci.nominal_level for ci in region.intervals) - region.total_alpha) <= 1e-12
    assert region.contains(np.zeros(p))


def test_joint_region_rejects_inconsistent_alpha():
    ci = confidence_interval(0.0, 1.0, 10, 0.05)
    with pytest.raises(DomainError):
        JointRegion((ci, ci), 0.05)


# FIM inversion

def test_invert_identity_and_diagonal():
    assert np.array_equal(invert_fim(np.eye(4)), np.eye(4))
    assert np.allclose(invert_fim(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]), rtol=0, atol=1e-15)


def test_invert_residual(rng):
    for _ in range(20):
        m = random_spd(rng, 3, cond=1e3)
        assert np.linalg.norm(m @ invert_fim(m) - np.eye(3)) < 1e-10


@given(seed=st.integers(0, 2**32 - 1), p=st.integers(1, 6))
def test_double_inverse(seed, p):
    m = random_spd(np.random.default_rng(seed), p, cond=100.0)
    back = invert_fim(invert_fim(m))
    assert np.linalg.norm(back - m) <= 1e-8 * np.linalg.norm(m)


def test_invert_symmetric_output(rng):
    inv = invert_fim(random_spd(rng, 5))
    assert np.array_equal(inv, inv.T)


def test_invert_rejects_non_pd():
    with pytest.raises(NotPositiveDefinite):
        invert_fim(np.diag([1.0, 0.0]))
    with pytest.raises(NotPositiveDefinite):
        invert_fim(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_invert_warns_ill_conditioned():
    with pytest.warns(IllConditioned):
        inv, rcond = invert_fim(np.diag([1.0, 1e-13]), with_rcond=True)
    assert rcond == pytest.approx(1e-13)


# domain types

def test_parameter_vector_validation():
    pv = ParameterVector([0.5, 0.0], ("a", "b"), [0.0, -np.inf], [1.0, np.inf])
    assert pv.p == 2 and np.array_equal(np.asarray(pv), [0.5, 0.0])
    with pytest.raises(DomainError):
        ParameterVector([1.0], ("a",), [0.0], [1.0])
    with pytest.raises(DomainError):
        ParameterVector([1.0, 2.0], ("a", "a"))
    with pytest.raises(ValueError):
        pv.values[0] = 3.0


def test_dataset_defaults():
    d = Dataset(np.arange(3.0))
    assert d.observations.shape == (3, 1) and d.meta == (1, 2, 3) and d.n == 3
    with pytest.raises(DomainError):
        Dataset(np.zeros((2, 1)), meta=(1,))


def test_fim_matrix_symmetrizes_and_checks():
    m = np.array([[2.0, 1.0], [1.0 + 1e-13, 3.0]])
    f = FimMatrix(m, FimKind.OBSERVED, [0.0, 0.0], 10)
    assert np.array_equal(f.entries, f.entries.T)
    with pytest.raises(DomainError):
        FimMatrix(np.array([[1.0, 0.0], [1.0, 1.0]]), FimKind.EXPECTED, [0.0, 0.0], 1)
