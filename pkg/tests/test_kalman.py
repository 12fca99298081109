import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypoell.suites import random_masked_pair
from hypoell.kalman import (
    gramian,
    gramian_quadrature,
    hypoellipticity_report,
    invariant_subspace_free,
    kalman_rank,
    nested_kernels,
)
from hypoell.operator_model import ConstantOperatorSpec, OperatorSpec, kolmogorov

Q_DEG = np.diag([1.0, 0.0])
B_KOL = np.array([[0.0, 0.0], [1.0, 0.0]])


def kol_closed_form(t):
    return np.array([[t, t**2 / 2], [t**2 / 2, t**3 / 3]])


def test_kalman_rank_examples():
    r = kalman_rank(Q_DEG, B_KOL, 5)
    assert (r.rank, r.holds, r.r_used) == (2, True, 1)
    r = kalman_rank(np.eye(3), np.ones((3, 3)), 4)
    assert (r.rank, r.r_used, r.holds) == (3, 0, True)
    r = kalman_rank(Q_DEG, np.eye(2), 5)
    assert (r.rank, r.holds) == (1, False)


def test_kalman_rank_dimension_mismatch():
    with pytest.raises(ValueError):
        kalman_rank(np.eye(2), np.eye(3), 1)


@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0])
def test_gramian_kolmogorov_closed_form(t):
    g = gramian(Q_DEG, B_KOL, t)
    ref = kol_closed_form(t)
    assert np.linalg.norm(g - ref) / np.linalg.norm(ref) < 1e-8


def test_gramian_trivial_cases():
    np.testing.assert_allclose(gramian(np.eye(3), np.zeros((3, 3)), 0.7), 0.7 * np.eye(3), rtol=1e-10)
    assert np.max(np.abs(gramian(Q_DEG, B_KOL, 1e-9))) < 1e-8
    with pytest.raises(ValueError):
        gramian(Q_DEG, B_KOL, 0.0)


def test_gramian_matches_quadrature(rng):
    for _ in range(40):
        q, b = random_masked_pair(rng)
        t = float(rng.uniform(0.05, 2.0))
        g = gramian(q, b, t)
        ref = gramian_quadrature(q, b, t)
        scale = max(np.linalg.norm(ref), 1e-300)
        assert np.linalg.norm(g - ref) <= 1e-6 * scale + 1e-14


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.5), st.floats(0.01, 0.5))
def test_gramian_monotone(seed, t1, dt):
    q, b = random_masked_pair(np.random.default_rng(seed), 4)
    diff = gramian(q, b, t1 + dt) - gramian(q, b, t1)
    assert np.linalg.eigvalsh(diff)[0] >= -1e-9 * max(1.0, np.abs(diff).max())


def test_nested_kernels_examples():
    nk = nested_kernels(Q_DEG, B_KOL)
    assert nk.dims == [1, 0] and nk.k0 == 2
    nk = nested_kernels(np.eye(3), np.zeros((3, 3)))
    assert nk.dims == [0, 0, 0] and nk.k0 == 1
    nk = nested_kernels(Q_DEG, np.eye(2))
    assert nk.dims == [1, 1] and nk.k0 is None


def test_invariant_subspace_examples():
    assert invariant_subspace_free(Q_DEG, B_KOL)
    assert not invariant_subspace_free(Q_DEG, np.diag([2.0, -1.0]))
    assert invariant_subspace_free(np.eye(2), np.ones((2, 2)))


def test_report_kolmogorov():
    rep = hypoellipticity_report(kolmogorov(2), [0.1, 1.0])
    assert rep.flags == (True,) * 5 and rep.consistent and rep.hypoelliptic
    assert "consistent: True" in rep.to_text()
    assert rep.to_record()["nested_kernel_k0"] == 2


def test_report_degenerate_pair():
    rep = hypoellipticity_report(ConstantOperatorSpec(2, Q_DEG, np.eye(2)), [0.1, 1.0])
    assert rep.flags == (False,) * 5 and rep.consistent and not rep.hypoelliptic


def test_report_nondegenerate():
    rep = hypoellipticity_report(ConstantOperatorSpec(3, np.eye(3), np.zeros((3, 3))), [0.5])
    assert rep.flags == (True,) * 5 and rep.consistent


def test_report_x_dependent_kernel_check():
    spec = OperatorSpec(2, 1, B_KOL, lambda x: np.array([[1.0 + x[0] ** 2]]), nu_floor=1.0)
    rep = hypoellipticity_report(spec, [0.5], sample_points=[np.zeros(2), np.ones(2)])
    assert rep.kernel_constant and rep.hypoelliptic


def test_report_requires_probe_times():
    with pytest.raises(ValueError):
        hypoellipticity_report(kolmogorov(2), [])


def test_characterizations_agree_on_random_pairs(rng):
    n_true = 0
    for _ in range(500):
        q, b = random_masked_pair(rng)
        rep = hypoellipticity_report(ConstantOperatorSpec(q.shape[0], q, b), [0.1, 1.0])
        assert rep.consistent, (q, b, rep.flags)
        n_true += rep.hypoelliptic
    # both outcomes must be represented for the agreement to mean something
    assert 50 < n_true < 450
