import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypoell.basis import BlockStructure
from hypoell.norms import (
    GridFunction,
    anisotropic_norm,
    holder_seminorm_axis_block,
    isotropic_norm,
)

KOL = BlockStructure.from_sizes((1, 1))
BOX = ((-np.pi, np.pi), (-np.pi, np.pi))


def grid(fun, box=BOX, n=41):
    return GridFunction.from_function(fun, box, (n,) * len(box))


def brute_quotient_1d(fun, lo, hi, s, n, floor):
    x = np.linspace(lo, hi, n)
    v = fun(x)
    d = np.abs(x[:, None] - x[None, :])
    ok = d >= floor
    return np.max(np.abs(v[:, None] - v[None, :])[ok] / d[ok] ** s)


def test_constant_function():
    g = grid(lambda p: np.full(len(p), -2.5))
    assert holder_seminorm_axis_block(g, KOL, 0, 0.5) == pytest.approx(2.5)
    assert anisotropic_norm(g, KOL, 0.5) == pytest.approx(5.0)
    assert isotropic_norm(g, 2) == pytest.approx(2.5)


def test_sin_block_zero_matches_dense_brute_force():
    g = grid(lambda p: np.sin(p[:, 0]), n=81)
    est = holder_seminorm_axis_block(g, KOL, 0, 0.5)
    h = g.spacing[0]
    brute = 1.0 + brute_quotient_1d(np.sin, -np.pi, np.pi, 0.5, 801, 2 * h)
    assert abs(est - brute) <= 0.05 * brute


def test_sin_block_one_is_sup_only():
    g = grid(lambda p: np.sin(p[:, 0]))
    assert holder_seminorm_axis_block(g, KOL, 1, 0.5) == pytest.approx(g.sup(), abs=1e-12)
    total = anisotropic_norm(g, KOL, 0.5)
    assert total == pytest.approx(holder_seminorm_axis_block(g, KOL, 0, 0.5) + g.sup())


def test_refinement_never_decreases():
    fun = lambda p: np.sin(p[:, 0]) * np.cos(0.5 * p[:, 1])
    coarse = grid(fun, n=21)
    fine = grid(fun, n=41)  # contains every coarse node
    for j in (0, 1):
        assert holder_seminorm_axis_block(fine, KOL, j, 0.7) >= holder_seminorm_axis_block(coarse, KOL, j, 0.7) - 1e-12


def test_lipschitz_ramp_finite_near_three():
    g = grid(lambda p: np.clip(p[:, 1], -1, 1), box=((-2, 2), (-2, 2)))
    val = anisotropic_norm(g, KOL, 2.9)
    assert np.isfinite(val) and val < 10


def test_isotropic_linear_ramp():
    a = 1.7
    g = grid(lambda p: a * p[:, 0], box=((-1, 1), (-1, 1)), n=21)
    assert isotropic_norm(g, 1) == pytest.approx(a + a, rel=1e-12)


def test_second_differences_exact_on_quadratics():
    q = lambda p: 0.3 * p[:, 0] ** 2 - p[:, 0] * p[:, 1] + 2 * p[:, 1] ** 2
    g = grid(q, box=((-1, 1), (-1, 1)), n=21)
    d = np.gradient(np.gradient(g.values, g.spacing[0], axis=0, edge_order=2), g.spacing[1], axis=1, edge_order=2)
    np.testing.assert_allclose(d, -1.0, atol=1e-10)
    sup_terms = 0.3 + 2 + 1  # |q| max on the box attained at corners
    assert isotropic_norm(g, 2) >= sup_terms


@pytest.mark.parametrize(
    "fun",
    [
        lambda p: np.sin(p[:, 0]),
        lambda p: np.sin(3 * p[:, 1]),
        lambda p: p[:, 1],
    ],
)
@pytest.mark.parametrize("theta", [0.3, 0.7])
def test_anisotropic_below_scaled_isotropic(fun, theta):
    g = grid(fun, box=((-2, 2), (-2, 2)))
    assert anisotropic_norm(g, KOL, theta) <= 2 * isotropic_norm(g, theta)


def test_scaled_isotropic_bound_counterexample():
    # quotients at distance < 1 grow when the exponent shrinks to theta/3
    g = grid(lambda p: np.exp(-np.sum(p * p, axis=1)), box=((-2, 2), (-2, 2)))
    assert anisotropic_norm(g, KOL, 0.3) > 2 * isotropic_norm(g, 0.3)


def test_theta_range_rejected():
    g = grid(lambda p: p[:, 0])
    for bad in (0.0, 3.0, -1.0):
        with pytest.raises(ValueError):
            holder_seminorm_axis_block(g, KOL, 0, bad)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridFunction(((0, 1),), (0.5,), np.zeros(2))
    with pytest.raises(ValueError):
        GridFunction(((0, 1),), (0.5,), np.array([0.0, np.nan, 1.0]))
    with pytest.raises(ValueError):
        GridFunction(((0, 1),) * 5, (0.5,) * 5, np.zeros((3,) * 5))


def test_binary_and_csv_round_trip(tmp_path):
    g = grid(lambda p: np.sin(p[:, 0]) + p[:, 1], box=((-1, 2), (0, 1)), n=7)
    assert np.array_equal(GridFunction.from_bytes(g.to_bytes()).values, g.values)
    g.save(tmp_path / "g.bin")
    g.save(tmp_path / "g.csv", fmt="csv")
    for name in ("g.bin", "g.csv"):
        back = GridFunction.load(tmp_path / name)
        assert back.box == g.box
        np.testing.assert_array_equal(back.values, g.values)
    raw = g.to_bytes()
    header = np.frombuffer(raw[: 8 * 9], dtype="<f8")
    assert header[0] == 2 and tuple(header[1:3]) == (7, 7)


def test_restrict_keeps_nodes():
    g = grid(lambda p: p[:, 0] + 10 * p[:, 1], box=((-2, 2), (-2, 2)), n=9)
    sub = g.restrict(((-1, 1), (0, 2)))
    assert sub.box == ((-1.0, 1.0), (0.0, 2.0))
    np.testing.assert_allclose(sub.values, g.values[2:7, 4:9])


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 0.95))
def test_scaling_is_linear(c, theta):
    base = grid(lambda p: np.cos(p[:, 0]) * np.sin(p[:, 1]), box=((-1, 1), (-1, 1)), n=15)
    scaled = base.with_values(c * base.values)
    assert anisotropic_norm(scaled, KOL, theta) == pytest.approx(abs(c) * anisotropic_norm(base, KOL, theta), abs=1e-12)
    assert isotropic_norm(scaled, theta) == pytest.approx(abs(c) * isotropic_norm(base, theta), abs=1e-12)
