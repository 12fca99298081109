from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypoell.basis import BlockStructure
from hypoell.exponents import (
    HalfInt,
    check_bernstein_params,
    choose_bernstein_params,
    choose_H,
    exponent_table_csv,
    iota_min,
    exponent_property_suite,
    q_eval,
    qh_eval,
)
from hypoell.multiindex import assemble_J, count, enumerate_ordered

block_indices = st.integers(0, 4).flatmap(lambda r: st.lists(st.integers(0, 4), min_size=r + 1, max_size=r + 1))


def test_halfint_arithmetic():
    a = HalfInt(3)
    assert a == Fraction(3, 2) and str(a) == "3/2"
    assert a + HalfInt(1) == 2 and a - 1 == HalfInt(1)
    assert 2 * a == 3 and -a < 0
    assert HalfInt.of(Fraction(5, 2)) == HalfInt(5)
    with pytest.raises(ValueError):
        HalfInt.of(Fraction(1, 3))
    with pytest.raises(TypeError):
        HalfInt(1.5)


def test_q_examples():
    assert q_eval((1, 0)) == Fraction(1, 2)
    assert q_eval((0, 1)) == Fraction(3, 2)
    assert q_eval((0, 0, 0)) == 0


def test_qh_examples():
    assert qh_eval((0, 2), 1) == Fraction(3, 2)
    assert qh_eval((1, 2, 0), 3) == 0
    assert qh_eval((0, 2), 0) == 3 and qh_eval((1, 1), 0) == 2


def test_q0_equals_q_exhaustive():
    for r in range(5):
        for k in range(7):
            for beta in enumerate_ordered(k, r):
                assert qh_eval(beta, 0) == q_eval(beta)


@settings(max_examples=200, deadline=None)
@given(block_indices, st.integers(0, 8))
def test_qh_lower_bound_and_monotone(beta, h):
    v = qh_eval(beta, h)
    assert v >= HalfInt(max(sum(beta) - h, 0))
    assert qh_eval(beta, h + 1) <= v
    assert (v == 0) == (sum(beta) <= h)


def test_exponent_property_suite_passes():
    res = exponent_property_suite(4, 6, 6)
    assert res.passed, res.to_text()
    assert all(r.checked > 0 for r in res.results)


def test_exponent_property_suite_detects_mutation():
    def broken(beta, h):
        v = qh_eval(beta, h)
        return v + HalfInt(1) if sum(beta) == h + 2 else v

    res = exponent_property_suite(2, 4, 3, qh=broken)
    assert not res.passed
    assert any(r.witness is not None for r in res.results)


def test_exponent_property_suite_bounds():
    with pytest.raises(ValueError):
        exponent_property_suite(-1, 3, 3)
    with pytest.raises(ValueError):
        exponent_property_suite(4, 6, 6, max_cases=10)


def test_exponent_csv():
    lines = exponent_table_csv(1, 1, 1).splitlines()
    assert lines[0] == "beta,h,q_h"
    assert "0 1,0,3/2" in lines and "0 1,1,0" in lines


@pytest.mark.parametrize("k,r", [(k, r) for k in range(1, 5) for r in range(0, 4)])
def test_bernstein_params_feasible(k, r):
    p = choose_bernstein_params(k, r)
    assert p.levels == list(range(1, k + 2))
    assert check_bernstein_params(p) == []
    for l in p.levels:
        assert all(isinstance(x, Fraction) for x in p.a[l])
        assert len(p.a[l]) == count(l, r)


def test_bernstein_checker_catches_violation():
    p = choose_bernstein_params(2, 1)
    p.a[2][1] = p.a[2][0] * Fraction(3, 4)
    assert check_bernstein_params(p)


def test_magnification_bound():
    p = choose_bernstein_params(1, 1)
    norms = {key: 3.0 for key in p.magnification.gaps}
    la = p.magnification.log_value(norms)
    gap = min(p.magnification.gaps.values())
    assert la == pytest.approx(np.log(6.0) / float(gap))
    assert p.magnification.admissible_log(1.01 * la, norms)
    assert not p.magnification.admissible_log(0.99 * la, norms)
    assert not p.magnification.admissible(1.0, norms)


def test_choose_H_examples():
    c = choose_H([[1.0]])
    np.testing.assert_allclose(c.h_mat, [[-1.0]])
    assert c.iota == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        choose_H(np.zeros((2, 1)))


def test_choose_H_on_assembled_J():
    st_ = BlockStructure.from_sizes((2, 2, 1))
    rng = np.random.default_rng(1)
    b = rng.normal(size=(5, 5))
    b[4, :2] = 0.0
    choices = []
    for l in range(1, 4):
        for m in range(count(l - 1, 2) + 1, count(l, 2) + 1):
            choices.append(choose_H(assemble_J(l, m, st_, b).j_m))
    assert iota_min(choices) >= 2 - 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_choose_H_random(cols, extra, seed):
    j = np.random.default_rng(seed).normal(size=(cols + extra, cols))
    c = choose_H(j)
    hj = c.h_mat @ j
    assert np.linalg.eigvalsh(-hj - hj.T)[0] > 0
