"""Randomized and exhaustive check suites shared by ``verify`` and the test-suite."""

from dataclasses import dataclass

import numpy as np

from .basis import BlockStructure
from .exponents import (
    PropertyResult,
    check_bernstein_params,
    choose_bernstein_params,
    choose_H,
)
from .kalman import hypoellipticity_report
from .multiindex import assemble_J, count
from .operator_model import ConstantOperatorSpec, trace_inequality_check


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def random_masked_pair(rng, n_max=6):
    """(Q, B) with Q = M diag(mask) M* for a random orthogonal M and 0/1 mask."""
    n = int(rng.integers(1, n_max + 1))
    m = random_orthogonal(rng, n)
    mask = rng.integers(0, 2, size=n).astype(float)
    q = m @ np.diag(mask) @ m.T
    q = 0.5 * (q + q.T)
    b = rng.normal(size=(n, n))
    # mix in structured drifts so both outcomes occur often
    kind = rng.integers(0, 3)
    if kind == 1:
        b = m @ np.diag(rng.normal(size=n)) @ m.T
    elif kind == 2 and n > 1:
        b = m @ np.diag(np.ones(n - 1), -1) @ m.T
    return q, b


def random_block_b(rng, structure):
    """Gaussian ``B`` with zero blocks below the first sub-diagonal."""
    n = structure.dim_n
    b = rng.normal(size=(n, n))
    for h in range(structure.r + 1):
        for g in range(h - 1):
            b[np.ix_(list(structure.ranges[h]), list(structure.ranges[g]))] = 0.0
    return b


def random_structure(rng, r_max=3, p_max=2):
    r = int(rng.integers(1, r_max + 1))
    sizes = tuple(int(p) for p in sorted(rng.integers(1, p_max + 1, size=r + 1), reverse=True))
    return BlockStructure.from_sizes(sizes)


@dataclass
class SuiteOutcome:
    name: str
    passed: bool
    checked: int
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name} ({self.checked} cases){' ' + self.detail if self.detail else ''}"

    @classmethod
    def from_property(cls, prefix, res: PropertyResult):
        detail = "" if res.witness is None else f"witness={res.witness}"
        return cls(f"{prefix}.{res.name}", res.passed, res.checked, detail)


def kalman_suite(rng, pairs=500, n_max=6, probe_times=(0.1, 1.0)):
    """All five hypoellipticity characterizations agree on random pairs."""
    bad, n_hyp = None, 0
    for i in range(pairs):
        q, b = random_masked_pair(rng, n_max)
        rep = hypoellipticity_report(ConstantOperatorSpec(q.shape[0], q, b), list(probe_times))
        n_hyp += rep.hypoelliptic
        if not rep.consistent and bad is None:
            bad = f"pair {i}: flags {rep.flags}"
    detail = bad or f"{n_hyp} hypoelliptic / {pairs - n_hyp} not"
    return SuiteOutcome("kalman_equivalence", bad is None, pairs, detail)


def rank_suite(rng, draws=200, l_max=3, r_max=3, p_max=2, threshold=1e-8):
    """Every ``J_m^{(l)}`` has smallest singular value above ``threshold``."""
    worst, where, checked = np.inf, None, 0
    for d in range(draws):
        st = random_structure(rng, r_max, p_max)
        b = random_block_b(rng, st)
        for l in range(1, l_max + 1):
            for m in range(count(l - 1, st.r) + 1, count(l, st.r) + 1):
                jm = assemble_J(l, m, st, b, check_rank=False)
                checked += 1
                sv = jm.singular_values
                s_min = sv[-1] if sv.size == jm.j_m.shape[1] else 0.0
                if s_min < worst:
                    worst, where = float(s_min), (d, st.sizes, l, m)
    return SuiteOutcome("J_full_rank", worst > threshold, checked, f"min singular value {worst:.3e} at {where}")


def trace_suite(rng, pairs=1000, n_max=6):
    bad = None
    for i in range(pairs):
        n = int(rng.integers(1, n_max + 1))
        m = int(rng.integers(1, n + 1))
        g = rng.normal(size=(m, m))
        q = np.zeros((n, n))
        q[:m, :m] = g @ g.T + 1e-3 * np.eye(m)
        h = rng.normal(size=(n, n))
        res = trace_inequality_check(q, h @ h.T, m)
        if not res.holds and bad is None:
            bad = f"pair {i}: lhs {res.lhs:.6g} < rhs {res.rhs:.6g}"
    return SuiteOutcome("trace_inequality", bad is None, pairs, bad or "")


def bernstein_suite(k_max=4, r_max=3):
    fails, checked = [], 0
    for k in range(1, k_max + 1):
        for r in range(0, r_max + 1):
            checked += 1
            for msg in check_bernstein_params(choose_bernstein_params(k, r)):
                fails.append(f"k={k} r={r}: {msg}")
    return SuiteOutcome("bernstein_conditions", not fails, checked, fails[0] if fails else "")


def h_choice_suite(rng, draws=50, l_max=3, r_max=3, tol=1e-10):
    """``lambda_min(-HJ - (HJ)*) >= 2 - tol`` for the least-squares choice of ``H``."""
    worst, checked = np.inf, 0
    for _ in range(draws):
        st = random_structure(rng, r_max)
        b = random_block_b(rng, st)
        for l in range(1, l_max + 1):
            for m in range(count(l - 1, st.r) + 1, count(l, st.r) + 1):
                worst = min(worst, choose_H(assemble_J(l, m, st, b).j_m).iota)
                checked += 1
    return SuiteOutcome("H_choice", worst >= 2 - tol, checked, f"min iota {worst:.12f}")
