"""Exact anisotropic exponents ``q``/``q_h`` and the Bernstein parameter recipe.

Everything involving ``q`` and ``q_h`` is done in exact half-integer
arithmetic; the Bernstein weights are exact dyadic rationals so that the
strict inequalities they must satisfy are decided without rounding.
"""

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import total_ordering

import numpy as np

from .multiindex import BlockMultiIndex, count, ell, enumerate_ordered, index_of


@total_ordering
class HalfInt:
    """Exact number ``twice_value / 2``."""

    __slots__ = ("twice_value",)

    def __init__(self, twice_value):
        if isinstance(twice_value, bool) or not isinstance(twice_value, (int, np.integer)):
            raise TypeError("HalfInt takes an integer (twice the value)")
        self.twice_value = int(twice_value)

    @classmethod
    def of(cls, value):
        if isinstance(value, HalfInt):
            return value
        f = Fraction(value)
        if (2 * f).denominator != 1:
            raise ValueError(f"{value} is not a half-integer")
        return cls(int(2 * f))

    def __add__(self, other):
        return HalfInt(self.twice_value + HalfInt.of(other).twice_value)

    __radd__ = __add__

    def __sub__(self, other):
        return HalfInt(self.twice_value - HalfInt.of(other).twice_value)

    def __rsub__(self, other):
        return HalfInt.of(other) - self

    def __neg__(self):
        return HalfInt(-self.twice_value)

    def __mul__(self, k):
        if not isinstance(k, (int, np.integer)):
            return NotImplemented
        return HalfInt(self.twice_value * int(k))

    __rmul__ = __mul__

    def __eq__(self, other):
        try:
            return self.twice_value == HalfInt.of(other).twice_value
        except (TypeError, ValueError):
            return NotImplemented

    def __lt__(self, other):
        return self.twice_value < HalfInt.of(other).twice_value

    def __hash__(self):
        return hash(Fraction(self.twice_value, 2))

    def positive_part(self):
        return self if self.twice_value > 0 else HalfInt(0)

    def as_fraction(self):
        return Fraction(self.twice_value, 2)

    def __float__(self):
        return self.twice_value / 2

    def __repr__(self):
        return f"HalfInt({self})"

    def __str__(self):
        t = self.twice_value
        return str(t // 2) if t % 2 == 0 else f"{t}/2"


def q_eval(beta):
    """``q(beta) = sum_k (2k+1)/2 beta_k``."""
    beta = BlockMultiIndex(beta)
    return HalfInt(sum((2 * k + 1) * b for k, b in enumerate(beta)))


def j_of(beta, h):
    """Smallest ``j`` in ``0..r+1`` with ``sum_{k>=j} beta_k <= h``."""
    tail = 0
    j = len(beta)
    for k in range(len(beta) - 1, -1, -1):
        tail += beta[k]
        if tail > h:
            break
        j = k
    return j


def qh_eval(beta, h):
    """``q_h(beta)``; zero when ``|beta| <= h``."""
    beta = BlockMultiIndex(beta)
    if h < 0:
        raise ValueError("h must be non-negative")
    n = beta.total
    if h >= n:
        return HalfInt(0)
    j = j_of(beta, h)
    head = sum(k * beta[k] for k in range(j))
    tail = sum(beta[j:])
    return HalfInt(n - h + 2 * head + 2 * (j - 1) * (tail - h))


# ---------------------------------------------------------------------------
# exhaustive checks of the q_h properties


@dataclass
class PropertyResult:
    name: str
    passed: bool
    checked: int
    witness: tuple = None

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        w = "" if self.witness is None else f" witness={self.witness}"
        return f"{tag} {self.name} ({self.checked} cases){w}"


@dataclass
class SuiteResult:
    results: list

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def __getitem__(self, name):
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self):
        return "\n".join(r.line() for r in self.results)


class _Tracker:
    def __init__(self, name):
        self.name = name
        self.checked = 0
        self.witness = None

    def check(self, ok, *witness):
        self.checked += 1
        if not ok and self.witness is None:
            self.witness = witness

    def result(self):
        return PropertyResult(self.name, self.witness is None, self.checked, self.witness)


def all_block_indices(r, k_max):
    for k in range(k_max + 1):
        yield from enumerate_ordered(k, r)


def _shifts(alpha, r, source_ok):
    """``alpha - e_j + e_j'`` over ``j`` with ``source_ok(j)`` and ``j' <= j+1``."""
    for j in range(r + 1):
        if not source_ok(j):
            continue
        for jp in range(min(j + 1, r) + 1):
            beta = alpha.shift(j, jp)
            if beta is not None:
                yield j, jp, beta


def exponent_property_suite(r_max=4, k_max=6, h_max=6, qh=qh_eval, max_cases=10**6):
    """Check the structural properties of ``q_h`` exhaustively.

    Ranges: every ``alpha in N_0^{r+1}`` with ``r <= r_max`` and
    ``|alpha| <= k_max``, every ``0 <= h <= h_max``. ``qh`` can be swapped for
    a faulty implementation to test that the suite notices.
    """
    if r_max < 0 or k_max < 0 or h_max < 0:
        raise ValueError("bounds must be non-negative")
    n_alpha = sum(count(k, r) for r in range(r_max + 1) for k in range(k_max + 1))
    if n_alpha * (h_max + 1) > max_cases:
        raise ValueError(f"{n_alpha * (h_max + 1)} (alpha, h) pairs exceed the limit {max_cases}")
    names = ["zero_iff_h_covers", "lower_bound", "first_block_half_step", "shift_costs_at_most_one", "leading_shift_exact", "paired_shift", "first_block_padding", "monotone_in_h", "ell_identity"]
    tr = {n: _Tracker(n) for n in names}
    zero, one, half = HalfInt(0), HalfInt(2), HalfInt(1)
    for r in range(r_max + 1):
        for alpha in all_block_indices(r, k_max):
            n = alpha.total
            nz = [j for j, v in enumerate(alpha) if v > 0]
            j0 = nz[0] if nz else None
            for h in range(h_max + 1):
                qa = qh(alpha, h)
                w = (alpha, h)
                tr["zero_iff_h_covers"].check((n <= h) == (qa == zero), *w)
                tr["lower_bound"].check(qa >= HalfInt(max(n - h, 0)), *w)
                if n >= h:
                    bplus = BlockMultiIndex((alpha[0] + 1,) + tuple(alpha[1:]))
                    tr["first_block_half_step"].check(qh(bplus, h) == qa + half, *w)
                for j, jp, beta in _shifts(alpha, r, lambda j: alpha[j] > 0):
                    tr["shift_costs_at_most_one"].check(qa >= qh(beta, h) - one, alpha, h, j, jp)
                if j0 is not None and j0 > 0:
                    hat = alpha.shift(j0, j0 - 1)
                    qhat = qh(hat, h)
                    if h < n:
                        tr["leading_shift_exact"].check(qa > one and qhat == qa - one, *w)
                    for j, jp, beta in _shifts(hat, r, lambda j: hat[j] > 0):
                        tr["paired_shift"].check(qa + qhat >= 2 * qh(beta, h) - one, alpha, h, j, jp)
                for sub in itertools.product(*[range(v + 1) for v in alpha]):
                    if sub == tuple(alpha):
                        continue
                    beta = BlockMultiIndex((sub[0] + 2,) + sub[1:])
                    tr["first_block_padding"].check(qa >= qh(beta, h) - one, alpha, h, sub)
                if h > 0:
                    tr["monotone_in_h"].check(qa <= qh(alpha, h - 1), *w)
                if n > 0 and alpha[0] == 0:
                    lm = enumerate_ordered(n, r)[ell(n, r, index_of(alpha)) - 1]
                    if qa >= one:
                        tr["ell_identity"].check(qh(lm, h) + qa == (2 * qa - one).positive_part(), *w)
    return SuiteResult([tr[n].result() for n in names])


def exponent_table_csv(r, k_max, h_max, qh=qh_eval):
    """CSV rows ``beta,h,q_h`` over all ``|beta| <= k_max`` and ``h <= h_max``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", "h", "q_h"])
    for beta in all_block_indices(r, k_max):
        for h in range(h_max + 1):
            w.writerow([" ".join(map(str, beta)), h, str(qh(beta, h))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Bernstein parameters


@dataclass
class MagnificationBound:
    """Lower bound for ``a`` in the Bernstein weights, given ``||H_{m,ell(m)}||``.

    The requirement is ``a > 1`` and ``a^{gap(l,m)} > 2 ||H_{m,ell(m)}||``
    with ``gap = eta_{ell,ell} + eta_{m,m} - 2 eta_{m,ell} > 0``.
    """

    gaps: dict

    def log_value(self, h_norms):
        """``log`` of the smallest admissible ``a`` (the bound itself is huge)."""
        bound = 0.0
        for key, gap in self.gaps.items():
            hn = float(h_norms[key])
            if 2.0 * hn > 1.0:
                bound = max(bound, math.log(2.0 * hn) / float(gap))
        return bound

    def value(self, h_norms):
        lv = self.log_value(h_norms)
        return math.exp(lv) if lv < 700 else math.inf

    def admissible_log(self, log_a, h_norms):
        """Whether ``a = exp(log_a)`` meets every requirement."""
        if not log_a > 0:
            return False
        return all(
            log_a * float(gap) > math.log(2.0 * float(h_norms[key]))
            for key, gap in self.gaps.items()
            if h_norms[key] > 0
        )

    def admissible(self, a, h_norms):
        return a > 1 and self.admissible_log(math.log(a), h_norms)

    def describe(self):
        return "a > max(1, max_(l,m) (2 ||H_(m,ell(m))^(l)||)^(1/gap(l,m)))"


@dataclass
class BernsteinParams:
    k: int
    r: int
    a: dict
    magnification: MagnificationBound = None
    eta_level: dict = field(default_factory=dict)

    def eta(self, l, n, m):
        return self.a[l][n - 1] * self.a[l][m - 1]

    @property
    def levels(self):
        return sorted(self.a)


def choose_bernstein_params(k, r):
    """Dyadic weights ``a^{(l)}_n`` for ``l = 1..k+1`` with ``eta_{n,m} = a_n a_m``."""
    if k < 1 or r < 0:
        raise ValueError("need k >= 1 and r >= 0")
    a = {}
    eta_level = {}
    prev_min = Fraction(1)  # a^{(0)}_1 = 1 so that eta^{(0)}_{1,1} = 1
    for l in range(1, k + 2):
        eta_level[l] = prev_min * prev_min
        c_prev, c_l = count(l - 1, r), count(l, r)
        seq = [prev_min / 4]
        for n in range(2, c_l + 1):
            nxt = seq[-1] / 4
            if n == c_prev + 1:
                nxt = min(nxt, seq[-1] * seq[-1] / 2)
            seq.append(nxt)
        a[l] = seq
        prev_min = seq[-1]
    params = BernsteinParams(k, r, a, eta_level=eta_level)
    gaps = {}
    for l in params.levels:
        for m in range(count(l - 1, r) + 1, count(l, r) + 1):
            lm = ell(l, r, m)
            gaps[(l, m)] = params.eta(l, lm, lm) + params.eta(l, m, m) - 2 * params.eta(l, m, lm)
    params.magnification = MagnificationBound(gaps)
    return params


def check_bernstein_params(params):
    """Independent check of the weight conditions; returns a list of failures.

    Labels: ``gap_positive`` (the quadratic form along ``(m, ell(m))`` is
    positive), ``diag_below_cross``, ``cross_decreasing``, ``cross_below_lower``
    (against the diagonal of earlier levels), ``level_dominates`` and
    ``chain_cross``.
    """
    r = params.r
    bad = []

    def lmap(l, m):
        # recompute ell from scratch rather than reuse the multiindex helper
        seq = list(_plain_enumeration(l, r))
        alpha = list(seq[m - 1])
        j = next(i for i, v in enumerate(alpha) if v > 0)
        alpha[j] -= 1
        alpha[j - 1] += 1
        return seq.index(tuple(alpha)) + 1

    for l in params.levels:
        a = params.a[l]
        c_prev, c_l = _binom(l - 1 + r, r) if l >= 1 else 0, _binom(l + r, r)
        if len(a) != c_l:
            bad.append(("length", l, len(a)))
            continue
        if any(not 0 < x < 1 for x in a):
            bad.append(("range", l))
        if any(not a[i + 1] < a[i] / 2 for i in range(len(a) - 1)):
            bad.append(("halving", l))

        def eta(n, m, _a=a):
            return _a[n - 1] * _a[m - 1]

        if l == 1:
            eta_l = Fraction(1)
        else:
            prev = params.a[l - 1]
            eta_l = min(prev[m] * prev[m] for m in range(len(prev)))
        if not 2 * max(eta(m, m) for m in range(1, c_l + 1)) < eta_l:
            bad.append(("level_dominates", l))
        for m in range(c_prev + 1, c_l + 1):
            lm = lmap(l, m)
            if not eta(lm, lm) + eta(m, m) > 2 * eta(m, lm):
                bad.append(("gap_positive", l, m))
            if not 2 * eta(m, m) < eta(m, lm):
                bad.append(("diag_below_cross", l, m))
            for p in range(c_prev + 1, m):
                if not eta(m, lm) < eta(p, lmap(l, p)):
                    bad.append(("cross_decreasing", l, m, p))
            for p in range(1, c_prev + 1):
                if not eta(m, lm) < eta(p, p):
                    bad.append(("cross_below_lower", l, m, p))
            if lm > c_prev and not 2 * eta(m, lm) < eta(lm, lmap(l, lm)):
                bad.append(("chain_cross", l, m))
    return bad


def _binom(n, k):
    out = 1
    for i in range(k):
        out = out * (n - i) // (i + 1)
    return out


def _plain_enumeration(k, r):
    # lexicographically descending tuples of length r+1 summing to k
    return sorted(
        (t for t in itertools.product(range(k + 1), repeat=r + 1) if sum(t) == k),
        reverse=True,
    )


@dataclass(frozen=True)
class HChoice:
    h_mat: np.ndarray
    iota: float


def choose_H(j_mat, rank_tol=1e-8):
    """``H = -(J*J)^{-1} J*`` so that ``-HJ - (HJ)* = 2I``."""
    j = np.atleast_2d(np.asarray(j_mat, dtype=float))
    sv = np.linalg.svd(j, compute_uv=False)
    if sv.size < j.shape[1] or sv[-1] <= rank_tol:
        raise np.linalg.LinAlgError(f"J lacks full column rank: singular values {sv}")
    h = -np.linalg.solve(j.T @ j, j.T)
    hj = h @ j
    sym = -hj - hj.T
    iota = float(np.linalg.eigvalsh(0.5 * (sym + sym.T))[0])
    return HChoice(h, iota)


def iota_min(choices):
    """``iota^{(k)}``: the smallest ``lambda_min(-HJ - (HJ)*)`` over all choices."""
    return min(c.iota for c in choices)
