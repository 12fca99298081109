"""Ordering of derivatives, the map ``ell`` and the drift commutator matrices.

Block multi-indices ``beta in N_0^{q+1}`` of fixed length ``k`` are ordered by
``≼_q``: ``m ≼ m'`` when at the first position where they differ ``m`` is the
larger one. The enumeration ``i_1, ..., i_c`` is therefore lexicographically
*descending*, with ``c = binom(q + k, q)``. Indices in this module are 1-based
to match that enumeration.

Within a block ``D^k_j u`` the full derivatives ``D^alpha u`` are stored so
that ``alpha`` precedes ``beta`` whenever ``beta ≼_{N-1} alpha``, i.e. in
lexicographically ascending order of ``alpha``.
"""

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

RANK_TOL = 1e-8


class BlockMultiIndex(tuple):
    """Immutable tuple of non-negative integers ``(beta_0, ..., beta_r)``."""

    def __new__(cls, entries):
        vals = tuple(int(v) for v in entries)
        if not vals or any(v < 0 for v in vals):
            raise ValueError(f"invalid block multi-index {entries!r}")
        return super().__new__(cls, vals)

    @property
    def r(self):
        return len(self) - 1

    @property
    def total(self):
        return sum(self)

    def shift(self, minus, plus):
        """``self - e_minus + e_plus``, or ``None`` if an entry goes negative."""
        v = list(self)
        v[minus] -= 1
        v[plus] += 1
        return None if v[minus] < 0 else BlockMultiIndex(v)


def count(k, q):
    """``c_{k,q} = binom(q + k, q)``; zero for negative ``k``."""
    return comb(q + k, q) if k >= 0 else 0


def precedes(a, b):
    """``a ≼ b``: at the first differing position ``a`` is larger (reflexive)."""
    if len(a) != len(b):
        raise ValueError("multi-indices of different length")
    for x, y in zip(a, b):
        if x != y:
            return x > y
    return True


def _compositions(k, parts):
    if parts == 1:
        yield (k,)
        return
    for first in range(k, -1, -1):
        for rest in _compositions(k - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def enumerate_ordered(k, q):
    """All ``beta in N_0^{q+1}`` with ``|beta| = k`` in ``≼_q`` order."""
    if k < 0 or q < 0:
        raise ValueError("k and q must be non-negative")
    return tuple(BlockMultiIndex(c) for c in _compositions(k, q + 1))


@lru_cache(maxsize=None)
def _position_table(k, q):
    return {beta: i + 1 for i, beta in enumerate(enumerate_ordered(k, q))}


def index_of(beta):
    """1-based position of ``beta`` in its enumeration."""
    beta = BlockMultiIndex(beta)
    return _position_table(beta.total, beta.r)[beta]


def block_index(k, r, m):
    """The block multi-index ``i_m^{(k,r)}``."""
    seq = enumerate_ordered(k, r)
    if not 1 <= m <= len(seq):
        raise IndexError(f"m={m} outside 1..{len(seq)} for k={k}, r={r}")
    return seq[m - 1]


def _check_tail(k, r, m):
    if not count(k - 1, r) < m <= count(k, r):
        raise ValueError(f"m={m} must satisfy c_(k-1,r)={count(k - 1, r)} < m <= {count(k, r)}")
    return block_index(k, r, m)


def ell(k, r, m):
    """Index ``ell(m)``: move one unit from the first nonzero block one step left."""
    alpha = _check_tail(k, r, m)
    j = next(i for i, v in enumerate(alpha) if v > 0)
    return index_of(alpha.shift(j, j - 1))


def _valid(vec):
    return all(v >= 0 for v in vec)


def set_A(l, r, m):
    """The index set ``A_m^{(l)}`` (sorted tuple of 1-based indices)."""
    alpha = _check_tail(l, r, m)
    nz = [j for j, v in enumerate(alpha) if v > 0]
    j1 = nz[0]
    out = set()
    base = list(alpha)
    base[j1] -= 1
    base[j1 - 1] += 1
    for ji in nz[1:]:
        for h in range(0, min(ji + 1, r) + 1):
            v = list(base)
            v[ji] -= 1
            v[h] += 1
            if _valid(v):
                out.add(index_of(v))
    for h in range(0, j1 + 1):
        v = list(alpha)
        v[j1] -= 1
        v[h] += 1
        out.add(index_of(v))
    if alpha[j1] > 1:
        for h in range(0, min(j1 + 1, r) + 1):
            v = list(base)
            v[j1] -= 1
            v[h] += 1
            if _valid(v):
                out.add(index_of(v))
    return tuple(sorted(out))


def set_B(l, r, m):
    """The index set ``B_m^{(l)}``; any ``1 <= m <= c_l`` is allowed."""
    alpha = block_index(l, r, m)
    out = set()
    for j, v in enumerate(alpha):
        if v == 0:
            continue
        for h in range(0, min(j + 1, r) + 1):
            out.add(index_of(alpha.shift(j, h)))
    return tuple(sorted(out))


def set_C(l, r, m):
    """Reconstructed targets of ``[D^l_m, Tr(Q D^2)]`` as ``(z, s)`` pairs.

    Differentiating a coefficient ``q_ij`` removes at least one derivative from
    ``alpha`` while ``D_ij`` adds two in block 0, so the targets are the block
    indices ``2 e_0 + alpha~`` with ``alpha~ <= i_m`` and ``alpha~ != i_m``.
    This set is derived from that commutator pattern, not read off a formula.
    """
    alpha = block_index(l, r, m)
    out = set()
    ranges = [range(v + 1) for v in alpha]
    for sub in np.ndindex(*[len(rg) for rg in ranges]):
        if tuple(sub) == tuple(alpha):
            continue
        beta = list(sub)
        beta[0] += 2
        beta = BlockMultiIndex(beta)
        out.add((beta.total, index_of(beta)))
    return tuple(sorted(out))


# ---------------------------------------------------------------------------
# full multi-indices and block splitting


@lru_cache(maxsize=None)
def _full_indices(k, n):
    return tuple(sorted(_compositions(k, n)))


def block_entries(structure, k, j):
    """Full multi-indices ``alpha`` (order ``k``) forming the block ``D^k_j u``."""
    target = block_index(k, structure.r, j)
    return tuple(a for a in _full_indices(k, structure.dim_n) if structure.compress(a) == target)


def split_derivatives(structure, k):
    """All blocks ``D^k_1, ..., D^k_c`` as tuples of full multi-indices."""
    return tuple(block_entries(structure, k, j) for j in range(1, count(k, structure.r) + 1))


def block_sizes(structure, k):
    """``s_j = #D^k_j``; with blocks of size ``p_i`` this is a product of multisets."""
    out = []
    for beta in enumerate_ordered(k, structure.r):
        s = 1
        for bi, p in zip(beta, structure.sizes):
            s *= comb(p + bi - 1, bi)
        out.append(s)
    return tuple(out)


def commutator_drift(alpha, b_mat, structure=None, subdiagonal_only=False):
    """Expansion of ``[D^alpha, <Bx, D>] w`` as ``[(coef, beta), ...]``.

    The sum is ``sum_{tau, i} alpha_tau b_{i tau} D^{alpha - e_tau + e_i}``
    with equal ``beta`` merged. With ``subdiagonal_only`` (needs
    ``structure``) every entry of ``B`` outside the blocks ``B_1..B_r`` is
    dropped first.
    """
    b = np.asarray(b_mat, dtype=float)
    alpha = tuple(int(a) for a in alpha)
    n = len(alpha)
    if b.shape != (n, n):
        raise ValueError(f"b_mat is {b.shape}, expected {(n, n)}")
    if subdiagonal_only:
        if structure is None:
            raise ValueError("subdiagonal_only needs a block structure")
        b = subdiagonal_part(b, structure)
    terms = {}
    for tau in range(n):
        if alpha[tau] == 0:
            continue
        for i in range(n):
            if b[i, tau] == 0.0:
                continue
            beta = list(alpha)
            beta[tau] -= 1
            beta[i] += 1
            beta = tuple(beta)
            terms[beta] = terms.get(beta, 0.0) + alpha[tau] * b[i, tau]
    return [(c, beta) for beta, c in sorted(terms.items(), reverse=True) if c != 0.0]


def subdiagonal_part(b_mat, structure):
    """Keep only the blocks ``B_h`` at block position ``(h, h-1)``."""
    b = np.asarray(b_mat, dtype=float)
    out = np.zeros_like(b)
    rg = structure.ranges
    for h in range(1, len(rg)):
        rows, cols = list(rg[h]), list(rg[h - 1])
        out[np.ix_(rows, cols)] = b[np.ix_(rows, cols)]
    return out


def commutator_blocks(l, row_block, structure, b_mat):
    """Matrices ``M_s`` with ``[D^l_{row}, <Bx,D>] w = sum_s M_s D^l_s w``."""
    rows = block_entries(structure, l, row_block)
    pos = {}
    blocks = {}
    for i, a in enumerate(rows):
        for coef, beta in commutator_drift(a, b_mat):
            s = index_of(structure.compress(beta))
            if s not in pos:
                entries = block_entries(structure, l, s)
                pos[s] = {e: c for c, e in enumerate(entries)}
                blocks[s] = np.zeros((len(rows), len(entries)))
            blocks[s][i, pos[s][beta]] += coef
    return blocks


@dataclass
class JAssembly:
    l: int
    m: int
    ell_m: int
    j_m: np.ndarray
    companions: dict = field(default_factory=dict)
    n_blocks: dict = field(default_factory=dict)
    singular_values: np.ndarray = None

    @property
    def full_rank(self):
        sv = self.singular_values
        return sv.size == self.j_m.shape[1] and sv[-1] > RANK_TOL


def assemble_J(l, m, structure, b_mat, check_rank=True):
    """``J_m^{(l)}`` with companions ``M_{m,p}`` (p in A_m) and ``N_{m,s}`` (s in B_m)."""
    r = structure.r
    lm = ell(l, r, m)
    from_ell = commutator_blocks(l, lm, structure, b_mat)
    s_m = len(block_entries(structure, l, m))
    j_m = from_ell.pop(m, np.zeros((len(block_entries(structure, l, lm)), s_m)))
    allowed_a = set(set_A(l, r, m))
    stray = set(from_ell) - allowed_a
    if stray:
        raise AssertionError(f"commutator of block {lm} reaches {sorted(stray)} outside A_m")
    n_blocks = commutator_blocks(l, m, structure, b_mat)
    stray = set(n_blocks) - set(set_B(l, r, m))
    if stray:
        raise AssertionError(f"commutator of block {m} reaches {sorted(stray)} outside B_m")
    sv = np.linalg.svd(j_m, compute_uv=False) if j_m.size else np.zeros(0)
    out = JAssembly(l, m, lm, j_m, from_ell, n_blocks, sv)
    if check_rank and not out.full_rank:
        raise np.linalg.LinAlgError(
            f"J_{m}^({l}) ({j_m.shape[0]}x{j_m.shape[1]}) lacks full column rank: singular values {sv}"
        )
    return out


def contract(blocks, derivs_by_block):
    """Apply ``sum_s M_s v_s`` for derivative vectors keyed by block index."""
    total = None
    for s, mat in blocks.items():
        term = mat @ np.asarray(derivs_by_block[s])
        total = term if total is None else total + term
    return total


def enumeration_csv(k, q):
    """CSV text ``index,entries,c`` for the ``≼_q`` enumeration of length ``k``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "entries"])
    for i, beta in enumerate(enumerate_ordered(k, q), start=1):
        w.writerow([i, " ".join(str(v) for v in beta)])
    return buf.getvalue()
