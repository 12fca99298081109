"""Adapted orthonormal basis bringing B to block sub-diagonal form.

With ``V_k = (ker Q(0) ∩ ker Q(0)B* ∩ ... ∩ ker Q(0)(B*)^k)^⊥`` and
``W_k = V_k ⊖ V_{k-1}``, stacking orthonormal bases of ``W_0, ..., W_r``
gives coordinates in which the diffusion lives on the first ``p_0`` axes and
``U* B U`` has full-rank blocks ``B_h`` on the first block sub-diagonal and
zeros below it.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._linalg import RANK_RTOL, as_square, null_space, orth_complement

PATTERN_TOL = 1e-10
BLOCK_RANK_TOL = 1e-8


@dataclass(frozen=True)
class BlockStructure:
    r: int
    sizes: tuple
    basis_u: np.ndarray
    ranges: tuple

    def __post_init__(self):
        sizes = tuple(int(p) for p in self.sizes)
        if len(sizes) != self.r + 1 or any(p <= 0 for p in sizes):
            raise ValueError(f"invalid block sizes {sizes} for r={self.r}")
        if any(a < b for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"block sizes must be non-increasing, got {sizes}")
        u = np.array(self.basis_u, dtype=float)
        n = sum(sizes)
        if u.shape != (n, n):
            raise ValueError(f"basis_u has shape {u.shape}, expected {(n, n)}")
        if np.max(np.abs(u.T @ u - np.eye(n))) > 1e-10:
            raise ValueError("basis_u is not orthogonal")
        u.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "basis_u", u)
        object.__setattr__(self, "ranges", tuple(range(a, b) for a, b in _offsets(sizes)))

    @property
    def dim_n(self):
        return sum(self.sizes)

    def block_of(self, i):
        """Block index ``j`` with ``i`` in the ``j``-th index range."""
        for j, rg in enumerate(self.ranges):
            if i in rg:
                return j
        raise IndexError(i)

    def compress(self, alpha):
        """Block lengths ``(|alpha_0|, ..., |alpha_r|)`` of a full multi-index."""
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.dim_n:
            raise ValueError(f"multi-index of length {len(alpha)}, expected {self.dim_n}")
        return tuple(sum(alpha[i] for i in rg) for rg in self.ranges)

    @classmethod
    def from_sizes(cls, sizes, basis_u=None):
        sizes = tuple(int(p) for p in sizes)
        n = sum(sizes)
        return cls(len(sizes) - 1, sizes, np.eye(n) if basis_u is None else basis_u, ())

    def to_config(self):
        """Key/value strings for the ``[block_structure]`` config section."""
        return {
            "r": str(self.r),
            "sizes": ", ".join(str(p) for p in self.sizes),
            "basis": "; ".join(" ".join(repr(float(v)) for v in row) for row in self.basis_u),
        }

    @classmethod
    def from_config(cls, section):
        sizes = tuple(int(s) for s in section["sizes"].split(","))
        rows = [[float(v) for v in row.split()] for row in section["basis"].split(";") if row.strip()]
        st = cls.from_sizes(sizes, np.array(rows))
        if "r" in section and int(section["r"]) != st.r:
            raise ValueError("block_structure: r disagrees with sizes")
        return st


def _offsets(sizes):
    start = 0
    for p in sizes:
        yield start, start + p
        start += p


def nested_spaces(q0, b_mat):
    """Orthonormal bases of ``V_0 ⊂ V_1 ⊂ ... = R^N`` (strictly increasing)."""
    q = as_square(q0, "q0")
    b = as_square(b_mat, "b_mat")
    if q.shape != b.shape:
        raise ValueError("q0 and b_mat differ in shape")
    n = q.shape[0]
    rows = []
    blk = q
    spaces = []
    for k in range(n):
        rows.append(blk)
        blk = blk @ b.T
        ker = null_space(np.vstack(rows), RANK_RTOL)
        v = orth_complement(ker, n)
        if spaces and v.shape[1] == spaces[-1].shape[1]:
            raise ValueError(
                f"nested spaces stall at dim {v.shape[1]} < {n} (k={k}); the pair (Q, B) is not hypoelliptic"
            )
        spaces.append(v)
        if v.shape[1] == n:
            return spaces
    raise ValueError(f"nested spaces did not saturate R^{n} by k={n - 1}; the pair (Q, B) is not hypoelliptic")


def _projected_basis(proj, dim):
    """Deterministic orthonormal basis of ``range(proj)`` from projected unit vectors."""
    n = proj.shape[0]
    chosen = []
    for i in range(n):
        v = proj[:, i].copy()
        for _ in range(2):
            for c in chosen:
                v -= (c @ v) * c
        nv = np.linalg.norm(v)
        if nv > 1e-6:
            v /= nv
            if v[np.argmax(np.abs(v))] < 0:
                v = -v
            chosen.append(v)
        if len(chosen) == dim:
            break
    if len(chosen) != dim:
        raise ValueError("failed to extract an orthonormal basis of the projected space")
    return np.column_stack(chosen)


def adapted_basis(q0, b_mat):
    spaces = nested_spaces(q0, b_mat)
    n = spaces[-1].shape[0]
    blocks = []
    prev = np.zeros((n, 0))
    for v in spaces:
        proj_v = v @ v.T
        proj_prev = prev @ prev.T
        w_proj = proj_v - proj_prev
        dim = v.shape[1] - prev.shape[1]
        blocks.append(_projected_basis(w_proj, dim))
        prev = v
    u = np.hstack(blocks)
    sizes = tuple(bk.shape[1] for bk in blocks)
    return BlockStructure(len(sizes) - 1, sizes, u, ())


@dataclass(frozen=True)
class TransformedOperator:
    structure: BlockStructure
    b_new: np.ndarray
    q_new: Callable[[np.ndarray], np.ndarray]
    f_new: Optional[Callable[[np.ndarray], np.ndarray]]
    sub_blocks: tuple

    def to_operator_spec(self, nu_floor, name="adapted"):
        from .operator_model import OperatorSpec

        return OperatorSpec(
            dim_n=self.structure.dim_n,
            p0=self.structure.sizes[0],
            drift_b=self.b_new,
            q0_eval=self.q_new,
            nu_floor=nu_floor,
            f_eval=self.f_new,
            name=name,
        )


def check_block_pattern(b_new, structure):
    """Return the sub-diagonal blocks ``B_1..B_r`` after checking the zero/rank pattern."""
    rg = structure.ranges
    scale = max(1.0, float(np.max(np.abs(b_new))))
    subs = []
    for h in range(len(rg)):
        for g in range(len(rg)):
            blk = b_new[np.ix_(list(rg[h]), list(rg[g]))]
            if h >= g + 2 and np.max(np.abs(blk)) > PATTERN_TOL * scale:
                raise ValueError(f"block ({h},{g}) below the first sub-diagonal is nonzero: max {np.max(np.abs(blk)):.3e}")
            if h == g + 1:
                sv = np.linalg.svd(blk, compute_uv=False)
                if sv.size < structure.sizes[h] or sv[-1] <= BLOCK_RANK_TOL:
                    raise ValueError(f"sub-diagonal block B_{h} is rank deficient: singular values {sv}")
                subs.append(blk.copy())
    return tuple(subs)


def transform_operator(spec, structure):
    """Rewrite ``spec`` in the coordinates ``x = U y`` of ``structure``."""
    u = structure.basis_u
    b = np.asarray(spec.drift_b, dtype=float)
    if b.shape != u.shape:
        raise ValueError("structure does not match the spec dimension")
    b_new = u.T @ b @ u
    subs = check_block_pattern(b_new, structure)
    p0 = structure.sizes[0]
    q_full = spec.q_full

    def q_new(y):
        qt = u.T @ q_full(u @ np.asarray(y, dtype=float)) @ u
        rest = qt.copy()
        rest[:p0, :p0] = 0.0
        if np.max(np.abs(rest)) > PATTERN_TOL * max(1.0, float(np.max(np.abs(qt)))):
            raise ValueError("transformed diffusion leaks outside the leading p0 x p0 block")
        return qt[:p0, :p0]

    # evaluate once at the origin so a leaking diffusion fails here, not later
    q_new(np.zeros(structure.dim_n))

    f_eval = getattr(spec, "f_eval", None)
    if f_eval is None:
        f_new = None
    else:
        p_spec = getattr(spec, "p0", structure.dim_n)

        def f_new(y):
            full = np.zeros(structure.dim_n)
            full[:p_spec] = spec.drift_f(u @ np.asarray(y, dtype=float))
            return (u.T @ full)[:p0]

    return TransformedOperator(structure, b_new, q_new, f_new, subs)
