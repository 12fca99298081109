"""Grid estimates of isotropic ``C^k_b`` and anisotropic ``𝒞^θ`` norms.

All estimators work on a :class:`GridFunction` (values on a uniform tensor
grid). Sup norms are taken over grid nodes, Hölder quotients over node pairs
at least two spacings apart, and derivatives come from second-order central
differences, so every number returned is an estimate of the true norm
restricted to the box.
"""

import csv
import io
import itertools
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

MAX_DIM = 4
_PAIR_FLOOR = 2.0


@dataclass(frozen=True)
class GridFunction:
    box: tuple
    spacing: tuple
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        spacing = tuple(float(h) for h in self.spacing)
        if vals.ndim != len(box) or len(spacing) != len(box):
            raise ValueError("box, spacing and values disagree in dimension")
        if not 1 <= vals.ndim <= MAX_DIM:
            raise ValueError(f"grid dimension must be in 1..{MAX_DIM}")
        for (lo, hi), h, n in zip(box, spacing, vals.shape):
            if not h > 0 or hi <= lo:
                raise ValueError("invalid box or spacing")
            if n < 3:
                raise ValueError("need at least 3 nodes per axis")
            if abs(lo + (n - 1) * h - hi) > 1e-9 * max(1.0, abs(hi)):
                raise ValueError(f"spacing {h} does not fit [{lo}, {hi}] with {n} nodes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dim(self):
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    def axes(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.box, self.shape)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self):
        """Grid nodes as an ``(n_nodes, dim)`` array in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    @classmethod
    def from_function(cls, fun, box, counts):
        """Sample ``fun`` (vectorized over an ``(n, dim)`` array) on a grid."""
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        counts = tuple(int(n) for n in counts)
        spacing = tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(box, counts))
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(box, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.asarray(fun(pts), dtype=float).reshape(counts)
        return cls(box, spacing, vals)

    def with_values(self, values):
        return GridFunction(self.box, self.spacing, values)

    def sup(self):
        return float(np.max(np.abs(self.values)))

    def restrict(self, box):
        """Sub-grid of nodes lying inside ``box`` (inclusive, with round-off slack)."""
        sl = []
        for ax, (lo, hi), h in zip(self.axes(), box, self.spacing):
            idx = np.nonzero((ax >= lo - 1e-9 * h) & (ax <= hi + 1e-9 * h))[0]
            sl.append(slice(idx[0], idx[-1] + 1))
        vals = self.values[tuple(sl)]
        new_box = tuple((ax[s.start], ax[s.stop - 1]) for ax, s in zip(self.axes(), sl))
        return GridFunction(new_box, self.spacing, vals)

    # ---- serialization -------------------------------------------------

    def to_bytes(self):
        """Header ``[dim, counts, (lo, hi) per axis, spacings]`` then values, all ``<f8``."""
        header = [float(self.dim)] + [float(n) for n in self.shape]
        for lo, hi in self.box:
            header += [lo, hi]
        header += list(self.spacing)
        return np.asarray(header, dtype="<f8").tobytes() + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data):
        raw = np.frombuffer(data, dtype="<f8")
        dim = int(raw[0])
        counts = tuple(int(v) for v in raw[1 : 1 + dim])
        pos = 1 + dim
        box = tuple((raw[pos + 2 * i], raw[pos + 2 * i + 1]) for i in range(dim))
        pos += 2 * dim
        spacing = tuple(raw[pos : pos + dim])
        pos += dim
        n = int(np.prod(counts))
        if raw.size != pos + n:
            raise ValueError("binary grid payload has the wrong length")
        return cls(box, spacing, raw[pos:].reshape(counts).copy())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(self.dim)] + ["value"])
        for p, v in zip(self.points(), self.values.ravel()):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(c) for c in r] for r in rows[1:]])
        dim = data.shape[1] - 1
        axes = [np.unique(data[:, i]) for i in range(dim)]
        counts = tuple(a.size for a in axes)
        box = tuple((a[0], a[-1]) for a in axes)
        spacing = tuple((a[-1] - a[0]) / (a.size - 1) for a in axes)
        return cls(box, spacing, data[:, -1].reshape(counts))

    def save(self, path, fmt="bin"):
        payload = self.to_bytes() if fmt == "bin" else self.to_csv().encode()
        write_atomic(path, payload)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        if str(path).endswith(".csv"):
            return cls.from_csv(data.decode())
        return cls.from_bytes(data)


def write_atomic(path, payload):
    """Write bytes via a temporary file in the same directory and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload if isinstance(payload, bytes) else payload.encode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# estimators


def _derivatives(values, spacing, axes, order):
    """All ``D^alpha`` with ``|alpha| = order`` along ``axes`` (multisets)."""
    out = []
    for combo in itertools.combinations_with_replacement(axes, order):
        d = values
        for ax in combo:
            d = np.gradient(d, spacing[ax], axis=ax, edge_order=2)
        out.append(d)
    return out


def _reduce_max(arr, axes):
    return np.max(np.abs(arr), axis=tuple(axes), keepdims=True)


def _holder_quotient(values, spacing, axes, s):
    """Max of ``|g(a)-g(b)| / |a-b|^s`` over node pairs differing only along ``axes``.

    Pairs closer than two grid spacings are skipped. The max is taken along
    ``axes`` only, so the result keeps one value per slice.
    """
    shape = values.shape
    h_floor = _PAIR_FLOOR * min(spacing[a] for a in axes)
    best = np.zeros([1 if i in axes else n for i, n in enumerate(shape)])
    osc = np.max(values, axis=tuple(axes), keepdims=True) - np.min(values, axis=tuple(axes), keepdims=True)
    offsets = []
    for off in itertools.product(*[range(-(shape[a] - 1), shape[a]) for a in axes]):
        nz = [o for o in off if o != 0]
        if not nz or nz[0] < 0:
            continue
        dist = math.sqrt(sum((o * spacing[a]) ** 2 for o, a in zip(off, axes)))
        if dist >= h_floor - 1e-12:
            offsets.append((dist, off))
    offsets.sort()
    for dist, off in offsets:
        # no pair farther apart can beat the current best in any slice
        if np.all(osc / dist**s <= best):
            break
        sl_a = [slice(None)] * values.ndim
        sl_b = [slice(None)] * values.ndim
        for o, a in zip(off, axes):
            if o >= 0:
                sl_a[a], sl_b[a] = slice(o, None), slice(0, shape[a] - o)
            else:
                sl_a[a], sl_b[a] = slice(0, shape[a] + o), slice(-o, None)
        diff = values[tuple(sl_a)] - values[tuple(sl_b)]
        best = np.maximum(best, _reduce_max(diff, axes) / dist**s)
    return best


def _ck_profile(values, spacing, axes, k):
    """Per-slice estimate of the ``C^k_b`` norm along ``axes``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    top = int(math.floor(k + 1e-12))
    frac = k - top
    if frac < 1e-12:
        frac = 0.0
    for a in axes:
        if values.shape[a] < 2 * top + 1:
            raise ValueError(f"grid too coarse for derivatives of order {top} along axis {a}")
    total = _reduce_max(values, axes)
    tops = [values]
    for order in range(1, top + 1):
        tops = _derivatives(values, spacing, axes, order)
        for d in tops:
            total = total + _reduce_max(d, axes)
    if frac > 0:
        for d in tops:
            total = total + _holder_quotient(d, spacing, axes, frac)
    return total


def holder_seminorm_axis_block(f, structure, j, theta):
    """``||f||_{j,θ}``: sup over slices of the ``C^{θ/(2j+1)}_b`` norm in block ``j``.

    The grid axes are taken to be the adapted coordinates of ``structure``.
    """
    if not 0 < theta < 3:
        raise ValueError("theta must lie in (0, 3)")
    if f.dim != structure.dim_n:
        raise ValueError("grid dimension does not match the block structure")
    axes = list(structure.ranges[j])
    s = theta / (2 * j + 1)
    return float(np.max(_ck_profile(f.values, f.spacing, axes, s)))


def anisotropic_norm(f, structure, theta):
    """``sum_j ||f||_{j,θ}``."""
    return sum(holder_seminorm_axis_block(f, structure, j, theta) for j in range(structure.r + 1))


def isotropic_norm(f, k):
    """``C^k_b`` norm estimate: derivative sup norms plus the top Hölder seminorm."""
    return float(np.max(_ck_profile(f.values, f.spacing, list(range(f.dim)), k)))
