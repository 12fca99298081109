"""Exact evaluation of degenerate Ornstein-Uhlenbeck semigroups.

For ``A = Tr(Q D^2) + <Bx, D>`` with constant ``Q`` and ``B``,

    (T(t) f)(x) = E f(e^{tB} x + Y),   Y ~ N(0, 2 Q_t),

where ``Q_t`` is the controllability Gramian (the factor 2 comes from the
missing 1/2 in front of the second-order part). Integrals are evaluated by
tensor Gauss-Hermite quadrature in whitened variables, or in closed form for
data that know their own Gaussian expectation.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ._linalg import expm, psd_sqrt
from .kalman import gramian, gramian_positive_definite
from .operator_model import ConstantOperatorSpec


@dataclass(frozen=True)
class QuadConfig:
    order: int = 40
    exact: bool = True  # use a datum's closed-form expectation when it has one

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("quadrature order must be at least 2")


@dataclass(frozen=True)
class OUKernel:
    spec: ConstantOperatorSpec
    t: float
    mean_map: np.ndarray
    cov: np.ndarray
    cov_factor: np.ndarray

    @classmethod
    def build(cls, spec, t):
        if not t > 0:
            raise ValueError("t must be positive")
        q, b = np.asarray(spec.q_const), np.asarray(spec.drift_b)
        if not gramian_positive_definite(q, b, t):
            raise np.linalg.LinAlgError(f"Gramian is singular at t={t}: the pair (Q, B) fails the Kalman condition")
        cov = 2.0 * gramian(q, b, t)
        return cls(spec, float(t), expm(t * b), cov, psd_sqrt(cov))

    def mean(self, x):
        """``e^{tB} x`` for one point or a batch ``(m, N)``."""
        return np.asarray(x, dtype=float) @ self.mean_map.T


_GH_CACHE = {}


def _gh_nodes(order, dim):
    key = (order, dim)
    if key not in _GH_CACHE:
        z, w = np.polynomial.hermite_e.hermegauss(order)
        w = w / np.sqrt(2.0 * np.pi)
        grids = np.meshgrid(*([z] * dim), indexing="ij")
        wgrid = np.ones_like(grids[0])
        for g in np.meshgrid(*([w] * dim), indexing="ij"):
            wgrid = wgrid * g
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        _GH_CACHE[key] = (nodes, wgrid.ravel())
    return _GH_CACHE[key]


def ou_apply(spec, t, f, x, quad=QuadConfig(), kernel=None):
    """``(T(t) f)(x)`` for a point ``x`` (scalar result) or a batch ``(m, N)``."""
    k = kernel if kernel is not None else OUKernel.build(spec, t)
    xa = np.asarray(x, dtype=float)
    single = xa.ndim == 1
    pts = np.atleast_2d(xa)
    if pts.shape[1] != spec.dim_n:
        raise ValueError(f"points must have {spec.dim_n} coordinates")
    means = k.mean(pts)
    if quad.exact and hasattr(f, "expect"):
        out = np.asarray(f.expect(means, k.cov), dtype=float).reshape(-1)
    else:
        nodes, weights = _gh_nodes(quad.order, spec.dim_n)
        shifts = nodes @ k.cov_factor.T
        out = np.empty(len(pts))
        for i, m in enumerate(means):
            out[i] = weights @ np.asarray(f(m + shifts), dtype=float).reshape(-1)
    return float(out[0]) if single else out


# central-difference stencils (offsets, weights) with step 1
_STENCILS = {
    0: (np.array([0]), np.array([1.0])),
    1: (np.array([-1, 1]), np.array([-0.5, 0.5])),
    2: (np.array([-1, 0, 1]), np.array([1.0, -2.0, 1.0])),
    3: (np.array([-2, -1, 1, 2]), np.array([-0.5, 1.0, -1.0, 0.5])),
}


def _fd_points_weights(x, alpha, steps):
    offs, wts = [], []
    for a, h in zip(alpha, steps):
        o, w = _STENCILS[a]
        offs.append(o * h)
        wts.append(w / h**a)
    grid_o = np.meshgrid(*offs, indexing="ij")
    grid_w = np.meshgrid(*wts, indexing="ij")
    disp = np.stack([g.ravel() for g in grid_o], axis=1)
    w = np.prod(np.stack([g.ravel() for g in grid_w], axis=1), axis=1)
    return x + disp, w


def ou_derivative(spec, t, f, x, alpha, fd_step, quad=QuadConfig(), box=None, kernel=None):
    """``D^alpha (T(t) f)(x)`` by central differences with one Richardson step.

    ``fd_step`` is a scalar or a per-axis sequence. The estimate combines steps
    ``h`` and ``h/2`` as ``(4 D_{h/2} - D_h) / 3``. With ``box`` given, a stencil
    leaving the box raises ``ValueError``.
    """
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != spec.dim_n or any(a < 0 for a in alpha):
        raise ValueError("alpha must be a multi-index of length N")
    if sum(alpha) > 3:
        raise ValueError("derivatives of order above 3 are not supported")
    k = kernel if kernel is not None else OUKernel.build(spec, t)
    x = np.asarray(x, dtype=float)
    if sum(alpha) == 0:
        return ou_apply(spec, t, f, x, quad, kernel=k)
    steps = np.broadcast_to(np.asarray(fd_step, dtype=float), (spec.dim_n,))
    if np.any(steps <= 0):
        raise ValueError("fd_step must be positive")
    reach = np.array([2 if a == 3 else (1 if a else 0) for a in alpha]) * steps
    if box is not None:
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        if np.any(x - reach < lo) or np.any(x + reach > hi):
            raise ValueError("finite-difference stencil leaves the box; reduce fd_step")
    vals = []
    for scale in (1.0, 0.5):
        pts, w = _fd_points_weights(x, alpha, steps * scale)
        vals.append(float(w @ ou_apply(spec, t, f, pts, quad, kernel=k)))
    return (4.0 * vals[1] - vals[0]) / 3.0


def ou_derivative_exact(spec, t, f, x, alpha, kernel=None):
    """Closed-form ``D^alpha T(t) f`` for data with a ``ridge_derivative`` method."""
    k = kernel if kernel is not None else OUKernel.build(spec, t)
    return f.ridge_derivative(k, np.asarray(x, dtype=float), tuple(int(a) for a in alpha))


# ---------------------------------------------------------------------------
# test data with closed-form Gaussian expectations


def _as_batch(y):
    return np.atleast_2d(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class Constant:
    c: float = 1.0

    def __call__(self, y):
        return np.full(_as_batch(y).shape[0], float(self.c))

    def expect(self, mean, cov):
        return np.full(np.atleast_2d(mean).shape[0], float(self.c))

    def sup(self):
        return abs(self.c)


@dataclass(frozen=True)
class Affine:
    """``f(y) = <a, y> + c`` (unbounded; only meaningful on compact windows)."""

    a: tuple
    c: float = 0.0

    def __call__(self, y):
        return _as_batch(y) @ np.asarray(self.a, dtype=float) + self.c

    def expect(self, mean, cov):
        return np.atleast_2d(mean) @ np.asarray(self.a, dtype=float) + self.c


@dataclass(frozen=True)
class Quadratic:
    """``f(y) = y^T M y`` with symmetric ``M``."""

    m: np.ndarray

    def __call__(self, y):
        yb = _as_batch(y)
        return np.einsum("ni,ij,nj->n", yb, np.asarray(self.m), yb)

    def expect(self, mean, cov):
        mb = np.atleast_2d(mean)
        m = np.asarray(self.m)
        return np.einsum("ni,ij,nj->n", mb, m, mb) + float(np.trace(m @ cov))


@dataclass(frozen=True)
class GaussianBump:
    """``f(y) = exp(-|y - c|^2 / (2 s^2))``."""

    center: tuple
    width: float = 1.0

    def __call__(self, y):
        d = _as_batch(y) - np.asarray(self.center, dtype=float)
        return np.exp(-np.sum(d * d, axis=1) / (2.0 * self.width**2))

    def expect(self, mean, cov):
        n = cov.shape[0]
        s2 = self.width**2
        mat = s2 * np.eye(n) + cov
        d = np.atleast_2d(mean) - np.asarray(self.center, dtype=float)
        sol = np.linalg.solve(mat, d.T).T
        det_ratio = np.linalg.det(np.eye(n) + cov / s2)
        return np.exp(-0.5 * np.sum(d * sol, axis=1)) / np.sqrt(det_ratio)

    def sup(self):
        return 1.0


@dataclass(frozen=True)
class SinRidge:
    """``f(y) = sin(<v, y> + phase)``."""

    v: tuple
    phase: float = 0.0

    def __call__(self, y):
        return np.sin(_as_batch(y) @ np.asarray(self.v, dtype=float) + self.phase)

    def expect(self, mean, cov):
        v = np.asarray(self.v, dtype=float)
        damp = np.exp(-0.5 * v @ cov @ v)
        return damp * np.sin(np.atleast_2d(mean) @ v + self.phase)

    def sup(self):
        return 1.0

    def ridge_derivative(self, kernel, x, alpha):
        v = np.asarray(self.v, dtype=float)
        g = kernel.mean_map.T @ v  # gradient of <v, e^{tB} x>
        k = sum(alpha)
        coef = np.prod(g ** np.asarray(alpha))
        damp = np.exp(-0.5 * v @ kernel.cov @ v)
        return float(coef * damp * np.sin(x @ g + self.phase + k * np.pi / 2))


@dataclass(frozen=True)
class GaussianCDFRidge:
    """``f(y) = Phi((<v, y> - shift) / delta)``, a smoothed step across a hyperplane.

    Its semigroup image is again a ridge, ``Phi((<v, e^{tB}x> - shift) / s_t)``
    with ``s_t^2 = delta^2 + v^T (2 Q_t) v``, so derivatives of all orders are
    available in closed form.
    """

    v: tuple
    delta: float
    shift: float = 0.0

    def __call__(self, y):
        return ndtr((_as_batch(y) @ np.asarray(self.v, dtype=float) - self.shift) / self.delta)

    def scale(self, cov):
        v = np.asarray(self.v, dtype=float)
        return float(np.sqrt(self.delta**2 + v @ cov @ v))

    def expect(self, mean, cov):
        v = np.asarray(self.v, dtype=float)
        return ndtr((np.atleast_2d(mean) @ v - self.shift) / self.scale(cov))

    def sup(self):
        return 1.0

    def ridge_derivative(self, kernel, x, alpha):
        v = np.asarray(self.v, dtype=float)
        g = kernel.mean_map.T @ v
        s = self.scale(kernel.cov)
        z = (x @ g - self.shift) / s
        k = sum(alpha)
        if k == 0:
            return float(ndtr(z))
        # d^k/du^k Phi(u/s) = s^{-k} He_{k-1}(z) phi(z) (-1)^{k-1}
        he = np.polynomial.hermite_e.hermeval(z, [0] * (k - 1) + [1])
        phi = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
        coef = np.prod(g ** np.asarray(alpha))
        return float(coef * (-1) ** (k - 1) * he * phi / s**k)

