"""Operator specifications and checks of their standing hypotheses.

An operator of the class handled here acts on smooth functions of
``x in R^N`` as

    A phi = sum_{i,j<p0} q_ij(x) D_ij phi + sum_{i,j} b_ij x_j D_i phi
            + sum_{j<p0} F_j(x) D_j phi,

i.e. the diffusion matrix only touches the first ``p0`` coordinates.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._linalg import PSD_TOL, SYM_TOL, as_square, is_symmetric, lambda_min

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OperatorSpec:
    """Coefficients ``(Q(.), B, F(.))`` of an operator in block form.

    ``q0_eval`` maps a point to the ``p0 x p0`` diffusion block. ``nu_eval``
    is optional; when absent the ellipticity function is ``lambda_min(Q(x))``.
    """

    dim_n: int
    p0: int
    drift_b: np.ndarray
    q0_eval: Evaluator
    nu_floor: float
    f_eval: Optional[Evaluator] = None
    nu_eval: Optional[Callable[[np.ndarray], float]] = None
    name: str = "operator"

    def __post_init__(self):
        b = as_square(self.drift_b, "drift_b")
        if b.shape[0] != self.dim_n:
            raise ValueError(f"drift_b is {b.shape}, expected {self.dim_n}x{self.dim_n}")
        if not 1 <= self.p0 <= self.dim_n:
            raise ValueError(f"p0={self.p0} outside [1, {self.dim_n}]")
        if not self.nu_floor > 0:
            raise ValueError("nu_floor must be positive")
        b.setflags(write=False)
        object.__setattr__(self, "drift_b", b)

    @property
    def degenerate(self):
        return self.p0 < self.dim_n

    def q0(self, x):
        q = np.atleast_2d(np.asarray(self.q0_eval(np.asarray(x, dtype=float)), dtype=float))
        if q.shape != (self.p0, self.p0):
            raise ValueError(f"q0_eval returned shape {q.shape}, expected {(self.p0, self.p0)}")
        return q

    def q_full(self, x):
        """Diffusion matrix padded with zeros to ``N x N``."""
        out = np.zeros((self.dim_n, self.dim_n))
        out[: self.p0, : self.p0] = self.q0(x)
        return out

    def drift_f(self, x):
        if self.f_eval is None:
            return np.zeros(self.p0)
        return np.asarray(self.f_eval(np.asarray(x, dtype=float)), dtype=float).reshape(self.p0)

    def nu(self, x):
        if self.nu_eval is not None:
            return float(self.nu_eval(np.asarray(x, dtype=float)))
        return lambda_min(self.q0(x))


@dataclass(frozen=True)
class ConstantOperatorSpec:
    """Ornstein-Uhlenbeck data: constant PSD ``Q`` (N x N) and drift ``B``."""

    dim_n: int
    q_const: np.ndarray
    drift_b: np.ndarray
    name: str = "ou"

    def __post_init__(self):
        q = as_square(self.q_const, "q_const")
        b = as_square(self.drift_b, "drift_b")
        if q.shape != (self.dim_n, self.dim_n) or b.shape != q.shape:
            raise ValueError("q_const and drift_b must both be dim_n x dim_n")
        if not is_symmetric(q, SYM_TOL):
            raise ValueError("q_const is not symmetric")
        if np.linalg.eigvalsh(q)[0] < -PSD_TOL:
            raise ValueError("q_const is not positive semidefinite")
        q.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "q_const", q)
        object.__setattr__(self, "drift_b", b)

    def q_full(self, x=None):
        return np.array(self.q_const)

    def to_operator_spec(self, p0=None):
        """View as an :class:`OperatorSpec` when ``Q`` is supported on a leading block."""
        q = self.q_const
        if p0 is None:
            nz = np.nonzero(np.any(np.abs(q) > SYM_TOL, axis=0))[0]
            p0 = int(nz[-1]) + 1 if nz.size else 1
        if np.any(np.abs(q[p0:, :]) > SYM_TOL) or np.any(np.abs(q[:, p0:]) > SYM_TOL):
            raise ValueError("Q is not supported on the leading p0 x p0 block; adapt the basis first")
        block = np.array(q[:p0, :p0])
        nu0 = lambda_min(block)
        if nu0 <= 0:
            raise ValueError("leading block of Q is not positive definite")
        return OperatorSpec(
            dim_n=self.dim_n,
            p0=p0,
            drift_b=np.array(self.drift_b),
            q0_eval=lambda x, _b=block: _b,
            nu_floor=nu0,
            name=self.name,
        )


def kolmogorov(n=2):
    """Chain ``x_0 -> x_1 -> ... `` with unit diffusion in ``x_0`` (b_{i+1,i} = 1)."""
    q = np.zeros((n, n))
    q[0, 0] = 1.0
    b = np.diag(np.ones(n - 1), -1)
    return ConstantOperatorSpec(n, q, b, name=f"kolmogorov{n}")


@dataclass
class Check:
    name: str
    passed: bool
    value: float = float("nan")
    witness: Optional[tuple] = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def by_prefix(self, prefix):
        return [c for c in self.checks if c.name.startswith(prefix)]

    def to_text(self):
        lines = [f"overall: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            w = "" if c.witness is None else f" at x={list(np.round(c.witness, 6))}"
            lines.append(f"  [{'ok' if c.passed else 'FAIL'}] {c.name}: {c.value:.6g}{w} {c.detail}".rstrip())
        for k, v in self.constants.items():
            lines.append(f"  empirical {k} = {v:.6g}")
        return "\n".join(lines)


def _fd_derivatives(fun, x, h, order):
    """Central-difference estimates of all derivatives of ``fun`` of the given order.

    Returns an array stacked along a leading axis, one slice per multi-index.
    """
    n = x.size
    eye = np.eye(n) * h
    if order == 0:
        return np.asarray(fun(x), dtype=float)[None]
    if order == 1:
        return np.stack([(np.asarray(fun(x + eye[i])) - np.asarray(fun(x - eye[i]))) / (2 * h) for i in range(n)])
    out = []
    f0 = np.asarray(fun(x), dtype=float)
    for i in range(n):
        for j in range(i, n):
            if i == j:
                d = (np.asarray(fun(x + eye[i])) - 2 * f0 + np.asarray(fun(x - eye[i]))) / h**2
            else:
                d = (
                    np.asarray(fun(x + eye[i] + eye[j]))
                    - np.asarray(fun(x + eye[i] - eye[j]))
                    - np.asarray(fun(x - eye[i] + eye[j]))
                    + np.asarray(fun(x - eye[i] - eye[j]))
                ) / (4 * h**2)
            out.append(d)
    return np.stack(out)


def _growth_check(name, radii, ratios, points, growth_limit, slope_limit):
    ratios = np.asarray(ratios)
    k = int(np.argmax(ratios))
    const = float(ratios[k])
    ok = np.isfinite(const) and const <= growth_limit
    detail = ""
    # boundedness is judged on the far field: the log-log trend of the ratio for |x| >= 1
    far = radii >= 1.0
    if ok and np.count_nonzero(far) >= 2:
        lr = np.log1p(radii[far])
        if lr.max() - lr.min() > np.log(1.1):
            lv = np.log(np.maximum(ratios[far], 1e-300))
            slope = float(np.polyfit(lr, lv, 1)[0])
            detail = f"(far-field log-log slope {slope:.3g})"
            ok = slope <= slope_limit
    elif not ok:
        detail = f"(exceeds limit {growth_limit:g})"
    return Check(name, bool(ok), const, tuple(points[k]), detail)


def validate_hypotheses(spec, sample_points, fd_step, growth_limit=1e6, slope_limit=0.5):
    """Check symmetry, ellipticity and growth bounds of ``spec`` at sample points.

    Growth constants are reported as the largest observed ratio
    ``|D^alpha q_ij(x)| / (w(x) sqrt(nu(x)))`` with ``w = 1 + |x|`` for
    ``alpha = 0`` and ``w = 1`` otherwise; a check fails when that ratio
    exceeds ``growth_limit`` or keeps growing polynomially faster than
    ``|x|^slope_limit`` over the samples with ``|x| >= 1``.
    """
    pts = [np.asarray(p, dtype=float).reshape(-1) for p in sample_points]
    if not pts:
        raise ValueError("sample_points must be nonempty")
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    for p in pts:
        if p.size != spec.dim_n:
            raise ValueError(f"sample point of length {p.size}, expected {spec.dim_n}")
    report = ValidationReport()
    radii = np.array([np.linalg.norm(p) for p in pts])
    q_ratios = {k: [] for k in range(3)}
    f_ratios = {k: [] for k in range(3)}
    for i, x in enumerate(pts):
        q = spec.q0(x)
        sym_err = float(np.max(np.abs(q - q.T)))
        report.checks.append(Check(f"symmetry[{i}]", sym_err <= SYM_TOL, sym_err, tuple(x)))
        lam = lambda_min(q)
        report.checks.append(
            Check(f"ellipticity[{i}]", lam >= spec.nu_floor - PSD_TOL, lam, tuple(x), f"(floor {spec.nu_floor:g})")
        )
        nu = max(spec.nu(x), 1e-300)
        for order in range(3):
            d = _fd_derivatives(spec.q0, x, fd_step, order)
            w = (1.0 + radii[i]) if order == 0 else 1.0
            q_ratios[order].append(float(np.max(np.abs(d))) / (w * np.sqrt(nu)))
            if spec.f_eval is not None:
                dfv = _fd_derivatives(spec.drift_f, x, fd_step, order)
                f_ratios[order].append(float(np.max(np.abs(dfv))) / np.sqrt(nu))
    for order in range(3):
        c = _growth_check(f"growth_q[order={order}]", radii, q_ratios[order], pts, growth_limit, slope_limit)
        report.checks.append(c)
        report.constants[f"C_q{order}"] = c.value
        if spec.f_eval is not None:
            c = _growth_check(f"growth_f[order={order}]", radii, f_ratios[order], pts, growth_limit, slope_limit)
            report.checks.append(c)
            report.constants[f"C_f{order}"] = c.value
    return report


@dataclass(frozen=True)
class TraceInequality:
    lhs: float
    rhs: float
    holds: bool


def trace_inequality_check(q_mat, a_mat, m):
    """Compare ``Tr(QA)`` with ``lambda_min(Q_0) Tr(A_1)``.

    ``Q`` must vanish outside its leading ``m x m`` block ``Q_0``, which must be
    positive definite; ``A_1`` is the leading ``m x m`` block of ``A``.
    """
    q = as_square(q_mat, "q_mat")
    a = as_square(a_mat, "a_mat")
    if q.shape != a.shape:
        raise ValueError("q_mat and a_mat differ in shape")
    if not 1 <= m <= q.shape[0]:
        raise ValueError(f"m={m} out of range")
    if np.any(np.abs(q[m:, :]) > SYM_TOL) or np.any(np.abs(q[:, m:]) > SYM_TOL):
        raise ValueError("q_mat has nonzero entries outside the leading m x m block")
    q0 = q[:m, :m]
    lam = lambda_min(q0)
    if lam <= 0:
        raise ValueError("leading block of q_mat is not positive definite")
    lhs = float(np.trace(q @ a))
    rhs = lam * float(np.trace(a[:m, :m]))
    return TraceInequality(lhs, rhs, lhs >= rhs - 1e-10)
