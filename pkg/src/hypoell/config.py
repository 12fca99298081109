"""INI run configurations: operator data, block structure and per-command sections.

Schema (``;`` separates matrix rows, whitespace separates entries)::

    [operator]
    dimension = 2
    b = 0 0; 1 0
    q_kind = constant            # constant | polynomial | tabulated
    q = 1 0; 0 0                 # constant: full N x N PSD matrix
    p0 = 1                       # polynomial / tabulated: size of the diffusion block
    q_base = 1                   # p0 x p0 positive definite matrix
    q_coeffs = 1 0.5             # polynomial: Q(x) = q_base * sum_k c_k |x|^(2k)
    q_radii = 0 1 2              # tabulated: Q(x) = q_base * s(|x|), s linear in |x|,
    q_scales = 1 1.5 2           #   held constant beyond the last radius
    nu_floor = 1                 # optional; defaults to lambda_min(q_base) * min scale
    f_kind = none                # none | constant | polynomial
    f = 0.5                      # constant part of F (p0 entries)
    f_linear = 0 0               # polynomial: F(x) = f + f_linear x  (p0 x N)

A ``[block_structure]`` section (keys ``r``, ``sizes``, ``basis``) may supply
pre-adapted coordinates. Command sections (``[verify]``, ``[solver]``,
``[fit]``, ``[simulate]``, ``[schauder]``) are read by the CLI with the
defaults listed in :data:`DEFAULTS`.
"""

import configparser

import numpy as np

from ._linalg import lambda_min
from .basis import BlockStructure
from .operator_model import ConstantOperatorSpec, OperatorSpec


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


DEFAULTS = {
    "analyze": {"probe_times": "0.1 0.5 1 2"},
    "verify": {
        "r_max": "4", "k_max": "6", "h_max": "6",
        "rank_draws": "200", "rank_l_max": "3", "rank_r_max": "3",
        "trace_pairs": "1000", "bernstein_k_max": "4", "bernstein_r_max": "3",
    },
    "solver": {
        "epsilon": "0.02", "radius": "6", "spacing": "0.075", "t_final": "0.5", "dt": "0.005",
        "theta_scheme": "0.5", "peclet": "nu0", "startup_steps": "2",
    },
    "fit": {
        "mode": "oracle", "h": "0", "check_target": "yes", "t_lo": "0.02", "t_hi": "0.3", "n_times": "8",
        "probe_half_width": "0.2", "probe_count": "5", "fd_frac": "0.1",
        "datum": "ridge", "datum_v": "", "datum_delta": "5e-4", "datum_shift": "0",
        "datum_center": "", "datum_width": "1", "datum_phase": "0", "datum_value": "1",
    },
    "simulate": {"datum": "bump", "datum_v": "", "datum_delta": "0.5", "datum_shift": "0",
                 "datum_center": "", "datum_width": "1", "datum_phase": "0", "datum_value": "1",
                 "snapshot_every": "10", "format": "bin"},
    "schauder": {"lambda": "1", "theta": "0.5", "t_final": "8", "dt": "0.02",
                 "n_random": "10", "inner_half_width": "3"},
}


def parse_vector(text, name="vector"):
    try:
        vals = [float(v) for v in str(text).replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    if not vals:
        raise ConfigError(f"{name} is empty")
    return np.array(vals)


def parse_matrix(text, name="matrix", shape=None):
    rows = [r for r in str(text).split(";") if r.strip()]
    if not rows:
        raise ConfigError(f"{name} is empty")
    mat = [parse_vector(r, name) for r in rows]
    if len({len(r) for r in mat}) != 1:
        raise ConfigError(f"{name}: rows have different lengths")
    out = np.array(mat)
    if shape is not None and out.shape != tuple(shape):
        raise ConfigError(f"{name} is {out.shape[0]}x{out.shape[1]}, expected {shape[0]}x{shape[1]}")
    return out


def parse_int_list(text, name):
    try:
        vals = [int(v) for v in str(text).replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{name} must be a list of integers") from None
    if not vals:
        raise ConfigError(f"{name} is empty")
    return tuple(vals)


def load(path):
    """Read an INI file; parse errors become :class:`ConfigError`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return cp


def loads(text):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return cp


def section(cp, name):
    """Section values merged over :data:`DEFAULTS` (missing section -> defaults only)."""
    out = dict(DEFAULTS.get(name, {}))
    if cp.has_section(name):
        out.update(cp[name])
    return out


def _scalar_profile(kind, sec):
    if kind == "polynomial":
        c = parse_vector(sec.get("q_coeffs", ""), "q_coeffs")
        if c[0] <= 0 or np.any(c < 0):
            raise ConfigError("q_coeffs must be non-negative with a positive constant term")
        return (lambda x, _c=c: float(np.polyval(_c[::-1], float(np.dot(x, x))))), float(c[0])
    radii = parse_vector(sec.get("q_radii", ""), "q_radii")
    scales = parse_vector(sec.get("q_scales", ""), "q_scales")
    if radii.size != scales.size or radii.size < 2:
        raise ConfigError("q_radii and q_scales need the same length (at least 2)")
    if np.any(np.diff(radii) <= 0) or radii[0] < 0:
        raise ConfigError("q_radii must be increasing and non-negative")
    if np.any(scales <= 0):
        raise ConfigError("q_scales must be positive")
    return (lambda x, _r=radii, _s=scales: float(np.interp(np.linalg.norm(x), _r, _s))), float(scales.min())


def operator_from_config(cp):
    """Build a :class:`ConstantOperatorSpec` or :class:`OperatorSpec` from ``[operator]``."""
    if not cp.has_section("operator"):
        raise ConfigError("missing [operator] section")
    sec = cp["operator"]
    try:
        n = int(sec["dimension"])
    except (KeyError, ValueError):
        raise ConfigError("operator.dimension must be a positive integer") from None
    if n < 1:
        raise ConfigError("operator.dimension must be a positive integer")
    if "b" not in sec:
        raise ConfigError("operator.b is required")
    b = parse_matrix(sec["b"], "b", (n, n))
    q_kind = sec.get("q_kind", "constant").strip()
    f_kind = sec.get("f_kind", "none").strip()
    name = sec.get("name", "operator")
    if f_kind not in ("none", "constant", "polynomial"):
        raise ConfigError(f"unknown f_kind {f_kind!r}")
    try:
        if q_kind == "constant":
            q = parse_matrix(sec.get("q", ""), "q", (n, n))
            cspec = ConstantOperatorSpec(n, q, b, name=name)
            if f_kind == "none":
                return cspec
            p0 = int(sec["p0"]) if "p0" in sec else None
            base = cspec.to_operator_spec(p0)
            q_eval, nu0, p0 = base.q0_eval, base.nu_floor, base.p0
        elif q_kind in ("polynomial", "tabulated"):
            p0 = int(sec.get("p0", "0"))
            if not 1 <= p0 <= n:
                raise ConfigError("operator.p0 must lie in 1..dimension")
            q_base = parse_matrix(sec.get("q_base", ""), "q_base", (p0, p0))
            prof, smin = _scalar_profile(q_kind, sec)
            lam = lambda_min(0.5 * (q_base + q_base.T))
            if lam <= 0:
                raise ConfigError("q_base must be positive definite")
            q_eval = lambda x, _q=q_base, _p=prof: _q * _p(x)
            nu0 = lam * smin
        else:
            raise ConfigError(f"unknown q_kind {q_kind!r}")
        nu0 = float(sec.get("nu_floor", nu0))
        f_eval = None
        if f_kind != "none":
            f0 = parse_vector(sec.get("f", " ".join(["0"] * p0)), "f")
            if f0.size != p0:
                raise ConfigError(f"f needs {p0} entries")
            if f_kind == "constant":
                f_eval = lambda x, _f=f0: _f
            else:
                lin = parse_matrix(sec.get("f_linear", ""), "f_linear", (p0, n))
                f_eval = lambda x, _f=f0, _l=lin: _f + _l @ x
        return OperatorSpec(n, p0, b, q_eval, nu0, f_eval=f_eval, name=name)
    except ConfigError:
        raise
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"operator: {exc}") from None


def structure_from_config(cp):
    """The optional ``[block_structure]`` section, or ``None``."""
    if not cp.has_section("block_structure"):
        return None
    try:
        return BlockStructure.from_config(cp["block_structure"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"block_structure: {exc}") from None


def get_float(sec, key, name=None, positive=False):
    try:
        v = float(sec[key])
    except (KeyError, ValueError):
        raise ConfigError(f"{name or key} must be a number") from None
    if positive and not v > 0:
        raise ConfigError(f"{name or key} must be positive")
    return v


def get_int(sec, key, name=None, minimum=None):
    try:
        v = int(sec[key])
    except (KeyError, ValueError):
        raise ConfigError(f"{name or key} must be an integer") from None
    if minimum is not None and v < minimum:
        raise ConfigError(f"{name or key} must be at least {minimum}")
    return v
