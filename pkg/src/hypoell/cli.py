"""``hypoell`` command line: analyze, verify, simulate, fit-decay, schauder.

Exit codes: 0 when every check passes, 1 when a mathematical check fails,
2 for usage or configuration errors. Outputs go to ``--out`` (default: the
``HYPOELL_OUT`` environment variable, else ``./hypoell-out``) and are written
atomically; identical configs give byte-identical CSV files.
"""

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as cfgmod
from .basis import adapted_basis
from .config import ConfigError
from .exponents import exponent_table_csv, exponent_property_suite, qh_eval
from .kalman import hypoellipticity_report
from .norms import anisotropic_norm, isotropic_norm, write_atomic
from .operator_model import ConstantOperatorSpec
from .ou_oracle import Constant, GaussianBump, GaussianCDFRidge, SinRidge
from .pde_solver import (
    DerivativeAnnihilated,
    DirichletStepper,
    MaxPrincipleViolation,
    OracleHandle,
    SolveConfig,
    SolverHandle,
    fit_decay,
    log_times,
    resolvent_apply,
    semigroup_apply,
)
from .suites import SuiteOutcome, bernstein_suite, h_choice_suite, kalman_suite, rank_suite, trace_suite

OUT_ENV = "HYPOELL_OUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return repr(float(x))


def _map(fn, items, jobs):
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# shared config helpers


def _structure(cp, spec):
    st = cfgmod.structure_from_config(cp)
    if st is not None:
        return st
    q = spec.q_full(np.zeros(spec.dim_n))
    try:
        return adapted_basis(q, spec.drift_b)
    except ValueError as exc:
        raise ConfigError(f"cannot derive a block structure: {exc}") from None


def _solve_config(sec, **override):
    vals = {
        "epsilon": cfgmod.get_float(sec, "epsilon"),
        "radius": cfgmod.get_float(sec, "radius", positive=True),
        "spacing": cfgmod.get_float(sec, "spacing", positive=True),
        "t_final": cfgmod.get_float(sec, "t_final", positive=True),
        "dt": cfgmod.get_float(sec, "dt", positive=True),
        "theta_scheme": cfgmod.get_float(sec, "theta_scheme"),
        "peclet": sec.get("peclet", "nu0").strip(),
        "startup_steps": cfgmod.get_int(sec, "startup_steps", minimum=0),
    }
    vals.update(override)
    try:
        return SolveConfig(**vals)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


def make_datum(sec, dim):
    kind = sec.get("datum", "").strip()
    unit = np.zeros(dim)
    unit[-1] = 1.0
    v = cfgmod.parse_vector(sec["datum_v"], "datum_v") if sec.get("datum_v", "").strip() else unit
    c = cfgmod.parse_vector(sec["datum_center"], "datum_center") if sec.get("datum_center", "").strip() else np.zeros(dim)
    if v.size != dim or c.size != dim:
        raise ConfigError(f"datum vectors need {dim} entries")
    if kind == "ridge":
        return GaussianCDFRidge(tuple(v), cfgmod.get_float(sec, "datum_delta", positive=True),
                                cfgmod.get_float(sec, "datum_shift"))
    if kind == "sin":
        return SinRidge(tuple(v), cfgmod.get_float(sec, "datum_phase"))
    if kind == "bump":
        return GaussianBump(tuple(c), cfgmod.get_float(sec, "datum_width", positive=True))
    if kind == "constant":
        return Constant(cfgmod.get_float(sec, "datum_value"))
    raise ConfigError(f"unknown datum {kind!r} (ridge, sin, bump, constant)")


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(cp, out, args):
    spec = cfgmod.operator_from_config(cp)
    times = list(cfgmod.parse_vector(cfgmod.section(cp, "analyze")["probe_times"], "probe_times"))
    if any(t <= 0 for t in times):
        raise ConfigError("probe_times must be positive")
    rep = hypoellipticity_report(spec, times)
    text = rep.to_text()
    ok = rep.consistent and rep.hypoelliptic
    rec = rep.to_record()
    if ok:
        st = _structure(cp, spec)
        rec["sizes"] = " ".join(map(str, st.sizes))
        block = "[block_structure]\n" + "".join(f"{k} = {v}\n" for k, v in st.to_config().items())
        write_atomic(os.path.join(out, "block_structure.ini"), block)
        text += f"\n  block sizes: ({', '.join(map(str, st.sizes))})"
    else:
        text += "\n  verdict: not hypoelliptic" if rep.consistent else "\n  verdict: characterizations disagree"
    write_atomic(os.path.join(out, "report.txt"), text + "\n")
    write_atomic(os.path.join(out, "report.csv"), _csv_text(["key", "value"], sorted((k, str(v)) for k, v in rec.items())))
    print(text)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# verify


def qh_mutated(beta, h):
    """Deliberately wrong ``q_h`` (drops the correction at ``h = 1``) for self-tests."""
    return qh_eval(beta, 0) if h == 1 else qh_eval(beta, h)


MUTATIONS = {"qh": qh_mutated}


def _run_suite(task):
    name, kw, seed = task
    rng = np.random.default_rng(seed)
    if name == "qh_properties":
        res = exponent_property_suite(kw["r_max"], kw["k_max"], kw["h_max"], qh=kw["qh"])
        return [SuiteOutcome.from_property("qh_properties", r) for r in res.results]
    if name == "kalman":
        return [kalman_suite(rng, kw["pairs"])]
    if name == "rank":
        return [rank_suite(rng, kw["draws"], kw["l_max"], kw["r_max"])]
    if name == "h_choice":
        return [h_choice_suite(rng, max(1, kw["draws"] // 4), kw["l_max"], kw["r_max"])]
    if name == "trace":
        return [trace_suite(rng, kw["pairs"])]
    if name == "bernstein":
        return [bernstein_suite(kw["k_max"], kw["r_max"])]
    raise ValueError(name)


def cmd_verify(cp, out, args):
    sec = cfgmod.section(cp, "verify")
    for key, val in sec.items():
        if not str(val).strip():
            raise ConfigError(f"verify.{key} is empty")
    g = lambda k: cfgmod.get_int(sec, k, minimum=0)
    qh = qh_eval
    if args.mutate:
        if args.mutate not in MUTATIONS:
            raise ConfigError(f"unknown mutation {args.mutate!r} (known: {', '.join(MUTATIONS)})")
        qh = MUTATIONS[args.mutate]
    seeds = np.random.SeedSequence(args.seed).generate_state(6, dtype=np.uint64)
    tasks = [
        ("qh_properties", {"r_max": g("r_max"), "k_max": g("k_max"), "h_max": g("h_max"), "qh": qh}, 0),
        ("kalman", {"pairs": g("trace_pairs") // 2}, int(seeds[0])),
        ("rank", {"draws": g("rank_draws"), "l_max": g("rank_l_max"), "r_max": g("rank_r_max")}, int(seeds[1])),
        ("h_choice", {"draws": g("rank_draws"), "l_max": g("rank_l_max"), "r_max": g("rank_r_max")}, int(seeds[2])),
        ("trace", {"pairs": g("trace_pairs")}, int(seeds[3])),
        ("bernstein", {"k_max": g("bernstein_k_max"), "r_max": g("bernstein_r_max")}, 0),
    ]
    try:
        outcomes = [o for group in _map(_run_suite, tasks, args.jobs) for o in group]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    text = "\n".join(o.line() for o in outcomes)
    ok = all(o.passed for o in outcomes)
    write_atomic(os.path.join(out, "verify.txt"), text + "\n")
    write_atomic(
        os.path.join(out, "verify.csv"),
        _csv_text(["suite", "passed", "cases", "detail"], [(o.name, int(o.passed), o.checked, o.detail) for o in outcomes]),
    )
    r_tab = g("r_max")
    write_atomic(os.path.join(out, "exponents.csv"), exponent_table_csv(r_tab, g("k_max"), g("h_max"), qh=qh))
    print(text)
    if not ok:
        bad = next(o for o in outcomes if not o.passed)
        print(f"counterexample: {bad.name}: {bad.detail}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cp, out, args):
    spec = cfgmod.operator_from_config(cp)
    sim = cfgmod.section(cp, "simulate")
    conf = _solve_config(cfgmod.section(cp, "solver"),
                         snapshot_every=cfgmod.get_int(sim, "snapshot_every", minimum=1))
    f = make_datum(sim, spec.dim_n)
    fmt = sim.get("format", "bin").strip()
    if fmt not in ("bin", "csv"):
        raise ConfigError("simulate.format must be bin or csv")
    try:
        traj = semigroup_apply(spec, conf, f)
    except MaxPrincipleViolation as exc:
        print(f"max principle violated: {exc}")
        return EXIT_FAIL
    rows = []
    for k, (t, snap) in enumerate(zip(traj.times, traj.snapshots)):
        snap.save(os.path.join(out, f"snapshot_{k:04d}.{fmt}"), fmt)
        rows.append((k, _fmt(t), _fmt(snap.sup()), _fmt(np.min(snap.values))))
    write_atomic(os.path.join(out, "trajectory.csv"), _csv_text(["index", "t", "sup_abs", "min"], rows))
    ok = traj.min_value >= -10 * conf.tol if np.min(f(traj.snapshots[0].points())) >= 0 else True
    print(f"steps {conf.n_steps}, snapshots {len(rows)}, sup {traj.max_sup:.6g} (||f|| {traj.sup_f:.6g}), "
          f"min {traj.min_value:.3e}, upwinded fraction {traj.upwind_fraction:.3f}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# fit-decay


def _fit_job(task):
    kind, spec, conf, alpha, h, f, times, probes, frac, structure, hw = task
    src = OracleHandle(spec, frac) if kind == "oracle" else SolverHandle(spec, conf, hw)
    try:
        return fit_decay(src, alpha, h, f, times, probes, structure=structure)
    except DerivativeAnnihilated as exc:
        return str(exc)


def cmd_fit_decay(cp, out, args):
    spec = cfgmod.operator_from_config(cp)
    if not cp.has_section("fit") or not cp["fit"].get("alpha", "").strip():
        raise ConfigError("fit.alpha is required")
    sec = cfgmod.section(cp, "fit")
    alphas = [cfgmod.parse_int_list(a, "alpha") for a in sec["alpha"].split(";") if a.strip()]
    for a in alphas:
        if len(a) != spec.dim_n or min(a) < 0:
            raise ConfigError(f"alpha {a} must have {spec.dim_n} non-negative entries")
    h = cfgmod.get_int(sec, "h", minimum=0)
    mode = sec["mode"].strip()
    if mode not in ("oracle", "solver", "both"):
        raise ConfigError("fit.mode must be oracle, solver or both")
    modes = ["oracle", "solver"] if mode == "both" else [mode]
    if "oracle" in modes and not isinstance(spec, ConstantOperatorSpec):
        raise ConfigError("oracle mode needs a constant-coefficient operator")
    times = log_times(cfgmod.get_float(sec, "t_lo", positive=True), cfgmod.get_float(sec, "t_hi", positive=True),
                      cfgmod.get_int(sec, "n_times", minimum=6))
    hw = cfgmod.get_float(sec, "probe_half_width", positive=True)
    npr = cfgmod.get_int(sec, "probe_count", minimum=1)
    axis = np.linspace(-hw, hw, npr) if npr > 1 else np.zeros(1)
    probes = [np.array(p) for p in np.array(np.meshgrid(*([axis] * spec.dim_n), indexing="ij")).reshape(spec.dim_n, -1).T]
    f = make_datum(sec, spec.dim_n)
    conf = _solve_config(cfgmod.section(cp, "solver"), t_final=float(times[-1])) if "solver" in modes else None
    structure = _structure(cp, spec)
    frac = cfgmod.get_float(sec, "fd_frac", positive=True)
    check_target = sec["check_target"].strip().lower()
    if check_target not in ("yes", "no"):
        raise ConfigError("fit.check_target must be yes or no")
    tasks = [(m, spec, conf, a, h, f, times, probes, frac, structure, None) for a in alphas for m in modes]
    try:
        results = _map(_fit_job, tasks, args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ok = True
    rows = []
    by_alpha = {}
    for task, res in zip(tasks, results):
        m, a = task[0], task[3]
        tag = "".join(map(str, a))
        if isinstance(res, str):
            print(f"alpha={a} mode={m}: {res}")
            rows.append((m, " ".join(map(str, a)), h, "", "", "", "", "", "annihilated"))
            ok = False
            continue
        write_atomic(os.path.join(out, f"decay_{m}_{tag}.csv"), res.to_csv())
        comp = res.compliant()
        if check_target == "yes":
            ok &= comp
        by_alpha.setdefault(a, {})[m] = res.slope
        s = res.summary()
        rows.append((m, s["alpha"], h, s["slope"], s["intercept"], s["residual"], s["target"], s["deviation"],
                     "compliant" if comp else "violated"))
        print(f"alpha={a} mode={m}: slope {res.slope:.4f} target {res.target} ({'ok' if comp else 'VIOLATED'})")
    if mode == "both":
        for a, d in by_alpha.items():
            if len(d) == 2:
                gap = abs(d["oracle"] - d["solver"])
                agree = gap <= 0.1
                ok &= agree
                print(f"alpha={a}: oracle vs solver slope gap {gap:.4f} ({'ok' if agree else 'exceeds 0.1'})")
    write_atomic(os.path.join(out, "fit_summary.csv"),
                 _csv_text(["mode", "alpha", "h", "slope", "intercept", "residual", "target", "deviation", "status"], rows))
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# schauder


class BumpSum:
    """Finite sum of weighted Gaussian bumps (picklable test datum)."""

    def __init__(self, centers, widths, weights, freq=0.0):
        self.centers = np.asarray(centers, dtype=float)
        self.widths = np.asarray(widths, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.freq = float(freq)

    def __call__(self, y):
        y = np.atleast_2d(y)
        out = np.zeros(len(y))
        for c, w, a in zip(self.centers, self.widths, self.weights):
            d = y - c
            out += a * np.exp(-np.sum(d * d, axis=1) / (2 * w * w))
        return out * np.cos(self.freq * y[:, 0])


def schauder_data(dim):
    """Five fixed smooth data of unit size and comparable spread."""
    z = np.zeros(dim)
    shift = np.full(dim, 0.5)
    return [
        BumpSum([z], [1.0], [1.0]),
        BumpSum([shift], [0.8], [1.0]),
        BumpSum([-0.6 * shift], [1.2], [1.0]),
        BumpSum([z], [1.0], [1.0], freq=1.0),
        BumpSum([0.6 * shift], [1.0], [1.0], freq=1.5),
    ]


def random_data(rng, dim, n, spread=2.0):
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 4))
        out.append(BumpSum(rng.uniform(-spread, spread, size=(k, dim)), rng.uniform(0.5, 1.5, size=k),
                           rng.uniform(-1, 1, size=k)))
    return out


def schauder_check(spec, conf, structure, lam=1.0, theta=0.5, inner=3.0, data=None, rng=None, n_random=10):
    """Contraction for random data and the Schauder ratio over fixed data."""
    stepper = DirichletStepper(spec, conf)
    box = tuple((-inner, inner) for _ in range(spec.dim_n))
    tol = 10 * conf.tol
    contraction = []
    for f in random_data(rng if rng is not None else np.random.default_rng(0), spec.dim_n, n_random):
        rr = resolvent_apply(spec, conf, f, lam, stepper=stepper)
        contraction.append((lam * rr.grid.sup(), rr.sup_f, lam * rr.grid.sup() <= rr.sup_f + tol))
    ratios = []
    for f in data if data is not None else schauder_data(spec.dim_n):
        rr = resolvent_apply(spec, conf, f, lam, stepper=stepper)
        u = rr.grid.restrict(box)
        fg = rr.grid.with_values(stepper.embed(np.asarray(f(stepper.points)))).restrict(box)
        a, b = anisotropic_norm(u, structure, 2 + theta), isotropic_norm(fg, theta)
        ratios.append((a, b, a / b))
    return contraction, ratios


def cmd_schauder(cp, out, args):
    spec = cfgmod.operator_from_config(cp)
    sec = cfgmod.section(cp, "schauder")
    conf = _solve_config(cfgmod.section(cp, "solver"), t_final=cfgmod.get_float(sec, "t_final", positive=True),
                         dt=cfgmod.get_float(sec, "dt", positive=True))
    theta = cfgmod.get_float(sec, "theta")
    if not 0 < theta < 1:
        raise ConfigError("schauder.theta must lie in (0, 1)")
    structure = _structure(cp, spec)
    contraction, ratios = schauder_check(
        spec, conf, structure, cfgmod.get_float(sec, "lambda", positive=True), theta,
        cfgmod.get_float(sec, "inner_half_width", positive=True), rng=np.random.default_rng(args.seed),
        n_random=cfgmod.get_int(sec, "n_random", minimum=1),
    )
    write_atomic(os.path.join(out, "contraction.csv"),
                 _csv_text(["index", "lambda_sup_R_f", "sup_f", "holds"],
                           [(i, _fmt(a), _fmt(b), int(c)) for i, (a, b, c) in enumerate(contraction)]))
    write_atomic(os.path.join(out, "schauder.csv"),
                 _csv_text(["datum", "anisotropic_R_f", "isotropic_f", "ratio"],
                           [(i, _fmt(a), _fmt(b), _fmt(r)) for i, (a, b, r) in enumerate(ratios)]))
    rs = [r for _, _, r in ratios]
    spread = max(rs) / min(rs)
    c_ok = all(c for _, _, c in contraction)
    print(f"contraction holds for {sum(c for _, _, c in contraction)}/{len(contraction)} data")
    print(f"Schauder ratios {', '.join(f'{r:.4f}' for r in rs)}; max/min {spread:.3f} (limit 3)")
    return EXIT_OK if c_ok and spread < 3 else EXIT_FAIL


# ---------------------------------------------------------------------------

COMMANDS = {
    "analyze": cmd_analyze,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "fit-decay": cmd_fit_decay,
    "schauder": cmd_schauder,
}


def build_parser():
    p = argparse.ArgumentParser(prog="hypoell", description="Analyze and verify degenerate hypoelliptic operators.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./hypoell-out)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent jobs")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized suites (unsigned 64-bit)")
    p.add_argument("--mutate", default=None, help="inject a known fault (self-test); e.g. qh")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.jobs < 1 or not 0 <= args.seed < 2**64:
        print("error: --jobs must be >= 1 and --seed an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or os.environ.get(OUT_ENV) or "hypoell-out"
    try:
        cp = cfgmod.load(args.config)
        os.makedirs(out, exist_ok=True)
        return COMMANDS[args.command](cp, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
