"""Command-line driver: solve, profile-csv, residual-scan, evolve, critnorm, basis.

Exit codes: 0 success, 2 invalid flags or input, 3 solver or numerical
guard failure, 4 blowup during evolution.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import approx as ap
from . import basis
from . import evolve as ev
from . import matching as mt
from . import segment_solver as ss

SCHEMA = 1
EXIT_USAGE, EXIT_SOLVER, EXIT_BLOWUP = 2, 3, 4


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json(obj, indent=0) -> str:
    """Deterministic JSON with 17-significant-digit floats (non-finite floats become null)."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    atomic_write(path, "\n".join(lines) + "\n")


def write_json(path, obj):
    atomic_write(path, _json(obj) + "\n")


def _convergence_dict(c: ss.ConvergenceReport):
    extra = {k: v for k, v in c.extra.items() if isinstance(v, (int, float, np.floating, np.integer))}
    return {"iterations": c.iterations, "final_update_supnorm": c.final_update_supnorm,
            "contraction_ratio": c.contraction_ratio, "update_history": list(c.update_history),
            "interp_error": c.interp_error, "extra": extra}


def _segment_dict(s: ss.SegmentSolution):
    return {"label": s.label, "region": s.region.value, "kind": s.kind, "map_k": s.map_k,
            "interval": list(s.interval), "q_base": s.q_base,
            "gap": s.gap.tolist(), "Q_dev": s.q_dev.tolist(), "Qprime": s.qprime.tolist(),
            "nodes": s.nodes.tolist(), "Q": s.q_values.tolist(),
            "params": dict(s.params),
            "convergence": _convergence_dict(s.convergence)}


def profile_to_archive(p: mt.GlobalProfile) -> dict:
    ce = p.cone_expansion
    ff = p.farfield
    newton = {k: {"iterations": v.iterations, "residual_history": list(v.residual_history),
                  "determinant": v.determinant, "condition": v.condition}
              for k, v in p.matching.items() if isinstance(v, mt.NewtonReport)}
    scalars = {k: float(v) for k, v in p.matching.items() if not isinstance(v, mt.NewtonReport)}
    return {
        "schema": SCHEMA,
        "tool_version": __version__,
        "params": p.params.as_dict(),
        "cone_trace": {k: float(v) for k, v in p.cone_trace.items()},
        "continuity_residual": p.continuity_residual,
        "cone_expansion": None if ce is None else {
            "C1": ce.C1, "C2": ce.C2, "C3": ce.C3, "Q4_envelope": ce.Q4_envelope,
            "C1_right": ce.C1_right, "C2_right": ce.C2_right, "window": list(ce.window)},
        "farfield": None if ff is None else {"limit": ff.limit, "coeff": ff.coeff,
                                             "remainder_envelope": ff.remainder_envelope},
        "matching": scalars,
        "newton": newton,
        "segments": [_segment_dict(s) for s in p.segments],
    }


def _arr(v):
    return np.array([np.nan if x is None else x for x in v], dtype=float)


def archive_to_profile(doc: dict) -> mt.GlobalProfile:
    try:
        if doc.get("schema") != SCHEMA:
            raise UsageError(f"unsupported archive schema {doc.get('schema')!r}")
        segs = []
        for s in doc["segments"]:
            c = s["convergence"]
            conv = ss.ConvergenceReport(int(c["iterations"]), float(c["final_update_supnorm"] or 0.0),
                                        float(c["contraction_ratio"] or 0.0), tuple(_arr(c["update_history"])),
                                        float(c["interp_error"] or 0.0), dict(c["extra"]))
            segs.append(ss.SegmentSolution(tuple(s["interval"]), basis.Region(s["region"]), s["kind"],
                                           _arr(s["gap"]), float(s["q_base"]), _arr(s["Q_dev"]),
                                           _arr(s["Qprime"]), dict(s["params"]), conv, s["label"],
                                           float(s["map_k"])))
        pd = dict(doc["params"])
        mode = ss.Mode(pd.pop("mode"))
        params = ss.ShootingParams(**{k: float(v) for k, v in pd.items()}, mode=mode)
        ce = doc.get("cone_expansion")
        ce = None if ce is None else mt.ConeExpansion(ce["C1"], ce["C2"], ce["C3"], ce["Q4_envelope"],
                                                       ce["C1_right"], ce["C2_right"], tuple(ce["window"]))
        ff = doc.get("farfield")
        ff = None if ff is None else mt.FarField(ff["limit"], ff["coeff"], ff["remainder_envelope"])
        return mt.GlobalProfile(tuple(segs), params, dict(doc["cone_trace"]), ce, ff, dict(doc.get("matching", {})))
    except UsageError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed archive: {exc}") from exc


def read_archive(path) -> mt.GlobalProfile:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read archive {path}: {exc}") from exc
    return archive_to_profile(doc)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _picard_config(args):
    kw = {}
    for name in ("mesh_points", "farfield_cutoff", "tol", "max_iter", "endpoint_offset"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    try:
        return ss.PicardConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_solve(args) -> int:
    if args.d0 is None:
        raise UsageError("--d0 is required")
    cfg = _picard_config(args)
    if args.mode == "large":
        if args.d1t is None:
            raise UsageError("--mode large needs --d1t")
        prof = mt.glue_at_cone(args.d0, mode="large", d1t=args.d1t, cfg=cfg)
    else:
        if args.d1t is not None:
            raise UsageError("--d1t applies only to --mode large")
        prof = mt.glue_at_cone(args.d0, mode="small", q1=args.q1, cfg=cfg)
    write_json(args.out, profile_to_archive(prof))
    if prof.mode is ss.Mode.LARGE:
        qmax = prof.max_abs_on(0.0, prof.matching["ell"])
    else:
        qmax = max(float(np.max(np.abs(s.q_values))) for s in prof.segments)
    print(f"continuity_residual={fmt(prof.continuity_residual)} max_abs_Q={fmt(qmax)} "
          f"farfield_limit={fmt(prof.farfield.limit)}")
    return 0


def graded_samples(prof: mt.GlobalProfile, n: int):
    """n sample gaps: half inside (graded toward a = 1), half outside (graded on both ends)."""
    a_lo = prof.segments[0].nodes[0]
    off = max(s.gap[0] for s in prof.segments[2:3])
    n_in = n // 2
    n_out = n - n_in
    left = -np.geomspace(1.0 - max(a_lo, 1e-3), off, n_in) if n_in else np.empty(0)
    right = np.geomspace(off, prof.a_max - 1.0, n_out) if n_out else np.empty(0)
    return np.concatenate([left, right])


def cmd_profile_csv(args) -> int:
    prof = read_archive(args.input)
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    gaps = graded_samples(prof, args.samples)
    q, qp = prof.evaluate_gap(gaps)
    res = np.zeros_like(gaps)
    idx = prof._segment_index(gaps)
    for k, seg in enumerate(prof.segments):
        m = idx == k
        if not np.any(m):
            continue
        rp = ss.ode_residual(seg)
        if rp.gap.size:
            res[m] = np.interp(gaps[m], rp.gap, np.abs(rp.residual))
    write_csv(args.out, ["a", "Q", "Qprime", "ode_residual"], zip(1.0 + gaps, q, qp, res))
    return 0


def cmd_residual_scan(args) -> int:
    prof = read_archive(args.input)
    if not (0 < args.t_min < args.t_max) or args.t_steps < 4:
        raise UsageError("need 0 < t-min < t-max and t-steps >= 4")
    f = ap.ApproxSolutionField(prof, ap.CutoffSpec(args.cutoff_width), include_q4=not args.drop_q4)
    ts = np.geomspace(args.t_min, args.t_max, args.t_steps)
    kw = {}
    try:
        if args.method == "fd":
            h = args.fd_step if args.fd_step is not None else args.cutoff_width / 20.0
            if not 0 < h <= args.cutoff_width / 20.0:
                raise ap.StepError("FD step must lie in (0, C/20]")
            kw = {"h_r": h, "h_t": h}
        rows = [ap.residual_norms(f, t, method=args.method, **kw) for t in ts]
    except ap.StepError as exc:
        raise NumericalGuard(str(exc)) from exc
    write_csv(args.out, ["t", "l2", "strip_sup"], [(r.t, r.l2, r.strip_sup) for r in rows])
    l2e, l2r = ap.decay_fit(ts, [r.l2 for r in rows])
    sse, ssr = ap.decay_fit(ts, [r.strip_sup for r in rows])
    write_json(str(args.out) + ".json", {"schema": SCHEMA, "cutoff_width": args.cutoff_width,
                                         "include_q4": not args.drop_q4, "method": args.method,
                                         "l2_exponent": l2e, "l2_r2": l2r,
                                         "strip_sup_exponent": sse, "strip_sup_r2": ssr})
    print(f"l2_exponent={fmt(l2e)} strip_sup_exponent={fmt(sse)}")
    return 0


def cmd_evolve(args) -> int:
    prof = read_archive(args.input)
    C = args.cutoff_width
    f = ap.ApproxSolutionField(prof, ap.CutoffSpec(C))
    if args.T <= 2 * C or args.horizon_factor <= 1 or args.cells < 16 or args.delta1 < 0:
        raise UsageError("need T > 2C, horizon-factor > 1, cells >= 16, delta1 >= 0")
    t_end = args.horizon_factor * args.T
    grid = ev.RadialGrid(t_end + 2 * C + 12.0 * (t_end + 2 * C) / args.cells, args.cells)
    try:
        rep = ev.run_persistence(f, args.T, args.delta1, args.horizon_factor, grid)
    except ev.ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    write_csv(args.out, ["t", "sup_eps", "energy_eps", "energy_total"],
              zip(rep.times, rep.sup_eps, rep.energy_eps, rep.energy_total))
    doc = {"schema": SCHEMA}
    doc.update(rep.as_dict())
    write_json(str(args.out) + ".json", doc)
    print(f"blowup={'true' if rep.blowup else 'false'} gamma_fit={fmt(rep.gamma_fit)} "
          f"persistent={'true' if rep.persistent else 'false'}")
    return EXIT_BLOWUP if rep.blowup else 0


def critnorm_data(prof: mt.GlobalProfile, T: float, k_max: float, component="u", subtract_tail=False,
                  C=1.0, h_fine=0.05):
    """Windowed radial samples of u_approx(T) - c1 (or u_t) on a graded grid."""
    f = ap.ApproxSolutionField(prof, ap.CutoffSpec(C))
    R = 0.9 * prof.a_max * T
    h_max = 0.9 * (math.pi / 4) / k_max
    if h_max < h_fine:
        raise ap.AliasingError(f"k_max = {k_max} needs a step below the fine step {h_fine}")
    r = ap.graded_radial_grid(3.0 * T, h_fine, R, h_max)
    u, ut = f.evaluate(T, r)
    c1, c2, _ = prof.farfield
    w = ap.smooth_window(r, R, 0.3 * R)
    with np.errstate(divide="ignore"):
        tail = np.where(r > 0, c2 * T / r, 0.0) * (1.0 - ap.smooth_window(r, 4 * T, 2 * T))
    if component == "u":
        data = u - c1 - (tail if subtract_tail else 0.0)
    else:
        data = ut - (tail / T if subtract_tail else 0.0)
    return r, data * w


def cmd_critnorm(args) -> int:
    prof = read_archive(args.input)
    if args.kmin_decades < 1 or not args.k_max > 0:
        raise UsageError("need kmin-decades >= 1 and k-max > 0")
    s = args.sobolev if args.sobolev is not None else (1.5 if args.component == "u" else 0.5)
    try:
        r, data = critnorm_data(prof, args.T, args.k_max, args.component, args.subtract_tail, args.cutoff_width)
        kmins = np.geomspace(args.k_max * 10.0 ** (-args.kmin_decades - 1), args.k_max / 10.0,
                             10 * args.kmin_decades + 1)
        n2 = ap.critical_norm_scan(r, data, kmins, args.k_max, s)
    except ap.AliasingError as exc:
        raise NumericalGuard(str(exc)) from exc
    write_csv(args.out, ["k_min", "N2"], zip(kmins, n2))
    slope, r2 = ap.log_fit(np.log(1.0 / kmins), n2)
    write_json(str(args.out) + ".json", {"schema": SCHEMA, "T": args.T, "component": args.component,
                                         "sobolev_index": s, "subtract_tail": bool(args.subtract_tail),
                                         "k_max": args.k_max, "slope": slope, "r2": r2})
    print(f"slope={fmt(slope)} r2={fmt(r2)}")
    return 0


def cmd_basis(args) -> int:
    lo, hi, n = args.a_min, args.a_max, args.samples
    if n < 2 or not lo < hi:
        raise UsageError("need a-min < a-max and samples >= 2")
    if args.table == "interior":
        if not (0 < lo and hi < 1):
            raise UsageError("interior table needs 0 < a-min < a-max < 1")
        fn = basis.phi_interior
    else:
        if not lo > 1:
            raise UsageError("exterior table needs 1 < a-min < a-max")
        fn = basis.phi_exterior
    a = np.linspace(lo, hi, n)
    p1, p2 = fn(a)
    w = basis.fd_wronskian(fn, a)
    write_csv(args.out, ["a", "phi1", "phi2", "wronskian_check"], zip(a, p1, p2, w - 4.0 / a**2))
    return 0


class NumericalGuard(RuntimeError):
    stage = "numerical-guard"


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _positive_int(s):
    v = int(s)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="corotwave", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_in=True):
        sp.add_argument("--config", help="key = value file; flags override it")
        if needs_in:
            sp.add_argument("--in", dest="input", help="profile archive (JSON)")
        sp.add_argument("--out", help="output path")

    s = sub.add_parser("solve", help="solve and glue a self-similar profile")
    common(s, needs_in=False)
    s.add_argument("--d0", type=float)
    s.add_argument("--mode", choices=["small", "large"], default="small")
    s.add_argument("--d1t", type=float)
    s.add_argument("--q1", type=float, default=0.0)
    s.add_argument("--mesh-points", dest="mesh_points", type=_positive_int)
    s.add_argument("--farfield-cutoff", dest="farfield_cutoff", type=float)
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", dest="max_iter", type=_positive_int)
    s.add_argument("--endpoint-offset", dest="endpoint_offset", type=float)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("profile-csv", help="sample an archive to CSV")
    common(s)
    s.add_argument("--samples", type=_positive_int, default=1000)
    s.set_defaults(func=cmd_profile_csv)

    s = sub.add_parser("residual-scan", help="decay of the regularization residual")
    common(s)
    s.add_argument("--cutoff-width", dest="cutoff_width", type=float, default=1.0)
    s.add_argument("--t-min", dest="t_min", type=float, default=50.0)
    s.add_argument("--t-max", dest="t_max", type=float, default=800.0)
    s.add_argument("--t-steps", dest="t_steps", type=int, default=9)
    s.add_argument("--method", choices=["analytic", "fd"], default="analytic")
    s.add_argument("--fd-step", dest="fd_step", type=float)
    s.add_argument("--drop-q4", dest="drop_q4", action="store_true")
    s.set_defaults(func=cmd_residual_scan)

    s = sub.add_parser("evolve", help="evolve u_approx plus a perturbation")
    common(s)
    s.add_argument("--T", dest="T", type=float, default=50.0)
    s.add_argument("--delta1", type=float, default=1e-3)
    s.add_argument("--horizon-factor", dest="horizon_factor", type=float, default=20.0)
    s.add_argument("--cells", type=int, default=8192)
    s.add_argument("--cutoff-width", dest="cutoff_width", type=float, default=1.0)
    s.set_defaults(func=cmd_evolve)

    s = sub.add_parser("critnorm", help="band-limited critical Sobolev norm scan")
    common(s)
    s.add_argument("--T", dest="T", type=float, default=10.0)
    s.add_argument("--kmin-decades", dest="kmin_decades", type=int, default=3)
    s.add_argument("--k-max", dest="k_max", type=float, default=1e-2)
    s.add_argument("--component", choices=["u", "ut"], default="u")
    s.add_argument("--sobolev", type=float, help="Sobolev index (default 1.5 for u, 0.5 for ut)")
    s.add_argument("--subtract-tail", dest="subtract_tail", action="store_true")
    s.add_argument("--cutoff-width", dest="cutoff_width", type=float, default=1.0)
    s.set_defaults(func=cmd_critnorm)

    s = sub.add_parser("basis", help="tabulate the fundamental systems")
    common(s, needs_in=False)
    s.add_argument("--table", choices=["interior", "exterior"], default="interior")
    s.add_argument("--a-min", dest="a_min", type=float, default=0.1)
    s.add_argument("--a-max", dest="a_max", type=float, default=0.9)
    s.add_argument("--samples", type=_positive_int, default=81)
    s.set_defaults(func=cmd_basis)
    return p


def read_config(path) -> dict:
    """Parse `key = value` lines; `#` starts a comment. Keys use flag names without dashes."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _apply_config(parser, argv, args):
    """Re-parse with config values inserted before the explicit flags, so flags win."""
    if not getattr(args, "config", None):
        return args
    cfg = read_config(args.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[args.command]
    by_dest = {a.dest: a for a in sp._actions if a.option_strings}
    extra = []
    for k, v in cfg.items():
        act = by_dest.get(k)
        if act is None or k == "config":
            raise UsageError(f"unknown config key {k!r} for {args.command}")
        flag = act.option_strings[-1]
        if act.nargs == 0:
            if v.lower() in ("1", "true", "yes", "on"):
                extra.append(flag)
        else:
            extra += [flag, v]
    i = argv.index(args.command)
    return parser.parse_args(argv[:i + 1] + extra + argv[i + 1:])


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _apply_config(parser, argv, args)
        if args.out is None:
            raise UsageError("--out is required")
        if hasattr(args, "input") and args.input is None:
            raise UsageError("--in is required")
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, ss.RejectedParameterError) as exc:
        print(f"corotwave {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ss.SolverError, mt.MatchingError, mt.FitError, NumericalGuard, ArithmeticError) as exc:
        stage = getattr(exc, "stage", type(exc).__name__)
        print(f"corotwave {args.command}: stage {stage}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
