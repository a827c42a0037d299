"""Command-line front end: geometry -> capacitances -> charge-transfer artifacts.

All file outputs use fixed 9-significant-digit float formatting so identical
inputs and options reproduce byte-identical CSV/JSON artifacts.  Every run
writes a manifest (<output>.manifest.json, written last) listing the command,
input hashes, options and output files; the manifest carries the wall time
and is the one file excluded from byte-identical reproducibility.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import replace

from . import __version__
from .analysis import (
    AnalysisError,
    compare_report,
    dotsize_sweep,
    misalign_sweep,
    stability_diagram,
)
from .capsolve import AssemblyError, MaxwellMatrix, SolveOptions, SolverError, solve
from .charging import ChargingError, ModelCaps, delta_q, delta_q_oracle, reduce_caps
from .constants import MV
from .geometry import DeviceError, load_device, mesh_device
from .validation import run_validation

JOBS_ENV = "DQDCAP_JOBS"
_RANGE_FLAGS = ("--dx", "--dy", "--r", "--window-mv", "--air-gap-nm")
_RANGE_RE = re.compile(r"^-\d+(\.\d+)?(:-?\d+(\.\d+)?){0,2}$")


class CliError(ValueError):
    pass


def _fmt(x) -> str:
    if x is None:
        return ""
    return "%.9g" % float(x)


def _round_floats(obj):
    if isinstance(obj, float):
        return float(_fmt(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_round_floats(obj), f, indent=2)
        f.write("\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path, argv, inputs, options, outputs, t0):
    manifest = {
        "command": ["dqdcap"] + list(argv),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "options": {k: (str(v) if not isinstance(v, (int, float, bool, type(None))) else v)
                    for k, v in options.items()},
        "version": __version__,
        "wall_time_s": time.perf_counter() - t0,
        "outputs": [str(p) for p in outputs],
    }
    _write_json(f"{out_path}.manifest.json", manifest)


def parse_range(text):
    """min:max:step (inclusive), or a single value."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return [float(parts[0])]
        lo, hi, step = (float(parts[0]), float(parts[1]),
                        float(parts[2]) if len(parts) > 2 else 1.0)
    except ValueError:
        raise CliError(f"bad range {text!r}; expected min:max:step") from None
    if step <= 0 or hi < lo:
        raise CliError(f"bad range {text!r}; expected min:max:step with step > 0")
    n = int(round((hi - lo) / step))
    return [lo + i * step for i in range(n + 1)]


def _join_range_args(argv):
    """argparse treats '-90:90:10' as an option; pre-join it onto its flag."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _RANGE_FLAGS and i + 1 < len(argv) and _RANGE_RE.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def _solver_options(args, epsilon_r):
    return SolveOptions(
        mode=args.mode, epsilon_r=epsilon_r, p=args.p,
        mac_ratio=args.mac_ratio, krylov_tol=args.tol, leaf_size=args.leaf_size,
    )


def _add_solver_flags(sub):
    sub.add_argument("--mode", choices=("dense", "accelerated"), default="dense")
    sub.add_argument("--h-max", type=float, default=10.0, help="max panel edge, nm")
    sub.add_argument("--epsilon-r", type=float, default=None,
                     help="override the device relative permittivity")
    sub.add_argument("--p", type=int, default=3, help="multipole expansion order")
    sub.add_argument("--mac-ratio", type=float, default=0.5)
    sub.add_argument("--tol", type=float, default=1e-6, help="Krylov relative residual")
    sub.add_argument("--leaf-size", type=int, default=32)
    sub.add_argument("--jobs", type=int, default=None,
                     help=f"worker count (default ${JOBS_ENV} or 1)")


def _jobs(args):
    if args.jobs is not None:
        return max(1, args.jobs)
    return max(1, int(os.environ.get(JOBS_ENV, "1")))


def _load_caps(path):
    """Accept either a MaxwellMatrix JSON (with roles) or a ModelCaps JSON."""
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    if "entries_aF" in obj:
        maxwell = MaxwellMatrix.from_json(obj)
        return reduce_caps(maxwell), maxwell
    return ModelCaps.from_json(obj), None


def _cmd_extract(args, argv):
    t0 = time.perf_counter()
    spec = load_device(args.geometry)
    if args.epsilon_r is not None:
        spec = replace(spec, epsilon_r=args.epsilon_r)
    if args.air_gap_nm is not None:
        spec = spec.with_air_gap(args.air_gap_nm)
    mesh = mesh_device(spec, args.h_max)
    maxwell = solve(mesh, _solver_options(args, spec.epsilon_r), jobs=_jobs(args),
                    roles=spec.roles)
    _write_json(args.out, maxwell.to_json())
    print(f"wrote {args.out}: {maxwell.n_cond} conductors, {mesh.n_panels} panels, "
          f"asymmetry {maxwell.asymmetry:.2e}")
    _write_manifest(args.out, argv, [args.geometry], vars(args), [args.out], t0)
    return 0


def _cmd_stability(args, argv):
    t0 = time.perf_counter()
    caps, _ = _load_caps(args.caps)
    ranges = None
    if args.window_mv is not None:
        w = abs(args.window_mv) * MV
        ranges = ((-w, w), (-w, w))
    diag = stability_diagram(caps, v_ranges=ranges, n=args.n)
    grid_path = f"{args.out_prefix}_grid.csv"
    with open(grid_path, "w", encoding="utf-8") as f:
        f.write("v_sl_mV,v_sr_mV,x\n")
        for i, vsl in enumerate(diag.v_sl):
            for j, vsr in enumerate(diag.v_sr):
                f.write(f"{_fmt(vsl / MV)},{_fmt(vsr / MV)},{diag.grid[i, j]}\n")
    lines_path = f"{args.out_prefix}_boundaries.json"
    metrics = {
        "dV_SL_mV": diag.dv_sl / MV if diag.dv_sl else None,
        "dV_SR_mV": diag.dv_sr / MV if diag.dv_sr else None,
        "theta_deg": diag.theta_deg,
        "n_boundaries": len(diag.boundaries),
    }
    _write_json(lines_path, {"boundaries": [b.to_json() for b in diag.boundaries],
                             "metrics": metrics})
    print(f"dV_SL={_fmt(metrics['dV_SL_mV'])} mV dV_SR={_fmt(metrics['dV_SR_mV'])} mV "
          f"theta={_fmt(metrics['theta_deg'])} deg ({len(diag.boundaries)} lines)")
    _write_manifest(args.out_prefix, argv, [args.caps], vars(args),
                    [grid_path, lines_path], t0)
    return 0


def _cmd_induced_charge(args, argv):
    t0 = time.perf_counter()
    caps, _ = _load_caps(args.caps)
    dq = delta_q(caps)
    result = {"delta_q_e": dq, "oracle_delta_q_e": delta_q_oracle(caps)}
    print(f"delta_q = {_fmt(dq)} e")
    if args.out:
        _write_json(args.out, result)
        _write_manifest(args.out, argv, [args.caps], vars(args), [args.out], t0)
    return 0


_SWEEP_FIELDS = ("C_SLd1_aF", "C_SRd2_aF", "dV_SL_mV", "dV_SR_mV",
                 "theta_deg", "dV_SL_dB", "delta_q_e")


def _write_sweep_csv(path, sweep, axis_fields):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(axis_fields + _SWEEP_FIELDS + ("status",)) + "\n")
        for row in sweep.rows:
            cells = [_fmt(row[a]) for a in axis_fields]
            cells += [_fmt(row.get(k)) for k in _SWEEP_FIELDS]
            cells.append(row["status"])
            f.write(",".join(cells) + "\n")


def _cmd_sweep_misalign(args, argv):
    t0 = time.perf_counter()
    spec = load_device(args.geometry)
    dx = parse_range(args.dx)
    dy = parse_range(args.dy)
    opts = _solver_options(args, spec.epsilon_r)
    sweep = misalign_sweep(
        spec, (dx[0], dx[-1]), (dy[0], dy[-1]),
        step=dx[1] - dx[0] if len(dx) > 1 else 1.0,
        dy_step=dy[1] - dy[0] if len(dy) > 1 else 1.0,
        opts=opts, h_max_nm=args.h_max, jobs=_jobs(args), diagram_n=args.n)
    _write_sweep_csv(args.out, sweep, ("dx_nm", "dy_nm"))
    failed = sum(1 for r in sweep.rows if r["status"] != "ok")
    print(f"wrote {args.out}: {len(sweep.rows)} cells, {failed} failed")
    _write_manifest(args.out, argv, [args.geometry], vars(args), [args.out], t0)
    return 0


def _cmd_sweep_dotsize(args, argv):
    t0 = time.perf_counter()
    spec = load_device(args.geometry)
    sweep = dotsize_sweep(spec, parse_range(args.r),
                          opts=_solver_options(args, spec.epsilon_r),
                          h_max_nm=args.h_max, jobs=_jobs(args), diagram_n=args.n)
    _write_sweep_csv(args.out, sweep, ("R_nm",))
    failed = sum(1 for r in sweep.rows if r["status"] != "ok")
    print(f"wrote {args.out}: {len(sweep.rows)} cells, {failed} failed")
    _write_manifest(args.out, argv, [args.geometry], vars(args), [args.out], t0)
    return 0


def _cmd_validate(args, argv):
    checks = run_validation()
    width = max(len(name) for name, _, _ in checks)
    ok_all = True
    for name, ok, detail in checks:
        ok_all &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    print(f"{sum(ok for _, ok, _ in checks)}/{len(checks)} checks passed")
    return 0 if ok_all else 1


def _cmd_compare(args, argv):
    t0 = time.perf_counter()
    with open(args.caps, "r", encoding="utf-8") as f:
        maxwell = MaxwellMatrix.from_json(json.load(f))
    with open(args.measured, "r", encoding="utf-8") as f:
        measured = json.load(f)
    report = compare_report(maxwell, measured)
    header = f"{'pair':<10} {'calc aF':>9} {'meas aF':>9} {'sd':>6} {'dev/sd':>7} {'period mV':>10}"
    print(header)
    for row in report["pairs"]:
        print(f"{row['a'] + '-' + row['b']:<10} {row['calculated_aF']:>9.2f} "
              f"{row.get('measured_aF', float('nan')):>9.2f} "
              f"{row.get('sd_aF', float('nan')):>6.2f} "
              f"{(row.get('deviation_sd') or float('nan')):>7.2f} "
              f"{row['period_mV']:>10.3f}")
    if args.out:
        _write_json(args.out, report)
        _write_manifest(args.out, argv, [args.caps, args.measured], vars(args),
                        [args.out], t0)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dqdcap",
        description="Capacitance extraction and single-electron charge-transfer "
                    "analysis for buried double-dot/SET devices")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="geometry -> Maxwell capacitance matrix JSON")
    p.add_argument("--geometry", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--air-gap-nm", type=float, default=None)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("stability", help="capacitances -> stability diagram CSV + metrics")
    p.add_argument("--caps", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--n", type=int, default=201)
    p.add_argument("--window-mv", type=float, default=None,
                   help="half-width of the bias window (default: auto)")
    p.set_defaults(func=_cmd_stability)

    p = sub.add_parser("induced-charge", help="capacitances -> SET1 induced charge")
    p.add_argument("--caps", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_induced_charge)

    p = sub.add_parser("sweep-misalign", help="misalignment sweep -> CSV")
    p.add_argument("--geometry", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dx", default="-90:90:10", help="nm range min:max:step")
    p.add_argument("--dy", default="-50:50:10")
    p.add_argument("--n", type=int, default=201, help="diagram grid size per cell")
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_sweep_misalign)

    p = sub.add_parser("sweep-dotsize", help="dot-size sweep -> CSV")
    p.add_argument("--geometry", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--r", default="10:50:10", help="dot size R range, nm")
    p.add_argument("--n", type=int, default=201)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_sweep_dotsize)

    p = sub.add_parser("validate", help="run the sphere/plate/toy-network oracle suite")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("compare", help="Maxwell matrix vs measured values report")
    p.add_argument("--caps", required=True)
    p.add_argument("--measured", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)
    return parser


def run(argv) -> int:
    argv = _join_range_args(list(argv))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (DeviceError, ChargingError, SolverError, AssemblyError,
            AnalysisError, CliError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
