"""Command-line entry point: GIC evaluation, case-study sweeps and helpers.

Subcommands::

    gicdro gic      --epri21 --nu-e 5.6 --nu-n 6.6
    gicdro solve    --epri21 --mode c1 --level extreme --ramp 10 --out runs/
    gicdro maglat   --lat 46.61 --lon -77.87
    gicdro vertices --level strong --delta 20
    gicdro registry --epri21
    gicdro case-export --epri21 --out epri21.json

Exit codes: 0 success, 1 solver or model failure, 2 usage error.  The
backend is chosen with the ``GICDRO_SOLVER`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import statistics
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import dro, geomag, gic, netmodel, relax, solverapi, uncertainty

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

DEFAULT_RAMPS = (0.0, 5.0, 10.0, 15.0, 20.0)
SOLVE_MODES = ("c0", "c1", "c2", "c3", "enumerate")

GIC_HEADER = ["kind", "id", "bus", "value", "unit"]
REPORT_HEADER = ["mode", "level", "band", "ramp_pct", "delta_deg", "cost_kind", "cost", "bound", "upper",
                 "gap", "status", "first_stage_cost", "omega_e", "omega_n", "omega_norm", "switched_off",
                 "generators_off", "shed_cost", "shed_pct", "iterations", "wall_s"]
SHED_HEADER = ["mode", "level", "band", "shed_pct_avg", "shed_pct_min", "shed_pct_max", "shed_pct_std"]
VERTEX_HEADER = ["index", "nu_e", "nu_n"]


class UsageError(Exception):
    """Flag values that parse but are inconsistent or out of range."""


# ------------------------------------------------------------------- helpers


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        _write_atomic(Path(out), text)
    else:
        sys.stdout.write(text)


def _add_case_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--epri21", action="store_true", help="use the embedded Epri21 benchmark")
    src.add_argument("--case", help="path to a case JSON document, or a shipped name (toy3, toy4)")
    p.add_argument("--overlay", help="base-data overlay JSON merged into the case by id")


def _load_case(args) -> netmodel.PowerCase:
    if args.epri21:
        return netmodel.build_epri21(args.overlay)
    if args.case in netmodel.SHIPPED_CASES and not Path(args.case).exists():
        if args.overlay:
            doc = netmodel.merge_overlay(netmodel.case_to_dict(netmodel.shipped_case(args.case)),
                                         json.loads(Path(args.overlay).read_text()))
            return netmodel.case_from_dict(doc)
        return netmodel.shipped_case(args.case)
    if not Path(args.case).exists():
        raise UsageError(f"case file {args.case} not found")
    return netmodel.load_case(args.case, args.overlay)


def _num(x) -> str:
    return repr(float(x))


def _fmt_ids(ids: Sequence[int]) -> str:
    return " ".join(str(i) for i in ids)


# ----------------------------------------------------------------------- gic


def gic_rows(case: netmodel.PowerCase, nu_e: float, nu_n: float) -> list[list]:
    """Per-transformer effective GIC (A) followed by per-bus qloss (MVar)."""
    state = gic.case_gic(case, gic.FieldVector(nu_e, nu_n))
    rows = []
    for t in case.transformers:
        rows.append(["transformer", t.id, case.hv_bus(t), _num(state.effective_gic[t.id]), "A"])
    for b in case.buses:
        rows.append(["bus", b.id, b.id, _num(state.qloss[b.id]), "MVar"])
    return rows


def cmd_gic(args) -> int:
    case = _load_case(args)
    _emit(_csv_text(GIC_HEADER, gic_rows(case, args.nu_e, args.nu_n)), args.out)
    return EXIT_OK


# --------------------------------------------------------------------- solve


@dataclass
class RunConfig:
    modes: list[str]
    levels: list[str]
    band: str = "55-60"
    ramps: list[float] = field(default_factory=lambda: list(DEFAULT_RAMPS))
    delta_deg: float = 2.0
    eps: float = dro.DEFAULT_EPS
    time_limit: float | None = None
    out_dir: Path = Path("gicdro-out")
    method: str = "enumerate"
    jobs: int = 1
    emit_model: bool = False
    relax: relax.RelaxConfig = field(default_factory=relax.RelaxConfig)

    def __post_init__(self):
        for m in self.modes:
            if m not in SOLVE_MODES:
                raise UsageError(f"unknown mode {m!r}")
        for r in self.ramps:
            if not 0.0 <= r <= 100.0:
                raise UsageError(f"ramp value {r} outside [0, 100]")
        if self.delta_deg <= 0 or abs(180.0 / self.delta_deg - round(180.0 / self.delta_deg)) > 1e-9:
            raise UsageError("--delta must divide 180 degrees")
        if self.eps <= 0:
            raise UsageError("--eps must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise UsageError("--time-limit must be positive")
        if self.jobs < 1:
            raise UsageError("--jobs must be at least 1")


def cell_name(mode: str, level: str, ramp_pct: float) -> str:
    return f"{mode}_{level}_r{ramp_pct:g}"


def _decision_doc(model: relax.StandardFormModel, dec: dro.FirstStageDecision) -> dict:
    return {"z_g": {str(k): v for k, v in dec.z_g.items()}, "z_a": {str(k): v for k, v in dec.z_a.items()},
            "rho_mw": {str(k): v for k, v in dec.rho.items()},
            "y": {n: float(v) for n, v in zip(model.y_names, dec.y)}}


def _decision_from_doc(model: relax.StandardFormModel, doc: dict) -> dro.FirstStageDecision:
    y = model.y_lb.copy()
    for name, v in doc["y"].items():
        y[model.y_index(name)] = v
    return dro.FirstStageDecision({int(k): int(v) for k, v in doc["z_g"].items()},
                                  {int(k): int(v) for k, v in doc["z_a"].items()},
                                  {int(k): float(v) for k, v in doc["rho_mw"].items()}, y=y)


def report_row(rep: dro.CaseReport) -> list:
    om = rep.worst_omega
    return [rep.mode, rep.level, rep.band, f"{rep.ramp_pct:g}",
            "" if rep.delta_deg is None else f"{rep.delta_deg:g}",
            "TC" if rep.mode == "c0" else "WETC", _num(rep.objective), _num(rep.bound), _num(rep.upper),
            _num(rep.gap), rep.status, _num(rep.first_stage_cost), _num(om[0]), _num(om[1]),
            _num(math.hypot(*om)), _fmt_ids(rep.switched_off), _fmt_ids(rep.generators_off),
            _num(rep.shed_cost), _num(rep.shed_pct), rep.iterations, f"{rep.wall_time:.3f}"]


def _run_cell(case: netmodel.PowerCase, cfg: RunConfig, mode: str, level: str, ramp_pct: float) -> list:
    """Solve one (mode, level, ramp) cell and write its artifacts; returns the report row."""
    spec = uncertainty.gmd_params(level, cfg.band)
    model = relax.build_standard_form(case, cfg.relax, ramp_frac=ramp_pct / 100.0, nu_max=spec.nu_max)
    name = cell_name(mode, level, ramp_pct)
    reference = None
    if mode == "c2":
        ref_path = cfg.out_dir / f"decision_{cell_name('c0', level, ramp_pct)}.json"
        if not ref_path.exists():
            _run_cell(case, cfg, "c0", level, ramp_pct)
        reference = _decision_from_doc(model, json.loads(ref_path.read_text()))
    run_mode = "c1" if mode == "enumerate" else mode
    rep = dro.run_case(case, run_mode, level, cfg.band, ramp_frac=ramp_pct / 100.0, delta_deg=cfg.delta_deg,
                       cfg=cfg.relax, eps=cfg.eps, time_limit=cfg.time_limit, reference=reference,
                       method=cfg.method, model=model, enumerate_all=mode == "enumerate")
    rep.mode = mode
    if rep.decision is not None:
        _write_atomic(cfg.out_dir / f"decision_{name}.json", json.dumps(_decision_doc(model, rep.decision), indent=1))
    if rep.trace:
        _write_atomic(cfg.out_dir / f"trace_{name}.csv", dro.trace_to_csv(rep.trace))
    if cfg.emit_model:
        if mode == "c0":
            ir = model.deterministic_ir(spec.mu)
        else:
            y_lb, y_ub = dro.fixed_bounds(model, dro.CaseMode(run_mode), reference)
            verts = uncertainty.support_vertices(spec.nu_max, cfg.delta_deg).vertices
            scen = list(verts) if mode == "enumerate" else sorted({tuple(r["omega"]) for r in rep.trace})
            ir = dro._master_ir(model, scen, spec.mu, y_lb, y_ub)
        _write_atomic(cfg.out_dir / f"model_{name}.lp.txt", solverapi.emit_model_text(ir))
    return report_row(rep)


def _run_cells(case, cfg: RunConfig, cells: list[tuple[str, str, float]]) -> dict:
    if cfg.jobs == 1 or len(cells) <= 1:
        return {c: _run_cell(case, cfg, *c) for c in cells}
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        futs = {c: pool.submit(_run_cell, case, cfg, *c) for c in cells}
        return {c: f.result() for c, f in futs.items()}


def shed_summary(rows: Sequence[Sequence]) -> list[list]:
    """Load-shed percentage statistics over the ramp sweep per (mode, level, band)."""
    idx = {h: k for k, h in enumerate(REPORT_HEADER)}
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r[idx["mode"]], r[idx["level"]], r[idx["band"]]), []).append(float(r[idx["shed_pct"]]))
    out = []
    for key, vals in groups.items():
        std = statistics.pstdev(vals) if len(vals) > 1 else 0.0
        out.append([*key, _num(statistics.fmean(vals)), _num(min(vals)), _num(max(vals)), _num(std)])
    return out


def plot_costs(rows: Sequence[Sequence], level: str, path: Path) -> None:
    """Cost versus ramp limit, one line per mode."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    idx = {h: k for k, h in enumerate(REPORT_HEADER)}
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode in SOLVE_MODES:
        pts = sorted((float(r[idx["ramp_pct"]]), float(r[idx["cost"]])) for r in rows
                     if r[idx["mode"]] == mode and r[idx["level"]] == level)
        if pts:
            ax.plot(*zip(*pts), marker="o", label=mode.upper())
    ax.set_xlabel("ramp limit (% of capacity)")
    ax.set_ylabel("cost ($)")
    ax.set_title(f"{level} storm")
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp.png")
    fig.savefig(tmp, dpi=120)
    plt.close(fig)
    os.replace(tmp, path)


def run_sweep(case: netmodel.PowerCase, cfg: RunConfig) -> list[list]:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    cells = [(m, lvl, r) for lvl in cfg.levels for r in cfg.ramps for m in cfg.modes]
    # C0 cells first so that C2 cells find their reference decisions
    first = [c for c in cells if c[0] == "c0"]
    for m, lvl, r in cells:
        if m == "c2" and ("c0", lvl, r) not in first:
            first.append(("c0", lvl, r))
    results = _run_cells(case, cfg, first)
    results.update(_run_cells(case, cfg, [c for c in cells if c[0] != "c0"]))
    rows = [results[c] for c in cells]
    _write_atomic(cfg.out_dir / "report.csv", _csv_text(REPORT_HEADER, rows))
    _write_atomic(cfg.out_dir / "shed_summary.csv", _csv_text(SHED_HEADER, shed_summary(rows)))
    for lvl in cfg.levels:
        plot_costs(rows, lvl, cfg.out_dir / f"plot_{lvl}.png")
    return rows


def cmd_solve(args) -> int:
    case = _load_case(args)
    rc = _relax_config(args)
    cfg = RunConfig(modes=args.mode, levels=args.level, band=args.band, ramps=args.ramp,
                    delta_deg=args.delta, eps=args.eps, time_limit=args.time_limit, out_dir=Path(args.out),
                    method=args.method, jobs=args.jobs, emit_model=args.emit_model, relax=rc)
    rows = run_sweep(case, cfg)
    sys.stdout.write(_csv_text(REPORT_HEADER, rows))
    return EXIT_OK


# ------------------------------------------------------------------- helpers


def cmd_maglat(args) -> int:
    try:
        point = geomag.GeoPoint(args.lat, args.lon)
        coeffs = geomag.coefficients(args.epoch)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not -180.0 <= args.lon <= 360.0:
        raise UsageError(f"longitude {args.lon} outside [-180, 360]")
    mag = geomag.geo_to_mag(point, coeffs)
    print(f"magnetic_latitude={mag.latitude:.4f} magnetic_longitude={mag.longitude:.4f}")
    return EXIT_OK


def cmd_vertices(args) -> int:
    if args.nu_max is not None:
        nu_max = args.nu_max
    else:
        nu_max = uncertainty.gmd_params(args.level, args.band).nu_max
    poly = uncertainty.support_vertices(nu_max, args.delta)
    rows = [[k, _num(e), _num(n)] for k, (e, n) in enumerate(poly.vertices)]
    _emit(_csv_text(VERTEX_HEADER, rows), args.out)
    return EXIT_OK


def cmd_registry(args) -> int:
    case = _load_case(args)
    model = relax.build_standard_form(case, _relax_config(args), ramp_frac=args.ramp / 100.0)
    _emit(model.registry_csv(), args.out)
    return EXIT_OK


def cmd_case_export(args) -> int:
    _emit(netmodel.serialize(_load_case(args)) + "\n", args.out)
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _percent(text: str) -> float:
    val = float(text)
    if not 0.0 <= val <= 100.0:
        raise argparse.ArgumentTypeError(f"{text} is outside [0, 100]")
    return val


def _positive(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"{text} must be positive")
    return val


def _level(text: str) -> str:
    val = text.lower()
    if val not in [s.value for s in uncertainty.StormLevel]:
        raise argparse.ArgumentTypeError(f"unknown storm level {text!r}")
    return val


def _band(text: str) -> str:
    try:
        return uncertainty.normalize_band(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _relax_flags(p: argparse.ArgumentParser) -> None:
    d = relax.RelaxConfig()
    p.add_argument("--n-quadratic", type=int, default=d.n_points_quadratic,
                   help="linearization points for quadratic terms")
    p.add_argument("--n-rsoc", type=int, default=d.n_points_rsoc, help="points per rotated-cone dimension")
    p.add_argument("--n-thermal", type=int, default=d.n_points_thermal, help="points per thermal-limit axis")


def _relax_config(args) -> relax.RelaxConfig:
    try:
        return relax.RelaxConfig(args.n_quadratic, args.n_rsoc, args.n_thermal)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gicdro", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gic", help="effective GIC per transformer and qloss per bus for a fixed field")
    _add_case_flags(p)
    p.add_argument("--nu-e", type=float, required=True, help="eastward field (V/km)")
    p.add_argument("--nu-n", type=float, required=True, help="northward field (V/km)")
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_gic)

    p = sub.add_parser("solve", help="run case-study cells and write report artifacts")
    _add_case_flags(p)
    p.add_argument("--mode", nargs="+", choices=SOLVE_MODES, default=["c1"])
    p.add_argument("--level", nargs="+", type=_level, default=["strong", "severe", "extreme"])
    p.add_argument("--band", type=_band, default="55-60")
    p.add_argument("--ramp", nargs="+", type=_percent, default=list(DEFAULT_RAMPS), help="ramp limits (%%)")
    p.add_argument("--delta", type=_positive, default=2.0, help="vertex spacing (degrees)")
    p.add_argument("--eps", type=_positive, default=dro.DEFAULT_EPS, help="CCG relative tolerance")
    p.add_argument("--time-limit", type=_positive, default=None, help="seconds per cell")
    p.add_argument("--method", choices=("enumerate", "dual_mip"), default="enumerate",
                   help="worst-case scenario subproblem")
    p.add_argument("--jobs", type=int, default=1, help="cells solved in parallel")
    p.add_argument("--out", default="gicdro-out", help="output directory")
    p.add_argument("--emit-model", action="store_true", help="write the final model as model_<cell>.lp.txt")
    _relax_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("maglat", help="geographic to magnetic coordinates")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--epoch", type=int, default=geomag.DEFAULT_EPOCH)
    p.set_defaults(func=cmd_maglat)

    p = sub.add_parser("vertices", help="vertices of the polyhedral field support")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--nu-max", type=_positive, help="peak field amplitude (V/km)")
    g.add_argument("--level", type=_level, default="strong")
    p.add_argument("--band", type=_band, default="55-60")
    p.add_argument("--delta", type=_positive, default=2.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_vertices)

    p = sub.add_parser("registry", help="variable registry of the relaxed model")
    _add_case_flags(p)
    p.add_argument("--ramp", type=_percent, default=10.0)
    p.add_argument("--out")
    _relax_flags(p)
    p.set_defaults(func=cmd_registry)

    p = sub.add_parser("case-export", help="write the (merged) case document as JSON")
    _add_case_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_case_export)
    return parser


FAILURES = (solverapi.BackendUnavailable, dro.SolverFailure, dro.MasterUnboundedError, dro.IterationLimitError,
            dro.ModelTooLarge, gic.SingularCircuitError, netmodel.CaseError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return EXIT_OK if exc.code is None else int(exc.code)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gicdro: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FAILURES as exc:
        print(f"gicdro: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
