"""Batch command-line front end.

    ecoplatoon simulate|compare|stability|bench --scenario <path> --out <dir>
               [--ds <m>] [--window <m>] [--ilqr]

Scenario paths may name a shipped preset (``collector``, ``major_arterial``);
ECOPLATOON_PRESET_DIR overrides the preset search path. All outputs are
written atomically (write-then-rename) with fixed column orders, so repeated
runs of the same scenario produce byte-identical files. The CLI renders no
graphics; it drops a small matplotlib script next to the data instead.

Exit codes: 0 success, 2 configuration error, 3 non-convergence, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import experiments
from .errors import ConfigError, EcoPlatoonError
from .fuel import equivalent_traction_accel
from .scenario import load_scenario, override_ds, resolve_scenario_path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_RUNTIME = 4


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: list, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    atomic_write(path, "\n".join(lines) + "\n")


def write_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


_PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Render the CSV outputs in this directory (requires matplotlib).\"\"\"
import csv
import pathlib
import sys

import matplotlib.pyplot as plt

HERE = pathlib.Path(__file__).parent


def load(name):
    with open(HERE / name) as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {h: [float(r[i]) for r in data] for i, h in enumerate(header)}
    return cols


for name, ylabel in [
    ("fuel_series.csv", "cumulative fuel [L]"),
    ("speed_series.csv", "speed [m/s]"),
    ("following_errors.csv", "following error [s]"),
    ("timings.csv", "solve time [s]"),
]:
    if not (HERE / name).exists():
        continue
    cols = load(name)
    xkey = next(iter(cols))
    fig, ax = plt.subplots()
    for key, series in cols.items():
        if key == xkey:
            continue
        ax.plot(cols[xkey], series, label=key)
    ax.set_xlabel(xkey)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize="small")
    fig.savefig(HERE / (name.replace(".csv", ".png")), dpi=150)
    print("wrote", name.replace(".csv", ".png"))
"""


def _grid_series(fuel_series, ds: float, route_length: float):
    """Resample per-vehicle cumulative fuel onto the spatial grid."""
    grid = np.arange(0.0, route_length + ds / 2, ds)
    out = []
    for positions, cumulative in fuel_series:
        if positions.size == 0:
            out.append(np.zeros_like(grid))
        else:
            out.append(np.interp(grid, positions, cumulative, left=0.0))
    return grid, out


def _write_trajectories(out: Path, scenario, states, controls, equiv):
    cfg = scenario.config
    k_total = controls.accels.shape[1]
    header = ["step", "s_m"]
    for i in range(cfg.n_vehicles):
        header += [f"t{i + 1}_s", f"v{i + 1}_mps", f"a{i + 1}_mps2", f"aeq{i + 1}_mps2"]
    rows = []
    for k in range(k_total + 1):
        kc = min(k, k_total - 1)
        row = [k, k * cfg.ds]
        for i in range(cfg.n_vehicles):
            row += [
                states.arrival_times[i, k],
                1.0 / states.slownesses[i, k],
                controls.accels[i, kc],
                equiv[i, kc],
            ]
        rows.append(row)
    write_csv(out / "trajectories.csv", header, rows)


def _write_fuel_series(out: Path, scenario, eco_series, base_series=None):
    cfg = scenario.config
    grid, eco_cols = _grid_series(eco_series, cfg.ds, cfg.route_length)
    header = ["s_m"] + [f"eco_v{i + 1}_L" for i in range(len(eco_cols))] + ["eco_total_L"]
    cols = list(eco_cols) + [np.sum(eco_cols, axis=0)]
    if base_series is not None:
        _, base_cols = _grid_series(base_series, cfg.ds, cfg.route_length)
        header += [f"base_v{i + 1}_L" for i in range(len(base_cols))] + ["base_total_L"]
        cols += list(base_cols) + [np.sum(base_cols, axis=0)]
    rows = [[grid[j]] + [c[j] for c in cols] for j in range(grid.size)]
    write_csv(out / "fuel_series.csv", header, rows)


def _solve_stats(eco):
    report = eco.report
    stats = {"wall_time_s": eco.wall_time}
    if hasattr(report, "iterations"):
        stats["iterations"] = len(report.iterations)
        stats["max_violation"] = report.max_violation
    if eco.exec_times:
        times = np.asarray(eco.exec_times)
        stats["exec_mean_s"] = float(times.mean())
        stats["exec_max_s"] = float(times.max())
    return stats


def cmd_simulate(scenario, out: Path) -> int:
    eco = experiments.run_eco(scenario)
    states = eco.report.states
    controls = eco.report.controls
    _write_trajectories(out, scenario, states, controls, eco.equiv_accels)
    _write_fuel_series(out, scenario, eco.fuel_series)
    report = eco.report
    if hasattr(report, "iterations"):
        write_json(
            out / "solve_report.json",
            {
                "converged": bool(report.converged),
                "max_violation": report.max_violation,
                "cost": report.cost.as_dict(),
                "iterations": [dataclasses.asdict(it) for it in report.iterations],
                "wall_time_s": report.wall_time,
            },
        )
    summary = {
        "scenario": scenario.name,
        "converged": bool(eco.converged),
        "fuel_total_L": {"eco": eco.fuel_total},
        "fuel_per_vehicle_L": {"eco": eco.fuel_per_vehicle},
        "savings_pct": None,
        "max_violation": eco.max_violation,
        "wall_time": _solve_stats(eco),
    }
    write_json(out / "summary.json", summary)
    atomic_write(out / "plot_results.py", _PLOT_SCRIPT)
    if not eco.converged:
        print("solver did not converge; see solve_report.json", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_compare(scenario, out: Path) -> int:
    cmp_result = experiments.run_compare(scenario)
    eco, base = cmp_result.eco, cmp_result.base
    states, controls = eco.report.states, eco.report.controls
    _write_trajectories(out, scenario, states, controls, eco.equiv_accels)
    _write_fuel_series(out, scenario, eco.fuel_series, base.fuel_series)
    write_csv(
        out / "segment_deltas.csv",
        ["seg_start_m", "seg_end_m", "grade_rad", "saving_L"],
        cmp_result.segment_deltas,
    )
    cfg = scenario.config
    k_total = controls.accels.shape[1]
    grid = cfg.ds * np.arange(k_total)
    header = ["s_m"]
    n = cfg.n_vehicles
    header += [f"eco_v{i + 1}_mps" for i in range(n)]
    header += [f"eco_aeq{i + 1}_mps2" for i in range(n)]
    base_v = []
    base_aeq = []
    for i in range(n):
        tr = base.traces[i]
        base_v.append(np.interp(grid, tr["position"], tr["speed"]))
        a_eq_series = equivalent_traction_accel(
            tr["accel"], tr["speed"], tr["grade"], cfg.vehicles[i], cfg
        )
        base_aeq.append(np.interp(grid, tr["position"], a_eq_series))
    header += [f"base_v{i + 1}_mps" for i in range(n)]
    header += [f"base_aeq{i + 1}_mps2" for i in range(n)]
    rows = []
    for k in range(k_total):
        row = [grid[k]]
        row += [1.0 / states.slownesses[i, k] for i in range(n)]
        row += [eco.equiv_accels[i, k] for i in range(n)]
        row += [base_v[i][k] for i in range(n)]
        row += [base_aeq[i][k] for i in range(n)]
        rows.append(row)
    write_csv(out / "speed_series.csv", header, rows)
    summary = {
        "scenario": scenario.name,
        "converged": bool(eco.converged),
        "fuel_total_L": {"eco": eco.fuel_total, "baseline": base.fuel_total},
        "fuel_per_vehicle_L": {
            "eco": eco.fuel_per_vehicle,
            "baseline": base.fuel_per_vehicle,
        },
        "savings_pct": cmp_result.savings_pct,
        "max_violation": eco.max_violation,
        "wall_time": _solve_stats(eco),
    }
    write_json(out / "summary.json", summary)
    atomic_write(out / "plot_results.py", _PLOT_SCRIPT)
    if not eco.converged:
        print("solver did not converge; see summary.json", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_stability(scenario, out: Path) -> int:
    if scenario.perturbation is None:
        raise ConfigError("scenario has no perturbation section")
    result = experiments.run_stability(scenario)
    report = result.report
    rows = [
        [j, report.gamma[j], report.gamma_vs_leader[j]]
        for j in sorted(report.gamma)
    ]
    write_csv(out / "gamma.csv", ["vehicle", "gamma_adjacent", "gamma_vs_leader"], rows)
    cfg = scenario.config
    n, ksteps = report.deviations.shape
    dev_rows = [
        [k * cfg.ds] + [report.deviations[i, k] for i in range(n)]
        for k in range(ksteps)
    ]
    write_csv(
        out / "deviations.csv",
        ["s_m"] + [f"daeq{i + 1}_mps2" for i in range(n)],
        dev_rows,
    )
    err = result.errors
    err_rows = [
        [k, k * cfg.ds] + [err[i, k] for i in range(err.shape[0])]
        for k in range(err.shape[1])
    ]
    write_csv(
        out / "following_errors.csv",
        ["step", "s_m"] + [f"err{i + 1}_s" for i in range(err.shape[0])],
        err_rows,
    )
    write_json(
        out / "stability.json",
        {
            "scenario": scenario.name,
            "stable": bool(report.stable),
            "defined": bool(report.defined),
            "gamma_adjacent": {str(j): report.gamma[j] for j in report.gamma},
            "gamma_vs_leader": {
                str(j): report.gamma_vs_leader[j] for j in report.gamma_vs_leader
            },
            "deviation_norms": list(map(float, report.deviation_norms)),
        },
    )
    atomic_write(out / "plot_results.py", _PLOT_SCRIPT)
    return EXIT_OK


def cmd_bench(scenario, out: Path, ds_values, windows, max_executions: int) -> int:
    rows = experiments.run_bench(
        scenario, ds_values=ds_values, windows=windows, max_executions=max_executions
    )
    write_csv(
        out / "timings.csv",
        ["ds_m", "window_m", "executions", "mean_s", "max_s"],
        [[r.ds, r.window, r.executions, r.mean_time, r.max_time] for r in rows],
    )
    write_json(
        out / "timings.json",
        [
            {
                "ds_m": r.ds,
                "window_m": r.window,
                "executions": r.executions,
                "mean_s": r.mean_time,
                "max_s": r.max_time,
            }
            for r in rows
        ],
    )
    atomic_write(out / "plot_results.py", _PLOT_SCRIPT)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecoplatoon",
        description="Fuel-optimal platoon planning experiments on rolling terrain",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "compare", "stability", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="scenario file or preset name")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--ds", type=float, default=None, help="override spatial step (m)")
        p.add_argument("--window", type=float, default=None, help="override window length (m)")
        p.add_argument("--ilqr", action="store_true", help="drop second-order dynamics terms")
    bench = sub.choices["bench"]
    bench.add_argument(
        "--ds-sweep", type=float, nargs="+", default=[0.05, 0.1, 1.0], help="step sizes to sweep"
    )
    bench.add_argument(
        "--window-sweep", type=float, nargs="+", default=[20.0, 30.0, 40.0]
    )
    bench.add_argument("--max-executions", type=int, default=30)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(resolve_scenario_path(args.scenario))
        if args.ds is not None:
            scenario = override_ds(scenario, args.ds)
        if args.ds is not None and abs(args.ds - 0.1) > 1e-12:
            print(
                f"warning: ds = {args.ds} m rescales the effective cost weights, "
                "which were tuned for ds = 0.1 m",
                file=sys.stderr,
            )
        if args.window is not None:
            scenario = dataclasses.replace(scenario, window_m=args.window)
        if args.ilqr:
            scenario = dataclasses.replace(
                scenario,
                solver_options=dataclasses.replace(
                    scenario.solver_options, use_second_order=False
                ),
            )
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(scenario, out)
        if args.command == "compare":
            return cmd_compare(scenario, out)
        if args.command == "stability":
            return cmd_stability(scenario, out)
        return cmd_bench(
            scenario, out, args.ds_sweep, args.window_sweep, args.max_executions
        )
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EcoPlatoonError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
