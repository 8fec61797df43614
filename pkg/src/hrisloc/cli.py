"""Command-line entry point.

Subcommands: ``crb`` (one bound report), ``run`` (one synthesized pipeline
run with truth deltas), ``mc`` (Monte Carlo at one operating point),
``sweep-power`` / ``sweep-rho`` / ``scatterers`` (CSV sweeps), and
``plots`` (render figures from sweep CSVs).

Powers cross this boundary in dBm and are converted to watts exactly once;
everything below works in SI units.  Exit codes: 0 success, 1 usage error,
2 estimation failure (every trial failed).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace

import numpy as np

from . import experiment, plots
from .errors import HrislocError, StageFailure
from .estimator import run_pipeline
from .experiment import SweepSpec, monte_carlo, rho_sweep_bounds, scatterer_study
from .fim import BoundReport, compute_bounds
from .geometry import rotation_from_angles
from .scenario import default_scenario, load_scenario, with_overrides
from .signal import build_schedule, channel_params_from_scenario, synthesize


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; this CLI reserves
    2 for estimation failures, so usage errors exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _add_common(parser):
    parser.add_argument(
        "--scenario",
        default="default",
        help="path to a scenario JSON file, or 'default' for the built-in one",
    )
    parser.add_argument("--pb-dbm", type=float, default=None, help="transmit power [dBm]")
    parser.add_argument("--rho", type=float, default=None, help="power splitting ratio")
    parser.add_argument("--seed", type=int, default=0, help="base seed")
    parser.add_argument("--output", "-o", default=None, help="output path")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a scenario/config field (repeatable)",
    )


def _load(args):
    if args.scenario == "default":
        scn, cfg = default_scenario()
    else:
        scn, cfg = load_scenario(args.scenario)
    overrides = {}
    for item in args.override:
        if "=" not in item:
            raise HrislocError(f"override '{item}' is not KEY=VALUE")
        key, _, value = item.partition("=")
        overrides[key] = value
    if overrides:
        try:
            scn, cfg = with_overrides(scn, cfg, overrides)
        except KeyError as exc:
            raise HrislocError(str(exc)) from exc
    if args.pb_dbm is not None:
        cfg = replace(cfg, tx_power=_dbm_to_watt(args.pb_dbm))
    if getattr(args, "rho", None) is not None:
        cfg = replace(cfg, power_split=args.rho)
    return scn, cfg


def _pb_dbm(cfg):
    return 10.0 * math.log10(cfg.tx_power) + 30.0


def _cmd_crb(args):
    scn, cfg = _load(args)
    sched = build_schedule(cfg, seed=args.seed)
    params = channel_params_from_scenario(scn, cfg, seed=args.seed + 1)
    report = compute_bounds(scn, cfg, sched, params)
    lines = [
        BoundReport.CSV_HEADER,
        report.csv_row("default" if args.scenario == "default" else args.scenario,
                       _pb_dbm(cfg), cfg.power_split),
    ]
    print("\n".join(lines))
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def _cmd_run(args):
    scn, cfg = _load(args)
    sched = build_schedule(cfg, seed=args.seed)
    params = channel_params_from_scenario(scn, cfg, seed=args.seed + 1)
    obs = synthesize(scn, cfg, sched, params, noise_seed=args.seed + 10,
                     scatterer_seed=args.seed + 7)
    try:
        result = run_pipeline(obs, sched, cfg, scn.bs_position)
    except StageFailure as exc:
        print(f"estimation failed in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return 2
    rot_truth = rotation_from_angles(scn.ris_rotation)

    def vec(v):
        return "[" + ", ".join(f"{x:.12g}" for x in np.asarray(v)) + "]"

    print(f"ris_position          {vec(result.ris_position)}")
    print(f"ris_position_error_m  {np.linalg.norm(result.ris_position - scn.ris_position):.12g}")
    print(f"ue_position           {vec(result.ue_position)}")
    print(f"ue_position_error_m   {np.linalg.norm(result.ue_position - scn.ue_position):.12g}")
    print(f"clock_bias_ris_s      {result.clock_bias_ris:.12g}")
    print(f"clock_bias_ris_err_s  {abs(result.clock_bias_ris - scn.clock_bias_ris):.12g}")
    print(f"clock_bias_ue_s       {result.clock_bias_ue:.12g}")
    print(f"clock_bias_ue_err_s   {abs(result.clock_bias_ue - scn.clock_bias_ue):.12g}")
    frob = np.linalg.norm(result.rotation.matrix - rot_truth.matrix)
    print(f"rotation_error_frob   {frob:.12g}")
    for stage, diag in result.diagnostics.items():
        print(f"stage {stage}: residual {diag.residual:.6g}, "
              f"newton_iterations {diag.newton_iterations}")
    return 0


def _cmd_mc(args):
    scn, cfg = _load(args)
    spec = SweepSpec(
        variable="p_b_dbm",
        values=(_pb_dbm(cfg),),
        trials=args.trials,
        base_seed=args.seed,
    )
    rows = monte_carlo(scn, cfg, spec)
    return _emit_rows(rows, args)


def _cmd_sweep_power(args):
    scn, cfg = _load(args)
    values = tuple(float(v) for v in args.values.split(","))
    spec = SweepSpec(variable="p_b_dbm", values=values, trials=args.trials,
                     base_seed=args.seed)
    rows = monte_carlo(scn, cfg, spec)
    return _emit_rows(rows, args)


def _cmd_sweep_rho(args):
    scn, cfg = _load(args)
    values = [float(v) for v in args.values.split(",")]
    reports = rho_sweep_bounds(scn, cfg, values, seed=args.seed)
    sid = "default" if args.scenario == "default" else args.scenario
    path = args.output or "sweep_rho.csv"
    experiment.write_bound_rows(
        path, reports, [sid] * len(values), [_pb_dbm(cfg)] * len(values), values
    )
    print(f"wrote {path} ({len(values)} rows)")
    return 0


def _cmd_scatterers(args):
    scn, cfg = _load(args)
    counts = [int(v) for v in args.counts.split(",")]
    rows = scatterer_study(scn, cfg, counts, args.realizations, base_seed=args.seed)
    return _emit_rows(rows, args)


def _emit_rows(rows, args):
    path = args.output or "sweep.csv"
    experiment.write_metric_rows(path, rows)
    print(f"wrote {path} ({len(rows)} rows)")
    if all(row.failures >= row.trials for row in rows):
        print("all trials failed", file=sys.stderr)
        return 2
    return 0


def _cmd_plots(args):
    spec = plots.FigureSpec(
        figure_id=args.figure_id, inputs=tuple(args.inputs), output=args.out
    )
    written = plots.render(spec)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = _Parser(prog="hrisloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_crb = sub.add_parser("crb", help="print one bound report row")
    _add_common(p_crb)

    p_run = sub.add_parser("run", help="run one synthesized estimation pipeline")
    _add_common(p_run)

    p_mc = sub.add_parser("mc", help="Monte Carlo at one operating point")
    _add_common(p_mc)
    p_mc.add_argument("--trials", type=int, default=500)

    p_sp = sub.add_parser("sweep-power", help="RMSE-vs-CRB sweep over transmit power")
    _add_common(p_sp)
    p_sp.add_argument("--trials", type=int, default=500)
    p_sp.add_argument("--values", default="9,12,15,18,21,24,27,30",
                      help="comma-separated dBm values")

    p_sr = sub.add_parser("sweep-rho", help="CRB-only sweep over the power split")
    _add_common(p_sr)
    p_sr.add_argument(
        "--values", default="0.009,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.999999"
    )

    p_sc = sub.add_parser("scatterers", help="scatterer robustness study")
    _add_common(p_sc)
    p_sc.add_argument("--counts", default="0,2,4,8", help="total scatterer counts")
    p_sc.add_argument("--realizations", type=int, default=20)

    p_pl = sub.add_parser("plots", help="render a figure from sweep CSVs")
    p_pl.add_argument("figure_id", choices=sorted(plots.FIGURE_IDS))
    p_pl.add_argument("--in", dest="inputs", action="append", required=True,
                      metavar="CSV", help="input CSV (repeatable)")
    p_pl.add_argument("--out", required=True, help="output image path")

    return parser


_COMMANDS = {
    "crb": _cmd_crb,
    "run": _cmd_run,
    "mc": _cmd_mc,
    "sweep-power": _cmd_sweep_power,
    "sweep-rho": _cmd_sweep_rho,
    "scatterers": _cmd_scatterers,
    "plots": _cmd_plots,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except HrislocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, StageFailure) else 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
