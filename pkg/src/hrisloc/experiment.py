"""Monte Carlo harness, parameter sweeps, and CSV emission.

A sweep fixes the codebook schedule and the channel-gain phases per sweep
point (only the noise is redrawn across trials) and reports, per point,
the per-parameter RMSE, the matching root-CRB values, and error quantiles.
Trials whose pipeline raises (weak signal, degenerate geometry) count as
failures and are excluded from the statistics.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import StageFailure
from .estimator import EstimateResult, run_pipeline
from .fim import BoundReport, compute_bounds
from .geometry import rotation_from_angles, wrap_angle
from .scenario import (
    SPEED_OF_LIGHT,
    RadioConfig,
    Scenario,
    noise_variance,
    place_scatterers,
)
from .signal import ChannelParams, build_schedule, channel_params_from_scenario, synthesize

METRIC_KEYS = (
    "teb_br_m",
    "teb_bu_m",
    "teb_bru_m",
    "adeb_br_rad",
    "adeb_bu_rad",
    "adeb_ru_rad",
    "aaeb_rb_rad",
    "peb_r_m",
    "peb_u_m",
    "ceb_r_s",
    "ceb_u_s",
    "oeb",
)

SWEEP_VARIABLES = ("p_b_dbm", "rho", "n_scatterers")

CSV_HEADER = ",".join(
    ["sweep_variable", "sweep_value", "trials", "failures"]
    + [f"rmse_{k}" for k in METRIC_KEYS]
    + [f"crb_{k}" for k in METRIC_KEYS]
    + [f"median_{k}" for k in METRIC_KEYS]
    + [f"q90_{k}" for k in METRIC_KEYS]
)


@dataclass(frozen=True)
class SweepSpec:
    """One swept variable, its values, and the trial budget per value."""

    variable: str
    values: tuple
    trials: int = 500
    base_seed: int = 0

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"variable must be one of {SWEEP_VARIABLES}")
        if len(self.values) == 0:
            raise ValueError("values must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class MetricRow:
    """Per-sweep-value statistics: RMSE, CRB, and error quantiles keyed by
    the metric column names."""

    sweep_variable: str
    sweep_value: float
    trials: int
    failures: int
    rmse: dict
    crb: dict
    median: dict
    q90: dict

    def csv_row(self) -> str:
        cells = [
            self.sweep_variable,
            f"{self.sweep_value:.17g}",
            str(self.trials),
            str(self.failures),
        ]
        for bag in (self.rmse, self.crb, self.median, self.q90):
            cells.extend(f"{bag[k]:.17g}" for k in METRIC_KEYS)
        return ",".join(cells)


def trial_errors(result: EstimateResult, truth: ChannelParams, scn: Scenario) -> dict:
    """Per-trial absolute errors in the 12 reported metrics."""
    rot_truth = rotation_from_angles(scn.ris_rotation)
    c = SPEED_OF_LIGHT

    def angle_err(est, ref):
        return float(
            np.hypot(wrap_angle(est.azimuth - ref.azimuth), est.elevation - ref.elevation)
        )

    ch = result.channel
    return {
        "teb_br_m": c * abs(ch.tau_br - truth.tau_br),
        "teb_bu_m": c * abs(ch.tau_bu - truth.tau_bu),
        "teb_bru_m": c * abs(ch.tau_bru - truth.tau_bru),
        "adeb_br_rad": angle_err(ch.theta_br, truth.theta_br),
        "adeb_bu_rad": angle_err(ch.theta_bu, truth.theta_bu),
        "adeb_ru_rad": angle_err(ch.theta_ru, truth.theta_ru),
        "aaeb_rb_rad": angle_err(ch.phi_rb, truth.phi_rb),
        "peb_r_m": float(np.linalg.norm(result.ris_position - scn.ris_position)),
        "peb_u_m": float(np.linalg.norm(result.ue_position - scn.ue_position)),
        "ceb_r_s": abs(result.clock_bias_ris - scn.clock_bias_ris),
        "ceb_u_s": abs(result.clock_bias_ue - scn.clock_bias_ue),
        "oeb": float(np.linalg.norm(result.rotation.matrix - rot_truth.matrix)),
    }


def _worker_count():
    env = os.environ.get("HRISLOC_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _run_trials(scn, cfg, sched, params, trials, seed0, scatterer_seed):
    """Run independent noise realizations; deterministic (trial-index)
    reduction regardless of the thread schedule."""

    def one(trial):
        obs = synthesize(
            scn, cfg, sched, params, noise_seed=seed0 + trial, scatterer_seed=scatterer_seed
        )
        try:
            result = run_pipeline(obs, sched, cfg, scn.bs_position)
        except StageFailure:
            return None
        return trial_errors(result, params, scn)

    workers = _worker_count()
    if workers == 1 or trials == 1:
        outcomes = [one(t) for t in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(trials)))
    errors = [o for o in outcomes if o is not None]
    return errors, len(outcomes) - len(errors)


def _statistics(errors, trials, failures, crb, variable, value):
    if errors:
        stacked = {k: np.array([e[k] for e in errors]) for k in METRIC_KEYS}
        rmse = {k: float(np.sqrt(np.mean(v**2))) for k, v in stacked.items()}
        median = {k: float(np.median(v)) for k, v in stacked.items()}
        q90 = {k: float(np.quantile(v, 0.9)) for k, v in stacked.items()}
    else:
        nan = {k: float("nan") for k in METRIC_KEYS}
        rmse, median, q90 = nan, dict(nan), dict(nan)
    return MetricRow(
        sweep_variable=variable,
        sweep_value=float(value),
        trials=trials,
        failures=failures,
        rmse=rmse,
        crb=crb,
        median=median,
        q90=q90,
    )


def _apply_sweep_value(scn: Scenario, cfg: RadioConfig, variable, value, seed):
    if variable == "p_b_dbm":
        return scn, replace(cfg, tx_power=10.0 ** ((value - 30.0) / 10.0))
    if variable == "rho":
        return scn, replace(cfg, power_split=float(value))
    n_each = int(value) // 2
    direct, reflected = place_scatterers(int(value) - n_each, n_each, seed=seed)
    return (
        replace(scn, scatterers_direct=direct, scatterers_reflected=reflected),
        cfg,
    )


def _point_seed(base_seed, index):
    return base_seed + 1_000_003 * (index + 1)


def _crb_metrics(scn, cfg, sched, params):
    if noise_variance(cfg) == 0.0:
        return {k: float("nan") for k in METRIC_KEYS}
    return compute_bounds(scn, cfg, sched, params).metrics()


def monte_carlo(scn: Scenario, cfg: RadioConfig, spec: SweepSpec):
    """RMSE-versus-CRB sweep over the spec's variable.

    Per sweep value the schedule and gain phases are drawn once (seeded by
    the value index) and held fixed; each trial redraws only the noise."""
    rows = []
    for index, value in enumerate(spec.values):
        seed = _point_seed(spec.base_seed, index)
        scn_v, cfg_v = _apply_sweep_value(scn, cfg, spec.variable, value, seed + 7)
        sched = build_schedule(cfg_v, seed=seed)
        params = channel_params_from_scenario(scn_v, cfg_v, seed=seed + 1)
        crb = _crb_metrics(scn_v, cfg_v, sched, params)
        errors, failures = _run_trials(
            scn_v, cfg_v, sched, params, spec.trials, seed0=seed + 10, scatterer_seed=seed + 7
        )
        rows.append(
            _statistics(errors, spec.trials, failures, crb, spec.variable, value)
        )
    return rows


def rho_sweep_bounds(scn: Scenario, cfg: RadioConfig, rho_values, seed=0):
    """CRB-only sweep over the power splitting ratio (no Monte Carlo)."""
    reports = []
    for rho in rho_values:
        if not 0.0 < rho < 1.0:
            raise ValueError(f"rho must lie inside (0, 1), got {rho}")
        cfg_v = replace(cfg, power_split=float(rho))
        sched = build_schedule(cfg_v, seed=seed)
        params = channel_params_from_scenario(scn, cfg_v, seed=seed + 1)
        reports.append(compute_bounds(scn, cfg_v, sched, params))
    return reports


def scatterer_study(scn: Scenario, cfg: RadioConfig, n_values, realizations, base_seed=0):
    """Robustness study: per scatterer count, draw fresh placements and run
    one pipeline per placement (the estimator stays unaware of the
    scatterers); errors are summarized by quantiles."""
    rows = []
    for index, n_total in enumerate(n_values):
        seed = _point_seed(base_seed, index)
        sched = build_schedule(cfg, seed=seed)
        params = channel_params_from_scenario(scn, cfg, seed=seed + 1)
        crb = _crb_metrics(scn, cfg, sched, params)
        errors = []
        failures = 0
        for realization in range(realizations):
            r_seed = seed + 37 * (realization + 1)
            n_each = int(n_total) // 2
            direct, reflected = place_scatterers(
                int(n_total) - n_each, n_each, seed=r_seed
            )
            scn_r = replace(scn, scatterers_direct=direct, scatterers_reflected=reflected)
            batch, failed = _run_trials(
                scn_r, cfg, sched, params, 1, seed0=r_seed + 1, scatterer_seed=r_seed
            )
            errors.extend(batch)
            failures += failed
        rows.append(
            _statistics(errors, realizations, failures, crb, "n_scatterers", n_total)
        )
    return rows


def write_metric_rows(path, rows):
    """Experiment CSV: fixed header, 17-significant-digit floats, LF."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_row() + "\n")


def write_bound_rows(path, reports, scenario_ids, p_b_dbm_values, rho_values):
    """Bound-report CSV in the fixed 15-column schema."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(BoundReport.CSV_HEADER + "\n")
        for report, sid, dbm, rho in zip(reports, scenario_ids, p_b_dbm_values, rho_values):
            fh.write(report.csv_row(sid, dbm, rho) + "\n")
