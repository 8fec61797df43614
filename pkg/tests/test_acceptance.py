"""Acceptance suite: every exit criterion as one test with a printed
PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.  Four criteria are known-red, each with the
blocking analysis in its failure detail (and in the README): the C1/C3
equivalence and the small-split PEB blow-up do not hold for this signal
model at the stated tolerances, bit-identical positions cannot survive
floating-point re-synthesis, and the scatterer-to-clean median ratio
exceeds its budget because the free-space gain model leaves a much lower
clean noise floor than the study the budget was read from.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from hrisloc.estimator import estimate_rotation, run_pipeline
from hrisloc.experiment import (
    METRIC_KEYS,
    SweepSpec,
    monte_carlo,
    rho_sweep_bounds,
    scatterer_study,
)
from hrisloc.fim import (
    channel_fim,
    channel_vector_from_state,
    compute_bounds,
    constrained_crb,
    efim_channel,
    mean_derivatives,
    state_crb_with_known,
    state_fim,
    state_jacobian,
    state_vector,
)
from hrisloc.geometry import (
    RotationAngles,
    angles_from_direction,
    rotation_from_angles,
)
from hrisloc.plots import FigureSpec, _fig_rho, read_csv_columns, render
from hrisloc.scenario import (
    RadioConfig,
    Scenario,
    default_scenario,
)
from hrisloc.signal import (
    ChannelParams,
    build_schedule,
    channel_params_from_scenario,
    mean_observations,
    synthesize,
)

DATA = __file__.rsplit("/", 1)[0] + "/data"


def report(name, ok, detail=""):
    line = f"[ACCEPTANCE] {'PASS' if ok else 'FAIL'} {name}"
    if detail:
        line += f" :: {detail}"
    print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def table1():
    return default_scenario()


@pytest.fixture(scope="module")
def noiseless_run(table1):
    scn, cfg = table1
    cfg = replace(cfg, noise_psd=0.0)
    sched = build_schedule(cfg, seed=3)
    params = channel_params_from_scenario(scn, cfg, seed=5)
    start = time.perf_counter()
    obs = synthesize(scn, cfg, sched, params, noise_seed=0)
    result = run_pipeline(obs, sched, cfg, scn.bs_position)
    elapsed = time.perf_counter() - start
    return scn, cfg, sched, params, result, elapsed


@pytest.fixture(scope="module")
def efficiency_row(table1):
    # shrunk configuration permitted by the criterion: K=64, T=50, RIS 8x8
    scn, cfg = table1
    cfg = replace(cfg, n_subcarriers=64, n_transmissions=50, ris_shape=(8, 8))
    spec = SweepSpec(variable="p_b_dbm", values=(30.0,), trials=200, base_seed=0)
    start = time.perf_counter()
    row = monte_carlo(scn, cfg, spec)[0]
    elapsed = time.perf_counter() - start
    return row, elapsed


def test_noiseless_exact_recovery(noiseless_run):
    scn, _, _, _, result, elapsed = noiseless_run
    p_r_err = float(np.linalg.norm(result.ris_position - scn.ris_position))
    p_u_err = float(np.linalg.norm(result.ue_position - scn.ue_position))
    b_r_err = abs(result.clock_bias_ris - scn.clock_bias_ris)
    b_u_err = abs(result.clock_bias_ue - scn.clock_bias_ue)
    rot_err = float(
        np.linalg.norm(result.rotation.matrix - rotation_from_angles(scn.ris_rotation).matrix)
    )
    ok = (
        p_r_err <= 1e-6
        and p_u_err <= 1e-6
        and b_r_err <= 1e-15
        and b_u_err <= 1e-15
        and rot_err <= 1e-8
        and elapsed < 10.0
    )
    report(
        "noiseless-exact-recovery",
        ok,
        f"p_R {p_r_err:.2e} m, p_U {p_u_err:.2e} m, clocks {max(b_r_err, b_u_err):.2e} s, "
        f"R {rot_err:.2e} Frobenius, {elapsed:.2f} s",
    )


def _random_scenario(rng):
    while True:
        ue = rng.uniform([-6, 1, -2], [6, 8, 3])
        ris = rng.uniform([-4, 6, -1], [5, 14, 4])
        rot_angles = RotationAngles(*rng.uniform(-0.6, 0.6, size=3))
        scn = Scenario(
            bs_position=np.zeros(3),
            ue_position=ue,
            ris_position=ris,
            ris_rotation=rot_angles,
            clock_bias_ris=rng.uniform(0, 50e-9),
            clock_bias_ue=rng.uniform(0, 50e-9),
        )
        # keep every arrival/departure away from the array poles, where the
        # azimuth loses sensitivity and relative comparisons degenerate
        rot = rotation_from_angles(rot_angles)
        dirs = [
            ue / np.linalg.norm(ue),
            ris / np.linalg.norm(ris),
            rot.matrix.T @ ((ue - ris) / np.linalg.norm(ue - ris)),
            rot.matrix.T @ (-ris / np.linalg.norm(ris)),
        ]
        if all(abs(d[2]) < 0.9 for d in dirs):
            return scn


def test_derivative_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = RadioConfig(
        n_subcarriers=16, n_transmissions=8, bs_shape=(2, 2), ris_shape=(4, 4), fft_size=256
    )
    # angle steps sized so the direct path's float noise (which rides along
    # in the reflected-path differences) stays well under the tolerance
    fd_steps = np.array([1e-12] * 3 + [1e-5] * 8 + [1e-10] * 6)
    worst_mean = 0.0
    worst_jac = 0.0
    for trial in range(20):
        scn = _random_scenario(rng)
        sched = build_schedule(cfg, seed=trial)
        params = channel_params_from_scenario(scn, cfg, seed=trial)
        d_ris, d_ue = mean_derivatives(cfg, sched, params)
        vec = params.as_vector()
        for j in range(17):
            e = np.zeros(17)
            e[j] = fd_steps[j]
            mu_p = mean_observations(cfg, sched, ChannelParams.from_vector(vec + e))
            mu_m = mean_observations(cfg, sched, ChannelParams.from_vector(vec - e))
            for ch in range(2):
                fd = (mu_p[ch] - mu_m[ch]) / (2 * fd_steps[j])
                analytic = (d_ris, d_ue)[ch][j]
                scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)))
                if scale > 0:
                    worst_mean = max(worst_mean, np.max(np.abs(analytic - fd)) / scale)
        jac = state_jacobian(scn)
        sv = state_vector(scn)
        steps = np.array([1e-6] * 6 + [1e-9] * 2 + [1e-7] * 9)
        fd = np.zeros_like(jac)
        for m in range(17):
            e = np.zeros(17)
            e[m] = steps[m]
            fd[:, m] = (
                channel_vector_from_state(sv + e, scn.bs_position)
                - channel_vector_from_state(sv - e, scn.bs_position)
            ) / (2 * steps[m])
        # rows mix units (seconds vs radians); compare per row so finite-
        # difference noise on structurally-zero entries is judged against
        # the row's own scale
        row_scale = np.maximum(
            np.max(np.abs(jac), axis=1), np.max(np.abs(fd), axis=1)
        )
        rel = np.abs(jac - fd) / row_scale[:, None]
        worst_jac = max(worst_jac, float(np.max(rel)))
    elapsed = time.perf_counter() - start
    ok = worst_mean <= 1e-6 and worst_jac <= 1e-6 and elapsed < 60.0
    report(
        "derivative-oracle",
        ok,
        f"20 scenarios: mean-derivative worst rel {worst_mean:.2e}, "
        f"jacobian worst rel {worst_jac:.2e}, {elapsed:.1f} s",
    )


def test_power_law_scaling(table1):
    scn, cfg = table1
    sched = build_schedule(cfg, seed=1)
    params = channel_params_from_scenario(scn, cfg, seed=2)
    dbm_values = np.arange(9.0, 31.0, 3.0)
    reports = [
        compute_bounds(scn, replace(cfg, tx_power=10 ** ((dbm - 30) / 10)), sched, params)
        for dbm in dbm_values
    ]
    worst = 0.0
    for key in METRIC_KEYS:
        values = np.array([r.metrics()[key] for r in reports])
        powers = 10 ** ((dbm_values - 30) / 10)
        slopes = np.diff(np.log(values)) / np.diff(np.log(powers))
        worst = max(worst, float(np.max(np.abs(slopes + 0.5))))
    ok = worst <= 1e-6
    report("power-law-scaling", ok, f"max |slope + 1/2| = {worst:.2e} over 9..30 dBm")


EFFICIENCY_KEYS = (
    "teb_br_m",
    "teb_bu_m",
    "adeb_bu_rad",
    "aaeb_rb_rad",
    "peb_r_m",
    "peb_u_m",
    "oeb",
)


def test_efficiency_at_high_snr(efficiency_row):
    row, elapsed = efficiency_row
    ratios = {k: row.rmse[k] / row.crb[k] for k in EFFICIENCY_KEYS}
    ok = (
        row.failures == 0
        and all(0.9 <= v <= 1.5 for v in ratios.values())
        and elapsed < 20 * 60
    )
    detail = ", ".join(f"{k}={v:.3f}" for k, v in ratios.items())
    report("efficiency-at-high-snr", ok, f"RMSE/CRB {detail}; {elapsed:.0f} s, "
           f"{row.failures} failures")


def test_rmse_never_beats_bound(efficiency_row):
    # sanity invariant on the same 200-trial data: no metric may beat its
    # bound beyond the finite-trial slack
    row, _ = efficiency_row
    worst = min(row.rmse[k] / row.crb[k] for k in METRIC_KEYS)
    report("rmse-at-least-bound", worst >= 0.95, f"min RMSE/CRB = {worst:.3f}")


def test_rho_sweep_shape(table1):
    scn, cfg = table1
    cfg = replace(cfg, tx_power=10 ** ((25 - 30) / 10))
    rhos = [1e-6, 0.009, 0.1, 0.3, 0.5, 0.7, 0.9, 1 - 1e-6]
    reports = rho_sweep_bounds(scn, cfg, rhos, seed=0)
    by_rho = dict(zip(rhos, reports))
    teb_bu = np.array([r.teb_bu for r in reports])
    bu_spread = float((teb_bu.max() - teb_bu.min()) / teb_bu[0])
    teb_br = [r.teb_br for r in reports]
    br_decreasing = all(a > b for a, b in zip(teb_br, teb_br[1:]))
    mid = by_rho[0.5].peb_r
    small_ratio = by_rho[0.009].peb_r / mid
    lo_ratio = by_rho[1e-6].peb_r / mid
    hi_ratio = by_rho[1 - 1e-6].peb_r / mid
    ok = (
        bu_spread <= 1e-9
        and br_decreasing
        and small_ratio < 1.0
        and lo_ratio >= 100.0
        and hi_ratio >= 100.0
    )
    report(
        "rho-sweep-shape",
        ok,
        f"teb_bu spread {bu_spread:.1e} (<=1e-9: {bu_spread <= 1e-9}), "
        f"teb_br decreasing: {br_decreasing}, "
        f"peb_r(0.009)/peb_r(0.5)={small_ratio:.3f} (<1: {small_ratio < 1}), "
        f"peb_r(1e-6)/peb_r(0.5)={lo_ratio:.2f} (>=100: {lo_ratio >= 100}), "
        f"peb_r(1-1e-6)/peb_r(0.5)={hi_ratio:.2f} (>=100: {hi_ratio >= 100})",
    )


def test_c1_c3_equivalence(table1):
    scn, cfg = table1
    sched = build_schedule(cfg, seed=3)
    params = channel_params_from_scenario(scn, cfg, seed=5)
    efim = efim_channel(channel_fim(cfg, sched, params))
    js = state_fim(efim, state_jacobian(scn))
    rot = rotation_from_angles(scn.ris_rotation)
    c1 = constrained_crb(js, rot)
    c3, _ = state_crb_with_known(js, rot, known={"rotation"})
    peb_r_c1 = math.sqrt(np.trace(c1[0:3, 0:3]))
    peb_u_c1 = math.sqrt(np.trace(c1[3:6, 3:6]))
    peb_r_c3 = math.sqrt(np.trace(c3[0:3, 0:3]))
    peb_u_c3 = math.sqrt(np.trace(c3[3:6, 3:6]))
    rel_r = abs(peb_r_c1 - peb_r_c3) / peb_r_c1
    rel_u = abs(peb_u_c1 - peb_u_c3) / peb_u_c1
    ok = rel_r <= 1e-9 and rel_u <= 1e-9
    report(
        "c1-c3-equivalence",
        ok,
        f"PEB_R rel diff {rel_r:.2e}, PEB_U rel diff {rel_u:.2e} (criterion 1e-9; "
        "knowing the rotation genuinely adds Fisher information through the "
        "RIS-frame angle rows, so exact equality is unattainable - see notes)",
    )


def test_clock_bias_invariance(table1):
    scn, cfg = table1
    cfg = replace(cfg, noise_psd=0.0)
    sched = build_schedule(cfg, seed=3)

    def positions(bias_shift):
        shifted = replace(scn, clock_bias_ue=scn.clock_bias_ue + bias_shift)
        params = channel_params_from_scenario(shifted, cfg, seed=5)
        obs = synthesize(shifted, cfg, sched, params, noise_seed=0)
        result = run_pipeline(obs, sched, cfg, scn.bs_position)
        return result.ris_position, result.ue_position

    base = positions(0.0)
    worst = 0.0
    bitwise = True
    for shift in (1e-6, -1e-6):
        moved = positions(shift)
        bitwise = bitwise and all(np.array_equal(a, b) for a, b in zip(base, moved))
        worst = max(
            worst,
            float(np.linalg.norm(moved[0] - base[0])),
            float(np.linalg.norm(moved[1] - base[1])),
        )
    report(
        "clock-bias-invariance",
        bitwise,
        f"bit-identical: {bitwise}; max position deviation {worst:.2e} m "
        "(the shift cancels algebraically, but re-synthesis re-rounds the "
        "transcendentals, so bit-identical output is unattainable - see notes)",
    )


def test_procrustes_optimality():
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    all_beat = True
    for _ in range(100):
        truth = rotation_from_angles(RotationAngles(*rng.uniform(-np.pi, np.pi, 3)))
        while True:
            local = rng.standard_normal((3, 2))
            local /= np.linalg.norm(local, axis=0)
            if np.linalg.norm(np.cross(local[:, 0], local[:, 1])) > 0.2:
                break
        noisy_global = truth.matrix @ local + 0.02 * rng.standard_normal((3, 2))
        noisy_global /= np.linalg.norm(noisy_global, axis=0)
        ris = rng.uniform(-2, 2, 3)
        rot = estimate_rotation(
            angles_from_direction(local[:, 0]),
            angles_from_direction(local[:, 1]),
            ris,
            ris + 4.0 * noisy_global[:, 1],
            ris + 4.0 * noisy_global[:, 0],
        )
        best = np.linalg.norm(noisy_global - rot.matrix @ local)
        candidates = rng.standard_normal((10_000, 3, 3))
        q, _ = np.linalg.qr(candidates)
        flip = np.linalg.det(q) < 0
        q[flip, :, 0] *= -1.0
        objectives = np.linalg.norm(noisy_global[None] - q @ local[None], axis=(1, 2))
        if best > objectives.min() + 1e-12:
            all_beat = False
            break
    elapsed = time.perf_counter() - start
    report(
        "procrustes-optimality",
        all_beat,
        f"100 noisy instances, 10^4 random rotations each; {elapsed:.1f} s",
    )


def test_scatterer_robustness(table1):
    scn, cfg = table1
    rows = scatterer_study(scn, cfg, [0, 8], realizations=100, base_seed=11)
    clean, dirty = rows
    completed = dirty.trials - dirty.failures
    ratio = dirty.median["peb_u_m"] / clean.median["peb_u_m"]
    ok = completed >= 90 and ratio <= 10.0
    report(
        "scatterer-robustness",
        ok,
        f"{completed}/100 runs completed, median p_U error ratio {ratio:.2f} "
        f"(clean {clean.median['peb_u_m']:.3g} m, with 8 SPs {dirty.median['peb_u_m']:.3g} m)",
    )


def test_secondary_figures(tmp_path):
    inputs = {
        "power-rmse": f"{DATA}/golden_power.csv",
        "power-state": f"{DATA}/golden_power.csv",
        "rho": f"{DATA}/golden_rho.csv",
        "scatterers": f"{DATA}/golden_scatterers.csv",
    }
    rendered = []
    for figure_id, csv_path in inputs.items():
        out = tmp_path / f"{figure_id}.png"
        written = render(
            FigureSpec(figure_id=figure_id, inputs=(csv_path,), output=str(out))
        )
        rendered.extend(written)
        assert all((tmp_path / p.split("/")[-1]).stat().st_size > 0 for p in written)
    columns = read_csv_columns(inputs["rho"])
    fig = _fig_rho(columns, inputs["rho"])
    flat = [
        line
        for line in fig.axes[0].get_lines()
        if "bs-ue" in line.get_label()
    ]
    ydata = np.asarray(flat[0].get_ydata(), dtype=float)
    constant = float((ydata.max() - ydata.min()) / ydata[0])
    ok = len(rendered) == 8 and len(flat) == 1 and constant <= 1e-9
    report(
        "secondary-figures",
        ok,
        f"4 figure ids rendered ({len(rendered)} files); "
        f"direct-path bound series constant to {constant:.1e}",
    )
