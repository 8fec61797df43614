"""Multi-stage maximum-likelihood estimator.

Stage order: BS-RIS channel from the RIS observation; pair-sum/difference
separation of the UE observation; direct-path (BS-UE) channel; reflected
(BS-RIS-UE) channel using the stage-one angles; position/clock solve via
the path-length difference and the law of sines; rotation recovery via the
orthogonal Procrustes problem.

Each angle search runs a hierarchical grid to land inside the Newton basin,
then a damped Newton descent on the negative-likelihood residual with
central finite differences (the scalar objective stays the single source of
truth).  TOA searches are initialized by a zero-padded FFT and polished by
an analytic scalar Newton ascent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDirections,
    DegenerateTriangle,
    OddT,
    StageFailure,
    WeakSignal,
)
from .geometry import AnglePair, Rotation, unit_from_angles
from .scenario import SPEED_OF_LIGHT, RadioConfig
from .signal import ChannelParams, CodebookSchedule, ObservationSet, steering_vector

PARALLEL_TOL = 1e-9
TRIANGLE_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Hierarchical search grid: ``size`` points per angle axis at every
    level, each refinement shrinking the span around the argmax."""

    size: int = 32
    levels: int = 2
    shrink: float = 8.0


JOINT_GRID = GridSpec(size=32, levels=2)
UE_GRID = GridSpec(size=64, levels=1)

# A planar array cannot tell a direction from its mirror image through the
# array plane (its response depends on the azimuth only through the
# cosine), so every azimuth search is restricted to the half-space the
# array faces: the BS boresight convention puts served nodes at positive
# local azimuth, the RIS convention at negative local azimuth (both hold
# for the reference scenario).  Scenarios violating the convention estimate
# the mirror world.
BS_AZ_CENTER = np.pi / 2.0
RIS_AZ_CENTER = -np.pi / 2.0
HALF_SPACE_SPAN = np.pi / 2.0


@dataclass
class StageDiagnostics:
    residual: float = 0.0
    toa_iterations: int = 0
    newton_iterations: int = 0
    correlation_peak: float = 0.0
    correlation_floor: float = 0.0
    extra: dict = field(default_factory=dict)


def estimate_toa(y: np.ndarray, cfg: RadioConfig) -> float:
    """Delay maximizing the energy of the delay-matched subcarrier sum.

    A zero-padded FFT over the subcarrier axis provides the global grid
    peak, quadratic interpolation a sub-bin start, and an analytic Newton
    ascent the final refinement.  The result lies in [0, 1/df)."""
    tau, _ = _estimate_toa_impl(y, cfg)
    return tau


def _estimate_toa_impl(y, cfg):
    df = cfg.subcarrier_spacing
    n_fft = cfg.fft_size
    spectrum = np.fft.ifft(y, n=n_fft, axis=0) * n_fft  # sum_k y e^{+j2pi k n/N}
    energy = np.sum(np.abs(spectrum) ** 2, axis=1)
    peak = int(np.argmax(energy))
    e_prev = energy[(peak - 1) % n_fft]
    e_next = energy[(peak + 1) % n_fft]
    denom = e_prev - 2.0 * energy[peak] + e_next
    offset = 0.5 * (e_prev - e_next) / denom if denom < 0 else 0.0
    tau = (peak + offset) / (n_fft * df)

    k = np.arange(y.shape[0])
    y_k = k[:, None] * y
    y_k2 = (k**2)[:, None] * y
    two_pi_df = 2.0 * np.pi * df

    def objective_parts(t):
        w = np.exp(2j * np.pi * k * df * t)
        s0 = w @ y
        s1 = (1j * two_pi_df) * (w @ y_k)
        s2 = (1j * two_pi_df) ** 2 * (w @ y_k2)
        f = float(np.sum(np.abs(s0) ** 2))
        fp = 2.0 * float(np.sum(np.real(s1 * np.conj(s0))))
        fpp = 2.0 * float(np.sum(np.real(s2 * np.conj(s0)) + np.abs(s1) ** 2))
        return f, fp, fpp

    f0, fp, fpp = objective_parts(tau)
    iterations = 0
    for _ in range(50):
        step = -fp / fpp if fpp < 0 else fp / (two_pi_df**2 * max(f0, 1e-300))
        improved = False
        for _ in range(30):
            f1, fp1, fpp1 = objective_parts(tau + step)
            if f1 > f0:
                tau += step
                f0, fp, fpp = f1, fp1, fpp1
                improved = True
                break
            step *= 0.5
        iterations += 1
        if not improved or abs(step) < 1e-22:
            break
    period = 1.0 / df
    wrapped = float(np.mod(tau, period))
    if wrapped >= period:  # float mod of a tiny negative returns the period
        wrapped = 0.0
    return wrapped, iterations


def derotated_slot_sums(y: np.ndarray, cfg: RadioConfig, tau: float) -> np.ndarray:
    """Remove a delay's subcarrier phases and sum over subcarriers."""
    k = np.arange(y.shape[0])
    return np.exp(2j * np.pi * k * cfg.subcarrier_spacing * tau) @ y


def _angle_axis(center, halfspan, size, clip_elevation):
    lo, hi = center - halfspan, center + halfspan
    if clip_elevation:
        lo, hi = max(lo, 0.0), min(hi, np.pi)
    return lo + (np.arange(size) + 0.5) * (hi - lo) / size


def _steering_grid(shape, spacing, wavelength, az_values, el_values):
    """Array responses for the az x el grid; column index az * n_el + el."""
    rows, cols = shape
    az_mesh, el_mesh = np.meshgrid(az_values, el_values, indexing="ij")
    proj_row = (np.sin(el_mesh) * np.cos(az_mesh)).ravel()
    proj_col = np.cos(el_mesh).ravel()
    beta = -2j * np.pi * spacing / wavelength
    a_row = np.exp(beta * np.outer(np.arange(rows), proj_row))
    a_col = np.exp(beta * np.outer(np.arange(cols), proj_col))
    return (a_row[:, None, :] * a_col[None, :, :]).reshape(rows * cols, -1)


def _check_weak(metric_amplitude, z, stage):
    """Flag a dictionary search whose peak does not clear the noise floor by
    the 3x margin.

    The floor is the per-slot amplitude of the energy the best dictionary
    column leaves unexplained; a matched signal explains nearly everything,
    pure noise explains only its own extreme-value bump."""
    peak = float(np.max(metric_amplitude))
    total = float(np.real(np.vdot(z, z)))
    floor = float(np.sqrt(max(total - peak**2, 0.0) / z.size))
    if peak <= 0.0 or peak < 3.0 * floor:
        raise WeakSignal(
            f"{stage}: correlation peak {peak:.3e} below 3x floor {floor:.3e}",
            peak=peak,
            floor=floor,
        )
    return peak, floor


def _newton_refine(objective, x0, tol=1e-10, max_iter=50):
    """Two-pass damped Newton: a 1e-6 finite-difference step to converge,
    then a 1e-7 step to polish below the first pass's truncation floor."""
    total = 0
    x = np.asarray(x0, dtype=float)
    for fd_step in (1e-6, 1e-7):
        x, value, iterations = _newton_minimize(objective, x, fd_step, tol, max_iter)
        total += iterations
    return x, value, total


def _newton_minimize(objective, x0, fd_step, tol=1e-10, max_iter=50):
    """Damped Newton descent with central-difference gradient and Hessian.

    Steps are halved until the objective decreases; the method stops on a
    sub-``tol`` step or when no improving step exists.  The returned value
    never exceeds the starting objective."""
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    h = np.asarray(fd_step, dtype=float) * np.ones(n)
    f0 = objective(x)
    start = f0
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        grad = np.empty(n)
        hess = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h[i]
            f_plus, f_minus = objective(x + e), objective(x - e)
            grad[i] = (f_plus - f_minus) / (2.0 * h[i])
            hess[i, i] = (f_plus - 2.0 * f0 + f_minus) / h[i] ** 2
        for i in range(n):
            for j in range(i + 1, n):
                ei = np.zeros(n)
                ej = np.zeros(n)
                ei[i] = h[i]
                ej[j] = h[j]
                hess[i, j] = hess[j, i] = (
                    objective(x + ei + ej)
                    - objective(x + ei - ej)
                    - objective(x - ei + ej)
                    + objective(x - ei - ej)
                ) / (4.0 * h[i] * h[j])
        try:
            step = np.linalg.solve(hess, -grad)
            if not np.all(np.isfinite(step)) or step @ grad > 0:
                step = -grad * (np.linalg.norm(x) + 1.0) / (np.linalg.norm(grad) + 1e-300)
        except np.linalg.LinAlgError:
            step = -grad * (np.linalg.norm(x) + 1.0) / (np.linalg.norm(grad) + 1e-300)
        improved = False
        for _ in range(25):
            f1 = objective(x + step)
            if f1 < f0:
                x = x + step
                f0 = f1
                improved = True
                break
            step = step / 2.0
        if not improved:
            break
        if np.linalg.norm(step) < tol:
            break
    assert f0 <= start + 1e-12 * max(1.0, abs(start)), "Newton increased the objective"
    return x, f0, iterations


def estimate_bs_ris_channel(
    y_ris: np.ndarray, sched: CodebookSchedule, cfg: RadioConfig, grid: GridSpec = JOINT_GRID
):
    """TOA, BS-side AOD, RIS-side AOA, and gain of the sensed path.

    The joint four-angle search factors per slot into a precoder response
    (AOD candidates) times a combiner response (AOA candidates), so each
    grid level is two matrix products."""
    tau, toa_iters = _estimate_toa_impl(y_ris, cfg)
    z = derotated_slot_sums(y_ris, cfg, tau)
    z_conj = np.conj(z)

    span_az, span_el = HALF_SPACE_SPAN, np.pi / 2.0
    center_theta = np.array([BS_AZ_CENTER, np.pi / 2.0])
    center_phi = np.array([RIS_AZ_CENTER, np.pi / 2.0])
    peak = floor = 0.0
    best_amp = -np.inf
    grid_peaks = []
    for level in range(grid.levels + 1):
        scale = grid.shrink**level
        theta_az = _angle_axis(center_theta[0], span_az / scale, grid.size, False)
        theta_el = _angle_axis(center_theta[1], span_el / scale, grid.size, True)
        phi_az = _angle_axis(center_phi[0], span_az / scale, grid.size, False)
        phi_el = _angle_axis(center_phi[1], span_el / scale, grid.size, True)
        a_bs = _steering_grid(cfg.bs_shape, cfg.element_spacing, cfg.wavelength, theta_az, theta_el)
        a_ris = _steering_grid(cfg.ris_shape, cfg.element_spacing, cfg.wavelength, phi_az, phi_el)
        f_grid = sched.precoders @ a_bs  # (T, J_theta)
        c_grid = sched.combiners @ a_ris  # (T, J_phi)
        num = (f_grid * z_conj[:, None]).T @ c_grid
        den = (np.abs(f_grid) ** 2).T @ (np.abs(c_grid) ** 2)
        amp = np.abs(num) / np.sqrt(den)
        if level == 0:
            peak, floor = _check_weak(amp, z, "bs_ris")
        i_theta, i_phi = np.unravel_index(np.argmax(amp), amp.shape)
        if amp[i_theta, i_phi] > best_amp:  # keep refinement monotone
            best_amp = amp[i_theta, i_phi]
            center_theta = np.array(
                [theta_az[i_theta // grid.size], theta_el[i_theta % grid.size]]
            )
            center_phi = np.array([phi_az[i_phi // grid.size], phi_el[i_phi % grid.size]])
        grid_peaks.append(best_amp)

    def model(x):
        a_bs = steering_vector(cfg.bs_shape, cfg.element_spacing, cfg.wavelength, AnglePair(x[0], _clip_el(x[1])))
        a_ris = steering_vector(cfg.ris_shape, cfg.element_spacing, cfg.wavelength, AnglePair(x[2], _clip_el(x[3])))
        return (sched.precoders @ a_bs) * (sched.combiners @ a_ris)

    def objective(x):
        # residual form: evaluation error shrinks with the residual, so the
        # minimum stays sharp down to machine scale
        h = model(x)
        gain = np.vdot(h, z) / np.real(np.vdot(h, h))
        return float(np.real(np.vdot(z - gain * h, z - gain * h)))

    x0 = np.concatenate([center_theta, center_phi])
    x, residual, newton_iters = _newton_refine(objective, x0)
    theta_br = AnglePair(x[0], _clip_el(x[1]))
    phi_rb = AnglePair(x[2], _clip_el(x[3]))
    h = model(x)
    scale = cfg.n_subcarriers * np.sqrt(cfg.power_split * cfg.tx_power)
    g_br = complex(np.vdot(h, z) / np.real(np.vdot(h, h)) / scale)
    diag = StageDiagnostics(
        residual=residual,
        toa_iterations=toa_iters,
        newton_iterations=newton_iters,
        correlation_peak=peak,
        correlation_floor=floor,
        extra={"grid_peaks": grid_peaks},
    )
    return tau, theta_br, phi_rb, g_br, diag


def _clip_el(el):
    return float(np.clip(el, 0.0, np.pi))


def separate_paths(y_ue: np.ndarray):
    """Split the UE observation into direct-only and reflected-only halves
    via sums and differences of paired slots (valid thanks to the repeated
    precoders and sign-flipped reflection profiles)."""
    if y_ue.shape[1] % 2 != 0:
        raise OddT(f"slot count must be even, got {y_ue.shape[1]}")
    z_direct = y_ue[:, 0::2] + y_ue[:, 1::2]
    z_reflected = y_ue[:, 0::2] - y_ue[:, 1::2]
    return z_direct, z_reflected


def _search_2d(z, slot_matrix, cfg, shape, grid, stage, az_center):
    """Shared 2D angle search: coarse-to-fine grid then Newton.

    ``slot_matrix`` maps an array response to per-slot model samples."""
    z_conj = np.conj(z)
    center = np.array([az_center, np.pi / 2.0])
    span_az, span_el = HALF_SPACE_SPAN, np.pi / 2.0
    peak = floor = 0.0
    best_amp = -np.inf
    grid_peaks = []
    for level in range(grid.levels + 1):
        scale = grid.shrink**level
        az = _angle_axis(center[0], span_az / scale, grid.size, False)
        el = _angle_axis(center[1], span_el / scale, grid.size, True)
        a_grid = _steering_grid(shape, cfg.element_spacing, cfg.wavelength, az, el)
        h_grid = slot_matrix @ a_grid
        num = z_conj @ h_grid
        den = np.sum(np.abs(h_grid) ** 2, axis=0)
        amp = np.abs(num) / np.sqrt(den)
        if level == 0:
            peak, floor = _check_weak(amp, z, stage)
        best = int(np.argmax(amp))
        if amp[best] > best_amp:  # keep refinement monotone
            best_amp = amp[best]
            center = np.array([az[best // grid.size], el[best % grid.size]])
        grid_peaks.append(best_amp)

    def objective(x):
        a = steering_vector(shape, cfg.element_spacing, cfg.wavelength, AnglePair(x[0], _clip_el(x[1])))
        h = slot_matrix @ a
        gain = np.vdot(h, z) / np.real(np.vdot(h, h))
        return float(np.real(np.vdot(z - gain * h, z - gain * h)))

    x, residual, iters = _newton_refine(objective, center)
    angles = AnglePair(x[0], _clip_el(x[1]))
    a = steering_vector(shape, cfg.element_spacing, cfg.wavelength, angles)
    h = slot_matrix @ a
    gain_factor = complex(np.vdot(h, z) / np.real(np.vdot(h, h)))
    return angles, gain_factor, residual, iters, peak, floor, grid_peaks


def estimate_direct_channel(z_direct: np.ndarray, sched: CodebookSchedule, cfg: RadioConfig, grid: GridSpec = UE_GRID):
    """TOA, BS-side AOD, and gain of the direct path from the pair sums."""
    tau, toa_iters = _estimate_toa_impl(z_direct, cfg)
    z = derotated_slot_sums(z_direct, cfg, tau)
    precoders_even = sched.precoders[0::2]
    angles, gain_factor, residual, iters, peak, floor, grid_peaks = _search_2d(
        z, precoders_even, cfg, cfg.bs_shape, grid, "direct", BS_AZ_CENTER
    )
    g_bu = gain_factor / (2.0 * cfg.n_subcarriers * np.sqrt(cfg.tx_power))
    diag = StageDiagnostics(
        residual=residual,
        toa_iterations=toa_iters,
        newton_iterations=iters,
        correlation_peak=peak,
        correlation_floor=floor,
        extra={"grid_peaks": grid_peaks},
    )
    return tau, angles, g_bu, diag


def estimate_reflected_channel(
    z_reflected: np.ndarray,
    sched: CodebookSchedule,
    cfg: RadioConfig,
    theta_br: AnglePair,
    phi_rb: AnglePair,
    grid: GridSpec = UE_GRID,
):
    """TOA, RIS-side AOD, and gain of the reflected path.

    The per-slot effective combining vectors are rebuilt from the
    *estimated* BS-RIS angles, so stage-one errors propagate here."""
    tau, toa_iters = _estimate_toa_impl(z_reflected, cfg)
    z = derotated_slot_sums(z_reflected, cfg, tau)
    a_bs = steering_vector(cfg.bs_shape, cfg.element_spacing, cfg.wavelength, theta_br)
    a_ris = steering_vector(cfg.ris_shape, cfg.element_spacing, cfg.wavelength, phi_rb)
    bs_factor = sched.precoders[0::2] @ a_bs  # (T/2,)
    slot_matrix = (sched.reflections[0::2] * a_ris[None, :]) * bs_factor[:, None]
    angles, gain_factor, residual, iters, peak, floor, grid_peaks = _search_2d(
        z, slot_matrix, cfg, cfg.ris_shape, grid, "reflected", RIS_AZ_CENTER
    )
    g_bru = gain_factor / (
        2.0 * cfg.n_subcarriers * np.sqrt((1.0 - cfg.power_split) * cfg.tx_power)
    )
    diag = StageDiagnostics(
        residual=residual,
        toa_iterations=toa_iters,
        newton_iterations=iters,
        correlation_peak=peak,
        correlation_floor=floor,
        extra={"grid_peaks": grid_peaks},
    )
    return tau, angles, g_bru, diag


def solve_positions_and_clocks(params: ChannelParams, bs_position):
    """Positions and clock biases from the estimated channel parameters.

    The clock-free path-length surplus c*(tau_bru - tau_bu) combines with
    the interior angles of the BS-RIS-UE triangle (law of sines) to give
    the two BS distances; positions follow along the BS-frame departure
    directions, and clock biases fall out of the TOAs."""
    bs_position = np.asarray(bs_position, dtype=float)
    surplus = SPEED_OF_LIGHT * (params.tau_bru - params.tau_bu)
    kappa_ru = unit_from_angles(params.theta_ru)
    kappa_rb = unit_from_angles(params.phi_rb)
    kappa_bu = unit_from_angles(params.theta_bu)
    kappa_br = unit_from_angles(params.theta_br)
    beta_ris = np.arccos(np.clip(kappa_ru @ kappa_rb, -1.0, 1.0))
    beta_bs = np.arccos(np.clip(kappa_bu @ kappa_br, -1.0, 1.0))
    beta_ue = np.pi - beta_ris - beta_bs
    denom = np.sin(beta_ue) + np.sin(beta_bs) - np.sin(beta_ris)
    if denom <= TRIANGLE_TOL:
        raise DegenerateTriangle(f"law-of-sines denominator {denom:.3e}")
    d_bu = surplus * np.sin(beta_ris) / denom
    d_br = surplus * np.sin(beta_ue) / denom
    ris_position = bs_position + d_br * kappa_br
    ue_position = bs_position + d_bu * kappa_bu
    bias_ris = params.tau_br - d_br / SPEED_OF_LIGHT
    bias_ue = params.tau_bu - d_bu / SPEED_OF_LIGHT
    return ris_position, ue_position, float(bias_ris), float(bias_ue)


def estimate_rotation(
    phi_rb: AnglePair, theta_ru: AnglePair, ris_position, ue_position, bs_position
) -> Rotation:
    """Least-squares rotation aligning the RIS-frame directions with the
    global ones (orthogonal Procrustes with the determinant correction)."""
    ris_position = np.asarray(ris_position, dtype=float)
    local = np.stack([unit_from_angles(phi_rb), unit_from_angles(theta_ru)], axis=1)
    to_bs = np.asarray(bs_position, dtype=float) - ris_position
    to_ue = np.asarray(ue_position, dtype=float) - ris_position
    global_dirs = np.stack(
        [to_bs / np.linalg.norm(to_bs), to_ue / np.linalg.norm(to_ue)], axis=1
    )
    for pair in (local, global_dirs):
        if np.linalg.norm(np.cross(pair[:, 0], pair[:, 1])) < PARALLEL_TOL:
            raise DegenerateDirections("direction pair is parallel")
    u0, _, u1t = np.linalg.svd(global_dirs @ local.T)
    det = np.linalg.det(u0 @ u1t)
    return Rotation(u0 @ np.diag([1.0, 1.0, float(np.sign(det))]) @ u1t)


@dataclass(frozen=True)
class EstimateResult:
    """Channel and state estimates plus per-stage diagnostics."""

    channel: ChannelParams
    ris_position: np.ndarray
    ue_position: np.ndarray
    clock_bias_ris: float
    clock_bias_ue: float
    rotation: Rotation
    diagnostics: dict


def run_pipeline(
    obs: ObservationSet, sched: CodebookSchedule, cfg: RadioConfig, bs_position
) -> EstimateResult:
    """Run all stages in order; failures surface as StageFailure carrying
    the stage name and the results gathered so far."""
    diagnostics: dict = {}

    def guard(stage, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # noqa: BLE001 - tag and rethrow with context
            raise StageFailure(stage, exc, partial=diagnostics) from exc

    tau_br, theta_br, phi_rb, g_br, d1 = guard(
        "bs_ris", estimate_bs_ris_channel, obs.y_ris, sched, cfg
    )
    diagnostics["bs_ris"] = d1
    z_direct, z_reflected = guard("separation", separate_paths, obs.y_ue)
    tau_bu, theta_bu, g_bu, d2 = guard(
        "direct", estimate_direct_channel, z_direct, sched, cfg
    )
    diagnostics["direct"] = d2
    tau_bru, theta_ru, g_bru, d3 = guard(
        "reflected", estimate_reflected_channel, z_reflected, sched, cfg, theta_br, phi_rb
    )
    diagnostics["reflected"] = d3
    channel = ChannelParams(
        tau_br=tau_br,
        tau_bu=tau_bu,
        tau_bru=tau_bru,
        theta_br=theta_br,
        theta_bu=theta_bu,
        theta_ru=theta_ru,
        phi_rb=phi_rb,
        g_br=g_br,
        g_bu=g_bu,
        g_bru=g_bru,
    )
    ris_position, ue_position, bias_ris, bias_ue = guard(
        "position", solve_positions_and_clocks, channel, bs_position
    )
    rotation = guard(
        "rotation", estimate_rotation, phi_rb, theta_ru, ris_position, ue_position, bs_position
    )
    return EstimateResult(
        channel=channel,
        ris_position=ris_position,
        ue_position=ue_position,
        clock_bias_ris=bias_ris,
        clock_bias_ue=bias_ue,
        rotation=rotation,
        diagnostics=diagnostics,
    )
