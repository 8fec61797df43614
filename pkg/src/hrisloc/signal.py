"""Steering vectors, codebooks, channel gains, and observation synthesis.

The downlink model: the BS sends one pilot symbol per slot through a
precoder; the RIS splits each element's received power between a sensing
combiner (fraction ``power_split``) and a phase-shifted reflection
(fraction ``1 - power_split``); the UE hears the direct path, the
reflected path, and optional scatterer interference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, OddT
from .geometry import (
    AnglePair,
    angles_from_direction,
    direction_global,
    direction_local,
    rotation_from_angles,
)
from .scenario import SPEED_OF_LIGHT, RadioConfig, Scenario, noise_variance


def steering_row_phases(n_elements, spacing, wavelength, projection):
    # exp(-j 2 pi n d / lambda * projection), n = 0 .. n_elements-1
    n = np.arange(n_elements)
    return np.exp(-2j * np.pi * spacing / wavelength * projection * n)


def steering_vector(shape, spacing, wavelength, angles: AnglePair) -> np.ndarray:
    """Planar-array response: Kronecker product of the row factor (driven by
    sin(el)cos(az)) and the column factor (driven by cos(el)).  Entries are
    unit modulus; the element for row index 0, column index 0 is 1."""
    rows, cols = shape
    a_row = steering_row_phases(
        rows, spacing, wavelength, np.sin(angles.elevation) * np.cos(angles.azimuth)
    )
    a_col = steering_row_phases(cols, spacing, wavelength, np.cos(angles.elevation))
    return np.kron(a_row, a_col)


def steering_derivatives(shape, spacing, wavelength, angles: AnglePair):
    """Analytic d a / d azimuth and d a / d elevation of the array response."""
    rows, cols = shape
    beta = 2.0 * np.pi * spacing / wavelength
    se, ce = np.sin(angles.elevation), np.cos(angles.elevation)
    sa, ca = np.sin(angles.azimuth), np.cos(angles.azimuth)
    n_r = np.arange(rows)
    n_c = np.arange(cols)
    a_row = steering_row_phases(rows, spacing, wavelength, se * ca)
    a_col = steering_row_phases(cols, spacing, wavelength, ce)
    d_row_az = 1j * beta * se * sa * n_r * a_row
    d_row_el = -1j * beta * ce * ca * n_r * a_row
    d_col_el = 1j * beta * se * n_c * a_col
    d_az = np.kron(d_row_az, a_col)  # column factor has no azimuth dependence
    d_el = np.kron(d_row_el, a_col) + np.kron(a_row, d_col_el)
    return d_az, d_el


def delay_steering(delay, n_subcarriers, subcarrier_spacing) -> np.ndarray:
    """Per-subcarrier delay phases exp(-j 2 pi k df tau), k = 0..K-1."""
    k = np.arange(n_subcarriers)
    return np.exp(-2j * np.pi * k * subcarrier_spacing * delay)


def delay_steering_derivative(delay, n_subcarriers, subcarrier_spacing) -> np.ndarray:
    k = np.arange(n_subcarriers)
    return (-2j * np.pi * subcarrier_spacing * k) * delay_steering(
        delay, n_subcarriers, subcarrier_spacing
    )


@dataclass(frozen=True)
class ChannelParams:
    """The 17 unknown channel parameters of the three modeled paths:
    TOAs (s), angle pairs (rad), and complex gains."""

    tau_br: float
    tau_bu: float
    tau_bru: float
    theta_br: AnglePair
    theta_bu: AnglePair
    theta_ru: AnglePair
    phi_rb: AnglePair
    g_br: complex
    g_bu: complex
    g_bru: complex

    def as_vector(self) -> np.ndarray:
        """Order: [tau_br, tau_bu, tau_bru, theta_br(az,el), theta_bu(az,el),
        theta_ru(az,el), phi_rb(az,el), Re/Im g_br, Re/Im g_bu, Re/Im g_bru].
        """
        return np.array(
            [
                self.tau_br,
                self.tau_bu,
                self.tau_bru,
                self.theta_br.azimuth,
                self.theta_br.elevation,
                self.theta_bu.azimuth,
                self.theta_bu.elevation,
                self.theta_ru.azimuth,
                self.theta_ru.elevation,
                self.phi_rb.azimuth,
                self.phi_rb.elevation,
                self.g_br.real,
                self.g_br.imag,
                self.g_bu.real,
                self.g_bu.imag,
                self.g_bru.real,
                self.g_bru.imag,
            ]
        )

    @classmethod
    def from_vector(cls, vec) -> "ChannelParams":
        v = np.asarray(vec, dtype=float)
        return cls(
            tau_br=v[0],
            tau_bu=v[1],
            tau_bru=v[2],
            theta_br=AnglePair(v[3], v[4]),
            theta_bu=AnglePair(v[5], v[6]),
            theta_ru=AnglePair(v[7], v[8]),
            phi_rb=AnglePair(v[9], v[10]),
            g_br=complex(v[11], v[12]),
            g_bu=complex(v[13], v[14]),
            g_bru=complex(v[15], v[16]),
        )


def friis_gain_magnitudes(scn: Scenario, cfg: RadioConfig):
    """Free-space magnitudes: lambda/(4 pi d) per hop, multiplied for the
    two-hop reflected path."""
    d_br = np.linalg.norm(scn.bs_position - scn.ris_position)
    d_bu = np.linalg.norm(scn.bs_position - scn.ue_position)
    d_ru = np.linalg.norm(scn.ris_position - scn.ue_position)
    per_meter = cfg.wavelength / (4.0 * np.pi)
    return per_meter / d_br, per_meter / d_bu, (per_meter**2) / (d_br * d_ru)


def fixed_gain_magnitudes(value):
    """Gain model that pins all three path magnitudes to ``value``."""

    def model(scn, cfg):
        return value, value, value

    return model


def channel_params_from_scenario(
    scn: Scenario, cfg: RadioConfig, gain_model=friis_gain_magnitudes, seed=0
) -> ChannelParams:
    """Ground-truth channel parameters for a scenario.

    TOAs include the receiving node's clock bias; the BS-frame angles are
    global, the RIS-frame angles use the configured rotation.  Gain phases
    are drawn uniformly (deterministic per seed) and applied as
    ``|g| exp(-j phase)``.
    """
    rot = rotation_from_angles(scn.ris_rotation)
    d_br = np.linalg.norm(scn.bs_position - scn.ris_position)
    d_bu = np.linalg.norm(scn.bs_position - scn.ue_position)
    d_ru = np.linalg.norm(scn.ris_position - scn.ue_position)
    if min(d_br, d_bu, d_ru) < 1e-9:
        raise DegenerateGeometry("coincident nodes")
    mag_br, mag_bu, mag_bru = gain_model(scn, cfg)
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    c = SPEED_OF_LIGHT
    return ChannelParams(
        tau_br=d_br / c + scn.clock_bias_ris,
        tau_bu=d_bu / c + scn.clock_bias_ue,
        tau_bru=(d_br + d_ru) / c + scn.clock_bias_ue,
        theta_br=angles_from_direction(direction_global(scn.bs_position, scn.ris_position)),
        theta_bu=angles_from_direction(direction_global(scn.bs_position, scn.ue_position)),
        theta_ru=angles_from_direction(direction_local(rot, scn.ris_position, scn.ue_position)),
        phi_rb=angles_from_direction(direction_local(rot, scn.ris_position, scn.bs_position)),
        g_br=mag_br * np.exp(-1j * phases[0]),
        g_bu=mag_bu * np.exp(-1j * phases[1]),
        g_bru=mag_bru * np.exp(-1j * phases[2]),
    )


@dataclass(frozen=True)
class CodebookSchedule:
    """Per-slot precoders (unit norm), sensing combiners (unit modulus), and
    reflection profiles (unit modulus, sign-flipped within each slot pair)."""

    precoders: np.ndarray  # (T, M_bs)
    combiners: np.ndarray  # (T, M_ris)
    reflections: np.ndarray  # (T, M_ris)


def _dft_matrix(size):
    idx = np.arange(size)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / size)


def build_schedule(cfg: RadioConfig, seed=0) -> CodebookSchedule:
    """DFT-codebook precoders/combiners plus random reflection profiles.

    Precoders repeat within each slot pair and cycle the BS DFT columns
    across pairs; combiners cycle the RIS DFT columns every slot.
    Reflection profiles have uniformly random phases on even slots and the
    negated profile on the following odd slot, which cancels the reflected
    path from pair sums and the direct path from pair differences.
    """
    t_count = cfg.n_transmissions
    if t_count % 2 != 0:
        raise OddT(f"n_transmissions must be even, got {t_count}")
    m_bs, m_ris = cfg.bs_elements, cfg.ris_elements
    dft_bs = _dft_matrix(m_bs) / np.sqrt(m_bs)
    dft_ris = _dft_matrix(m_ris)
    pair_idx = np.arange(t_count) // 2
    precoders = dft_bs[:, pair_idx % m_bs].T.copy()
    combiners = dft_ris[:, np.arange(t_count) % m_ris].T.copy()
    rng = np.random.default_rng(seed)
    gamma_even = np.exp(2j * np.pi * rng.uniform(size=(t_count // 2, m_ris)))
    reflections = np.empty((t_count, m_ris), dtype=complex)
    reflections[0::2] = gamma_even
    reflections[1::2] = -gamma_even
    return CodebookSchedule(precoders=precoders, combiners=combiners, reflections=reflections)


@dataclass(frozen=True)
class ObservationSet:
    """Complex K x T received matrices at the RIS RF chain and at the UE."""

    y_ris: np.ndarray
    y_ue: np.ndarray


def slot_factors(cfg: RadioConfig, sched: CodebookSchedule, params: ChannelParams):
    """Per-slot scalar factors of the three modeled paths.

    Returns (bs_to_ris, combiner, reflection, bs_to_ue): the precoded BS
    response toward the RIS, the combiner response to the BS arrival, the
    reflected cascade response toward the UE, and the precoded BS response
    toward the UE.
    """
    a_bs_ris = steering_vector(cfg.bs_shape, cfg.element_spacing, cfg.wavelength, params.theta_br)
    a_bs_ue = steering_vector(cfg.bs_shape, cfg.element_spacing, cfg.wavelength, params.theta_bu)
    a_ris_bs = steering_vector(cfg.ris_shape, cfg.element_spacing, cfg.wavelength, params.phi_rb)
    a_ris_ue = steering_vector(cfg.ris_shape, cfg.element_spacing, cfg.wavelength, params.theta_ru)
    bs_to_ris = sched.precoders @ a_bs_ris
    bs_to_ue = sched.precoders @ a_bs_ue
    combiner = sched.combiners @ a_ris_bs
    reflection = sched.reflections @ (a_ris_ue * a_ris_bs)
    return bs_to_ris, combiner, reflection, bs_to_ue


def mean_observations(cfg: RadioConfig, sched: CodebookSchedule, params: ChannelParams):
    """Noise-free scatterer-free K x T means at the RIS and the UE."""
    bs_to_ris, combiner, reflection, bs_to_ue = slot_factors(cfg, sched, params)
    k, df = cfg.n_subcarriers, cfg.subcarrier_spacing
    rho, power = cfg.power_split, cfg.tx_power
    mu_ris = (
        params.g_br
        * np.sqrt(rho * power)
        * np.outer(delay_steering(params.tau_br, k, df), combiner * bs_to_ris)
    )
    mu_ue = params.g_bu * np.sqrt(power) * np.outer(
        delay_steering(params.tau_bu, k, df), bs_to_ue
    ) + params.g_bru * np.sqrt((1.0 - rho) * power) * np.outer(
        delay_steering(params.tau_bru, k, df), reflection * bs_to_ris
    )
    return mu_ris, mu_ue


@dataclass(frozen=True)
class ScattererPaths:
    """Interference paths: delays (s), per-slot factors built from the AODs,
    and complex gains.  ``ue_factors`` has shape (n_paths, T)."""

    delays: np.ndarray
    gains: np.ndarray
    ue_factors: np.ndarray


def scatterer_paths(scn: Scenario, cfg: RadioConfig, sched: CodebookSchedule, seed=0):
    """Build the scatterer interference paths of the two link families.

    Direct-link paths bounce BS -> SP -> UE with radar-equation gains;
    reflected-link paths travel BS -> RIS -> SP -> UE, cascading free space
    on the first hop with the radar equation after the RIS.   Phases are
    uniform per seed.
    """
    rot = rotation_from_angles(scn.ris_rotation)
    c = SPEED_OF_LIGHT
    rng = np.random.default_rng(seed)
    a_bs_ris = steering_vector(
        cfg.bs_shape, cfg.element_spacing, cfg.wavelength, _bs_angle(scn, scn.ris_position)
    )
    a_ris_bs = steering_vector(
        cfg.ris_shape,
        cfg.element_spacing,
        cfg.wavelength,
        angles_from_direction(direction_local(rot, scn.ris_position, scn.bs_position)),
    )
    d_br = np.linalg.norm(scn.bs_position - scn.ris_position)
    radar_scale = cfg.wavelength * np.sqrt(scn.scatterer_rcs) / (4.0 * np.pi) ** 1.5
    friis_br = cfg.wavelength / (4.0 * np.pi * d_br)

    delays, gains, factors = [], [], []
    for p_sp in scn.scatterers_direct:
        d_bs = np.linalg.norm(scn.bs_position - p_sp)
        d_us = np.linalg.norm(scn.ue_position - p_sp)
        delays.append((d_bs + d_us) / c + scn.clock_bias_ue)
        gains.append(
            radar_scale / (d_bs * d_us) * np.exp(-1j * rng.uniform(0.0, 2.0 * np.pi))
        )
        a_bs_sp = steering_vector(
            cfg.bs_shape, cfg.element_spacing, cfg.wavelength, _bs_angle(scn, p_sp)
        )
        factors.append(np.sqrt(cfg.tx_power) * (sched.precoders @ a_bs_sp))
    for p_sp in scn.scatterers_reflected:
        d_rs = np.linalg.norm(scn.ris_position - p_sp)
        d_us = np.linalg.norm(scn.ue_position - p_sp)
        delays.append((d_br + d_rs + d_us) / c + scn.clock_bias_ue)
        gains.append(
            friis_br
            * radar_scale
            / (d_rs * d_us)
            * np.exp(-1j * rng.uniform(0.0, 2.0 * np.pi))
        )
        a_ris_sp = steering_vector(
            cfg.ris_shape,
            cfg.element_spacing,
            cfg.wavelength,
            angles_from_direction(direction_local(rot, scn.ris_position, p_sp)),
        )
        cascade = sched.reflections @ (a_ris_sp * a_ris_bs)
        factors.append(
            np.sqrt((1.0 - cfg.power_split) * cfg.tx_power)
            * cascade
            * (sched.precoders @ a_bs_ris)
        )
    if not delays:
        return ScattererPaths(
            delays=np.zeros(0),
            gains=np.zeros(0, dtype=complex),
            ue_factors=np.zeros((0, cfg.n_transmissions), dtype=complex),
        )
    return ScattererPaths(
        delays=np.array(delays), gains=np.array(gains), ue_factors=np.array(factors)
    )


def _bs_angle(scn, target):
    return angles_from_direction(direction_global(scn.bs_position, target))


def synthesize(
    scn: Scenario,
    cfg: RadioConfig,
    sched: CodebookSchedule,
    params: ChannelParams,
    noise_seed=0,
    scatterer_seed=0,
) -> ObservationSet:
    """Noisy K x T observations at the RIS and the UE.

    Noise is circularly-symmetric complex Gaussian with per-entry variance
    ``noise_variance(cfg)``, drawn independently for the two receivers.
    Scatterer interference (if the scenario carries scatterers) lands only
    in the UE observation.
    """
    mu_ris, mu_ue = mean_observations(cfg, sched, params)
    k, df = cfg.n_subcarriers, cfg.subcarrier_spacing
    paths = scatterer_paths(scn, cfg, sched, seed=scatterer_seed)
    mu_ue = mu_ue.copy()
    for delay, gain, factor in zip(paths.delays, paths.gains, paths.ue_factors):
        mu_ue += gain * np.outer(delay_steering(delay, k, df), factor)
    var = noise_variance(cfg)
    rng = np.random.default_rng(noise_seed)
    scale = np.sqrt(var / 2.0)
    shape = mu_ris.shape
    w_ris = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    w_ue = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return ObservationSet(y_ris=mu_ris + w_ris, y_ue=mu_ue + w_ue)


_DUMP_MAGIC = b"HRISOBS\x00"


def dump_observations(path, obs: ObservationSet):
    """Binary dump: 16-byte header (8-byte magic, uint32 K, uint32 T,
    little-endian) followed by the RIS then the UE matrix, each row-major
    with interleaved little-endian float64 (re, im) entries."""
    k, t = obs.y_ris.shape
    header = _DUMP_MAGIC + np.array([k, t], dtype="<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        for mat in (obs.y_ris, obs.y_ue):
            inter = np.empty((k, t, 2))
            inter[:, :, 0] = mat.real
            inter[:, :, 1] = mat.imag
            fh.write(inter.astype("<f8").tobytes())


def load_observations(path) -> ObservationSet:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if header[:8] != _DUMP_MAGIC:
            raise ValueError("not an observation dump (bad magic)")
        k, t = np.frombuffer(header[8:], dtype="<u4")
        k, t = int(k), int(t)
        mats = []
        for _ in range(2):
            raw = np.frombuffer(fh.read(k * t * 2 * 8), dtype="<f8").reshape(k, t, 2)
            mats.append(raw[:, :, 0] + 1j * raw[:, :, 1])
    return ObservationSet(y_ris=mats[0], y_ue=mats[1])
