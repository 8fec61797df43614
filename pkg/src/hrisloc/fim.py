"""Fisher information, the channel-to-state Jacobian, the constrained CRB
under the rotation-orthogonality constraint, and bound extraction.

Parameter layouts
-----------------
channel vector (17): [tau_br, tau_bu, tau_bru,
                      theta_br(az, el), theta_bu(az, el),
                      theta_ru(az, el), phi_rb(az, el),
                      Re/Im g_br, Re/Im g_bu, Re/Im g_bru]
state vector (17):   [ris_position (3), ue_position (3),
                      clock_bias_ris, clock_bias_ue,
                      rotation columns stacked (9)]
The first 11 channel entries (TOAs and angles) form the reduced vector the
equivalent FIM is taken over.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateGeometry, SingularFIM, SingularReducedFIM
from .geometry import Rotation, rotation_from_angles
from .scenario import SPEED_OF_LIGHT, RadioConfig, Scenario, noise_variance
from .signal import (
    ChannelParams,
    CodebookSchedule,
    delay_steering,
    delay_steering_derivative,
    steering_derivatives,
    steering_vector,
)

N_CHANNEL = 17
N_REDUCED = 11
N_STATE = 17

# Eigenvalues of the (diagonally equilibrated) matrix below EIG_RTOL * max
# are treated as zero.  The threshold sits just above float64 resolution so
# extreme-but-valid configurations (power split within 1e-6 of its limits)
# stay invertible while structural identifiability failures still raise.
EIG_RTOL = 1e-15


def mean_derivatives(cfg: RadioConfig, sched: CodebookSchedule, params: ChannelParams):
    """Analytic derivatives of the noise-free means w.r.t. the 17 channel
    parameters.

    Returns (d_ris, d_ue), each of shape (17, K, T); entry [j] is the
    partial derivative of the corresponding K x T mean.
    """
    k, df = cfg.n_subcarriers, cfg.subcarrier_spacing
    t = cfg.n_transmissions
    rho, power = cfg.power_split, cfg.tx_power
    sqrt_s = np.sqrt(rho * power)  # sensed amplitude
    sqrt_d = np.sqrt(power)  # direct amplitude
    sqrt_r = np.sqrt((1.0 - rho) * power)  # reflected amplitude

    a_args = (cfg.element_spacing, cfg.wavelength)
    a_bs_ris = steering_vector(cfg.bs_shape, *a_args, params.theta_br)
    a_bs_ue = steering_vector(cfg.bs_shape, *a_args, params.theta_bu)
    a_ris_bs = steering_vector(cfg.ris_shape, *a_args, params.phi_rb)
    a_ris_ue = steering_vector(cfg.ris_shape, *a_args, params.theta_ru)
    da_bs_ris = steering_derivatives(cfg.bs_shape, *a_args, params.theta_br)
    da_bs_ue = steering_derivatives(cfg.bs_shape, *a_args, params.theta_bu)
    da_ris_bs = steering_derivatives(cfg.ris_shape, *a_args, params.phi_rb)
    da_ris_ue = steering_derivatives(cfg.ris_shape, *a_args, params.theta_ru)

    f_ris = sched.precoders @ a_bs_ris  # (T,)
    f_ue = sched.precoders @ a_bs_ue
    comb = sched.combiners @ a_ris_bs
    refl = sched.reflections @ (a_ris_ue * a_ris_bs)

    d_br = delay_steering(params.tau_br, k, df)
    d_bu = delay_steering(params.tau_bu, k, df)
    d_bru = delay_steering(params.tau_bru, k, df)
    ddot_br = delay_steering_derivative(params.tau_br, k, df)
    ddot_bu = delay_steering_derivative(params.tau_bu, k, df)
    ddot_bru = delay_steering_derivative(params.tau_bru, k, df)

    d_ris = np.zeros((N_CHANNEL, k, t), dtype=complex)
    d_ue = np.zeros((N_CHANNEL, k, t), dtype=complex)

    # sensed path (RIS observation)
    base_ris = params.g_br * sqrt_s
    d_ris[0] = base_ris * np.outer(ddot_br, comb * f_ris)
    for i, da in enumerate(da_bs_ris):  # theta_br az, el
        d_ris[3 + i] = base_ris * np.outer(d_br, comb * (sched.precoders @ da))
    for i, da in enumerate(da_ris_bs):  # phi_rb az, el
        d_ris[9 + i] = base_ris * np.outer(d_br, (sched.combiners @ da) * f_ris)
    unit_ris = sqrt_s * np.outer(d_br, comb * f_ris)
    d_ris[11] = unit_ris
    d_ris[12] = 1j * unit_ris

    # direct path (UE observation)
    base_dir = params.g_bu * sqrt_d
    d_ue[1] = base_dir * np.outer(ddot_bu, f_ue)
    for i, da in enumerate(da_bs_ue):  # theta_bu az, el
        d_ue[5 + i] = base_dir * np.outer(d_bu, sched.precoders @ da)
    unit_dir = sqrt_d * np.outer(d_bu, f_ue)
    d_ue[13] = unit_dir
    d_ue[14] = 1j * unit_dir

    # reflected path (UE observation)
    base_refl = params.g_bru * sqrt_r
    d_ue[2] = base_refl * np.outer(ddot_bru, refl * f_ris)
    for i, da in enumerate(da_bs_ris):  # theta_br az, el couples via the cascade
        d_ue[3 + i] += base_refl * np.outer(d_bru, refl * (sched.precoders @ da))
    for i, da in enumerate(da_ris_ue):  # theta_ru az, el
        d_ue[7 + i] = base_refl * np.outer(
            d_bru, (sched.reflections @ (da * a_ris_bs)) * f_ris
        )
    for i, da in enumerate(da_ris_bs):  # phi_rb az, el couples via the cascade
        d_ue[9 + i] += base_refl * np.outer(
            d_bru, (sched.reflections @ (a_ris_ue * da)) * f_ris
        )
    unit_refl = sqrt_r * np.outer(d_bru, refl * f_ris)
    d_ue[15] = unit_refl
    d_ue[16] = 1j * unit_refl

    return d_ris, d_ue


def channel_fim(cfg: RadioConfig, sched: CodebookSchedule, params: ChannelParams):
    """17 x 17 Fisher information of the channel parameters: the Gaussian
    parameter-dependent-mean form 2/sigma^2 * sum Re{dmu dmu^H}."""
    d_ris, d_ue = mean_derivatives(cfg, sched, params)
    flat = np.concatenate(
        [d_ris.reshape(N_CHANNEL, -1), d_ue.reshape(N_CHANNEL, -1)], axis=1
    )
    var = noise_variance(cfg)
    fim = (2.0 / var) * np.real(flat @ flat.conj().T)
    return 0.5 * (fim + fim.T)


def _eig_inverse(matrix, error_cls, label):
    """Symmetric inverse via eigendecomposition; raises when the spectrum is
    numerically rank-deficient rather than silently pseudo-inverting.

    The matrix is diagonally equilibrated first so the eigenvalue cutoff
    measures parameter coupling, not the (enormous) unit disparity between
    seconds, radians, and gains."""
    sym = 0.5 * (matrix + matrix.T)
    diag = np.diag(sym).copy()
    if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
        raise error_cls(f"{label} has a non-positive diagonal", condition_number=np.inf)
    scale = 1.0 / np.sqrt(diag)
    balanced = sym * np.outer(scale, scale)
    vals, vecs = np.linalg.eigh(balanced)
    top = np.max(np.abs(vals))
    if top == 0.0 or np.min(vals) <= EIG_RTOL * top:
        cond = np.inf if np.min(np.abs(vals)) <= 0 else top / np.min(np.abs(vals))
        raise error_cls(
            f"{label} is numerically singular (condition number {cond:.3e})",
            condition_number=cond,
        )
    inv = (vecs / vals) @ vecs.T
    inv = inv * np.outer(scale, scale)
    return 0.5 * (inv + inv.T)


def efim_channel(fim17: np.ndarray) -> np.ndarray:
    """Equivalent 11 x 11 FIM of TOAs and angles after marginalizing the
    complex gains: invert, keep the leading block, invert back."""
    inv = _eig_inverse(fim17, SingularFIM, "channel FIM")
    return _eig_inverse(
        inv[:N_REDUCED, :N_REDUCED], SingularFIM, "reduced channel covariance"
    )


def _azimuth_gradient(basis_1, basis_2, direction):
    c1 = basis_1 @ direction
    c2 = basis_2 @ direction
    return (c1 * basis_2 - c2 * basis_1) / (c1**2 + c2**2)


def _elevation_gradient(basis_3, direction):
    c3 = basis_3 @ direction
    return -basis_3 / np.sqrt(1.0 - c3**2)


def state_jacobian(scn: Scenario) -> np.ndarray:
    """11 x 17 Jacobian of the reduced channel vector w.r.t. the state.

    Rows follow the channel ordering (3 TOAs then 4 angle pairs); columns
    follow the state ordering.  The reflected-path TOA row carries both the
    BS-RIS and the RIS-UE leg derivatives w.r.t. the RIS position.
    """
    p_b, p_u, p_r = scn.bs_position, scn.ue_position, scn.ris_position
    rot = rotation_from_angles(scn.ris_rotation)
    r1, r2, r3 = rot.columns
    d_br = np.linalg.norm(p_r - p_b)
    d_bu = np.linalg.norm(p_u - p_b)
    d_ru = np.linalg.norm(p_u - p_r)
    if min(d_br, d_bu, d_ru) < 1e-9:
        raise DegenerateGeometry("coincident nodes")
    u_dr = (p_r - p_b) / d_br  # BS -> RIS
    u_du = (p_u - p_b) / d_bu  # BS -> UE
    v_ab = (p_b - p_r) / d_br  # RIS -> BS
    v_du = (p_u - p_r) / d_ru  # RIS -> UE
    c = SPEED_OF_LIGHT
    e1, e2, e3 = np.eye(3)

    jac = np.zeros((N_REDUCED, N_STATE))
    # TOA rows
    jac[0, 0:3] = u_dr / c
    jac[0, 6] = 1.0
    jac[1, 3:6] = u_du / c
    jac[1, 7] = 1.0
    jac[2, 0:3] = (u_dr - v_du) / c  # both legs of the reflected path meet at the RIS
    jac[2, 3:6] = v_du / c
    jac[2, 7] = 1.0

    # unit-direction Jacobians w.r.t. positions
    du_dr = (np.eye(3) - np.outer(u_dr, u_dr)) / d_br  # d u_dr / d p_r
    du_du = (np.eye(3) - np.outer(u_du, u_du)) / d_bu  # d u_du / d p_u
    dv_ab = (np.outer(v_ab, v_ab) - np.eye(3)) / d_br  # d v_ab / d p_r
    dv_du_r = (np.outer(v_du, v_du) - np.eye(3)) / d_ru  # d v_du / d p_r
    dv_du_u = (np.eye(3) - np.outer(v_du, v_du)) / d_ru  # d v_du / d p_u

    # global-frame angles: theta_br (rows 3:5) over p_r, theta_bu (5:7) over p_u
    jac[3, 0:3] = _azimuth_gradient(e1, e2, u_dr) @ du_dr
    jac[4, 0:3] = _elevation_gradient(e3, u_dr) @ du_dr
    jac[5, 3:6] = _azimuth_gradient(e1, e2, u_du) @ du_du
    jac[6, 3:6] = _elevation_gradient(e3, u_du) @ du_du

    # RIS-frame angles: theta_ru (7:9) over p_r, p_u, and the rotation
    az_ru = _azimuth_gradient(r1, r2, v_du)
    el_ru = _elevation_gradient(r3, v_du)
    jac[7, 0:3] = az_ru @ dv_du_r
    jac[7, 3:6] = az_ru @ dv_du_u
    jac[8, 0:3] = el_ru @ dv_du_r
    jac[8, 3:6] = el_ru @ dv_du_u
    jac[7, 8:17] = _angle_rotation_gradient(r1, r2, v_du, azimuth=True)
    jac[8, 8:17] = _angle_rotation_gradient(r1, r2, v_du, azimuth=False, basis_3=r3)

    # RIS-frame angles: phi_rb (9:11) over p_r and the rotation
    az_rb = _azimuth_gradient(r1, r2, v_ab)
    el_rb = _elevation_gradient(r3, v_ab)
    jac[9, 0:3] = az_rb @ dv_ab
    jac[10, 0:3] = el_rb @ dv_ab
    jac[9, 8:17] = _angle_rotation_gradient(r1, r2, v_ab, azimuth=True)
    jac[10, 8:17] = _angle_rotation_gradient(r1, r2, v_ab, azimuth=False, basis_3=r3)
    return jac


def _angle_rotation_gradient(r1, r2, direction, azimuth, basis_3=None):
    """Gradient of a RIS-frame angle w.r.t. the 9 stacked rotation columns."""
    grad = np.zeros(9)
    if azimuth:
        c1 = r1 @ direction
        c2 = r2 @ direction
        denom = c1**2 + c2**2
        grad[0:3] = -c2 * direction / denom  # w.r.t. r1
        grad[3:6] = c1 * direction / denom  # w.r.t. r2
    else:
        c3 = basis_3 @ direction
        grad[6:9] = -direction / np.sqrt(1.0 - c3**2)  # w.r.t. r3
    return grad


def channel_vector_from_state(state: np.ndarray, bs_position) -> np.ndarray:
    """Reduced channel vector (3 TOAs + 4 angle pairs) as a raw function of
    the 17 state coordinates.

    Works for non-orthogonal rotation blocks too (the angle formulas act on
    the stacked columns directly), which makes it usable as a finite-
    difference oracle for :func:`state_jacobian`.
    """
    state = np.asarray(state, dtype=float)
    p_r, p_u = state[0:3], state[3:6]
    b_r, b_u = state[6], state[7]
    r1, r2, r3 = state[8:11], state[11:14], state[14:17]
    p_b = np.asarray(bs_position, dtype=float)
    c = SPEED_OF_LIGHT
    d_br = np.linalg.norm(p_r - p_b)
    d_bu = np.linalg.norm(p_u - p_b)
    d_ru = np.linalg.norm(p_u - p_r)
    u_dr = (p_r - p_b) / d_br
    u_du = (p_u - p_b) / d_bu
    v_ab = (p_b - p_r) / d_br
    v_du = (p_u - p_r) / d_ru
    return np.array(
        [
            d_br / c + b_r,
            d_bu / c + b_u,
            (d_br + d_ru) / c + b_u,
            np.arctan2(u_dr[1], u_dr[0]),
            np.arccos(u_dr[2]),
            np.arctan2(u_du[1], u_du[0]),
            np.arccos(u_du[2]),
            np.arctan2(r2 @ v_du, r1 @ v_du),
            np.arccos(r3 @ v_du),
            np.arctan2(r2 @ v_ab, r1 @ v_ab),
            np.arccos(r3 @ v_ab),
        ]
    )


def state_vector(scn: Scenario) -> np.ndarray:
    rot = rotation_from_angles(scn.ris_rotation)
    return np.concatenate(
        [
            scn.ris_position,
            scn.ue_position,
            [scn.clock_bias_ris, scn.clock_bias_ue],
            rot.as_vector(),
        ]
    )


def state_fim(efim11: np.ndarray, jacobian: np.ndarray) -> np.ndarray:
    """17 x 17 state FIM: J^T-weighted pullback of the reduced channel FIM."""
    fim = jacobian.T @ efim11 @ jacobian
    return 0.5 * (fim + fim.T)


def orthogonality_tangent_basis(rot: Rotation) -> np.ndarray:
    """9 x 3 basis of the tangent space of the orthogonality constraint at
    the given rotation (each column annihilates the constraint gradient)."""
    r1, r2, r3 = rot.columns
    z = np.zeros(3)
    return np.block(
        [
            [np.stack([-r3, z, r2], axis=1)],
            [np.stack([z, -r3, -r1], axis=1)],
            [np.stack([r1, r2, z], axis=1)],
        ]
    )


def constraint_gradient(rot: Rotation) -> np.ndarray:
    """6 x 17 gradient of the orthogonality/unit-norm constraint equations
    w.r.t. the state vector (nonzero only in the rotation block)."""
    r1, r2, r3 = rot.columns
    z = np.zeros(3)
    rows = [
        np.concatenate([2 * r1, z, z]),
        np.concatenate([r2, r1, z]),
        np.concatenate([r3, z, r1]),
        np.concatenate([z, 2 * r2, z]),
        np.concatenate([z, r3, r2]),
        np.concatenate([z, z, 2 * r3]),
    ]
    grad = np.zeros((6, N_STATE))
    grad[:, 8:17] = np.stack(rows)
    return grad


def reduction_matrix(rot: Rotation) -> np.ndarray:
    """17 x 11 reduction: identity on positions/clocks, the scaled tangent
    basis on the rotation block."""
    phi = np.zeros((N_STATE, 11))
    phi[0:8, 0:8] = np.eye(8)
    phi[8:17, 8:11] = orthogonality_tangent_basis(rot) / np.sqrt(2.0)
    return phi


def constrained_crb(state_fim17: np.ndarray, rot: Rotation) -> np.ndarray:
    """17 x 17 constrained CRB of the state under the rotation-orthogonality
    constraint."""
    phi = reduction_matrix(rot)
    reduced = phi.T @ state_fim17 @ phi
    inv = _eig_inverse(reduced, SingularReducedFIM, "constraint-reduced state FIM")
    crb = phi @ inv @ phi.T
    return 0.5 * (crb + crb.T)


# index blocks of the state vector, usable as "known parameter" labels
STATE_BLOCKS = {
    "ris_position": slice(0, 3),
    "ue_position": slice(3, 6),
    "clock_bias_ris": slice(6, 7),
    "clock_bias_ue": slice(7, 8),
    "rotation": slice(8, 17),
}


def state_crb_with_known(state_fim17: np.ndarray, rot: Rotation, known=()):
    """Constrained CRB when some state blocks are known a priori.

    Known blocks are removed from the FIM (standard known-nuisance
    treatment); the rotation constraint applies only while the rotation is
    unknown.  Returns (crb, kept_indices) where ``crb`` covers the kept
    state coordinates in their original order.
    """
    known = set(known)
    unknown = {name for name in STATE_BLOCKS if name not in known}
    keep = np.concatenate(
        [np.arange(N_STATE)[STATE_BLOCKS[name]] for name in STATE_BLOCKS if name in unknown]
    )
    sub = state_fim17[np.ix_(keep, keep)]
    if "rotation" in known:
        crb = _eig_inverse(sub, SingularReducedFIM, "known-parameter state FIM")
        return crb, keep
    n_front = len(keep) - 9
    phi = np.zeros((len(keep), n_front + 3))
    phi[0:n_front, 0:n_front] = np.eye(n_front)
    phi[n_front:, n_front:] = orthogonality_tangent_basis(rot) / np.sqrt(2.0)
    reduced = phi.T @ sub @ phi
    inv = _eig_inverse(reduced, SingularReducedFIM, "constraint-reduced state FIM")
    crb = phi @ inv @ phi.T
    return 0.5 * (crb + crb.T), keep


@dataclass(frozen=True)
class BoundReport:
    """Root-CRB values: TOA bounds in meters (scaled by the speed of light),
    angle bounds in radians, position bounds in meters, clock bounds in
    seconds, and the rotation bound as a Frobenius norm."""

    teb_br: float
    teb_bu: float
    teb_bru: float
    adeb_br: float
    adeb_bu: float
    adeb_ru: float
    aaeb_rb: float
    peb_r: float
    peb_u: float
    ceb_r: float
    ceb_u: float
    oeb: float

    CSV_HEADER = (
        "scenario_id,P_B_dBm,rho,teb_br_m,teb_bu_m,teb_bru_m,"
        "adeb_br_rad,adeb_bu_rad,adeb_ru_rad,aaeb_rb_rad,"
        "peb_r_m,peb_u_m,ceb_r_s,ceb_u_s,oeb"
    )

    @staticmethod
    def metrics_field_names():
        return (
            "teb_br", "teb_bu", "teb_bru", "adeb_br", "adeb_bu", "adeb_ru",
            "aaeb_rb", "peb_r", "peb_u", "ceb_r", "ceb_u", "oeb",
        )

    def metrics(self) -> dict:
        """Bound values keyed by the CSV metric column names."""
        return {
            "teb_br_m": self.teb_br,
            "teb_bu_m": self.teb_bu,
            "teb_bru_m": self.teb_bru,
            "adeb_br_rad": self.adeb_br,
            "adeb_bu_rad": self.adeb_bu,
            "adeb_ru_rad": self.adeb_ru,
            "aaeb_rb_rad": self.aaeb_rb,
            "peb_r_m": self.peb_r,
            "peb_u_m": self.peb_u,
            "ceb_r_s": self.ceb_r,
            "ceb_u_s": self.ceb_u,
            "oeb": self.oeb,
        }

    def csv_row(self, scenario_id, p_b_dbm, rho) -> str:
        values = [f"{v:.17g}" for v in self.metrics().values()]
        return ",".join([str(scenario_id), f"{p_b_dbm:.17g}", f"{rho:.17g}"] + values)


def extract_bounds(crb17: np.ndarray, efim11: np.ndarray) -> BoundReport:
    """Pull every reported bound out of the state CRB and the reduced
    channel FIM.  Pair bounds take the root of the block trace."""
    inv11 = _eig_inverse(efim11, SingularFIM, "reduced channel FIM")

    def block(mat, lo, hi):
        return float(np.sqrt(np.trace(mat[lo:hi, lo:hi])))

    c = SPEED_OF_LIGHT
    return BoundReport(
        teb_br=c * float(np.sqrt(inv11[0, 0])),
        teb_bu=c * float(np.sqrt(inv11[1, 1])),
        teb_bru=c * float(np.sqrt(inv11[2, 2])),
        adeb_br=block(inv11, 3, 5),
        adeb_bu=block(inv11, 5, 7),
        adeb_ru=block(inv11, 7, 9),
        aaeb_rb=block(inv11, 9, 11),
        peb_r=block(crb17, 0, 3),
        peb_u=block(crb17, 3, 6),
        ceb_r=float(np.sqrt(crb17[6, 6])),
        ceb_u=float(np.sqrt(crb17[7, 7])),
        oeb=block(crb17, 8, 17),
    )


def compute_bounds(
    scn: Scenario, cfg: RadioConfig, sched: CodebookSchedule, params: ChannelParams
) -> BoundReport:
    """Full chain: channel FIM -> EFIM -> state FIM -> constrained CRB ->
    bound report.

    The FIM is proportional to the transmit power, so the chain runs at
    unit power and the report is scaled by power^(-1/2) afterwards; this
    keeps the power scaling of every bound exact instead of letting the
    ill-conditioned inversions re-round under a scaled input."""
    unit_cfg = replace(cfg, tx_power=1.0)
    efim = efim_channel(channel_fim(unit_cfg, sched, params))
    jac = state_jacobian(scn)
    crb = constrained_crb(state_fim(efim, jac), rotation_from_angles(scn.ris_rotation))
    report = extract_bounds(crb, efim)
    factor = 1.0 / np.sqrt(cfg.tx_power)
    scaled = {name: factor * getattr(report, name) for name in report.metrics_field_names()}
    return BoundReport(**scaled)
