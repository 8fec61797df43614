"""Ground-truth world description, waveform configuration, and file I/O.

Internally everything is SI: meters, seconds, radians, watts.  The JSON
scenario file uses field-mirroring keys with lengths in meters, angles in
degrees, and powers in dBm (dBm/Hz for the noise density, dB for the noise
figure); they are converted on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import OddT
from .geometry import RotationAngles

SPEED_OF_LIGHT = 299792458.0

_NO_SCATTERERS = np.zeros((0, 3))


@dataclass(frozen=True)
class Scenario:
    """Node placement, RIS orientation, clock biases, and scatterers."""

    bs_position: np.ndarray
    ue_position: np.ndarray
    ris_position: np.ndarray
    ris_rotation: RotationAngles
    clock_bias_ris: float = 0.0  # seconds
    clock_bias_ue: float = 0.0  # seconds
    scatterers_direct: np.ndarray = field(default_factory=lambda: _NO_SCATTERERS)
    scatterers_reflected: np.ndarray = field(default_factory=lambda: _NO_SCATTERERS)
    scatterer_rcs: float = 1.0  # m^2

    def __post_init__(self):
        for name in ("bs_position", "ue_position", "ris_position"):
            p = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(p)):
                raise ValueError(f"{name} has non-finite entries")
            p.setflags(write=False)
            object.__setattr__(self, name, p)
        pairs = (
            (self.bs_position, self.ue_position),
            (self.bs_position, self.ris_position),
            (self.ue_position, self.ris_position),
        )
        if any(np.array_equal(a, b) for a, b in pairs):
            raise ValueError("BS, UE, and RIS positions must be pairwise distinct")
        for name in ("scatterers_direct", "scatterers_reflected"):
            s = np.asarray(getattr(self, name), dtype=float).reshape(-1, 3)
            s.setflags(write=False)
            object.__setattr__(self, name, s)


@dataclass(frozen=True)
class RadioConfig:
    """Waveform, array, power, and noise parameters."""

    wavelength: float = 0.01  # m
    element_spacing: float = 0.0025  # m
    n_subcarriers: int = 128
    n_transmissions: int = 100  # must be even for the pairing scheme
    subcarrier_spacing: float = 120e3  # Hz
    tx_power: float = 1.0  # W (per-subcarrier, as the sqrt(P) factor)
    power_split: float = 0.5  # fraction of element power routed to sensing
    noise_psd: float = 10.0 ** ((-174.0 - 30.0) / 10.0)  # W/Hz
    noise_figure: float = 10.0 ** (5.0 / 10.0)  # power ratio
    fft_size: int = 4048
    bs_shape: tuple = (4, 4)  # (rows, cols)
    ris_shape: tuple = (16, 16)

    def __post_init__(self):
        if self.n_transmissions % 2 != 0:
            raise OddT(f"n_transmissions must be even, got {self.n_transmissions}")
        if self.element_spacing > self.wavelength / 2 + 1e-15:
            raise ValueError("element_spacing must not exceed wavelength / 2")
        if not 0.0 < self.power_split < 1.0:
            raise ValueError("power_split must lie strictly inside (0, 1)")
        for name in ("n_subcarriers", "n_transmissions", "fft_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("bs_shape", "ris_shape"):
            shape = tuple(int(v) for v in getattr(self, name))
            if len(shape) != 2 or min(shape) < 1:
                raise ValueError(f"{name} must be two counts >= 1")
            object.__setattr__(self, name, shape)

    @property
    def bs_elements(self) -> int:
        return self.bs_shape[0] * self.bs_shape[1]

    @property
    def ris_elements(self) -> int:
        return self.ris_shape[0] * self.ris_shape[1]


def default_scenario():
    """Desk-scale reference setup: BS at the origin, UE at [5, 2, 1] m, RIS
    at [2, 12, 3] m rotated by (alpha, gamma, beta) = (20, 10, 15) degrees,
    10/20 ns clock biases, and the default waveform of :class:`RadioConfig`.
    """
    scn = Scenario(
        bs_position=np.array([0.0, 0.0, 0.0]),
        ue_position=np.array([5.0, 2.0, 1.0]),
        ris_position=np.array([2.0, 12.0, 3.0]),
        ris_rotation=RotationAngles(
            alpha=math.radians(20.0), beta=math.radians(15.0), gamma=math.radians(10.0)
        ),
        clock_bias_ris=10e-9,
        clock_bias_ue=20e-9,
    )
    return scn, RadioConfig()


def place_scatterers(n_direct, n_reflected, seed):
    """Draw scatterer positions uniformly inside the two study boxes.

    Direct-link box: x in (-8, 8), y in (0, 3), z in (-5, 1) m.
    Reflected-link box: x in (2.5, 4.5), y in (4, 11), z in (-5, 1) m.
    Deterministic for a given seed.
    """
    if n_direct < 0 or n_reflected < 0:
        raise ValueError("scatterer counts must be >= 0")
    rng = np.random.default_rng(seed)
    lo_d, hi_d = np.array([-8.0, 0.0, -5.0]), np.array([8.0, 3.0, 1.0])
    lo_r, hi_r = np.array([2.5, 4.0, -5.0]), np.array([4.5, 11.0, 1.0])
    direct = rng.uniform(lo_d, hi_d, size=(n_direct, 3))
    reflected = rng.uniform(lo_r, hi_r, size=(n_reflected, 3))
    return direct, reflected


def noise_variance(cfg: RadioConfig) -> float:
    """Per-subcarrier, per-observation complex noise power in watts:
    PSD x subcarrier spacing x receiver noise figure."""
    return cfg.noise_psd * cfg.subcarrier_spacing * cfg.noise_figure


def _watt_to_dbm(w):
    return 10.0 * math.log10(w) + 30.0


def _dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def save_scenario(path, scn: Scenario, cfg: RadioConfig):
    """Write a scenario/config JSON file (degrees and dBm on disk)."""
    doc = {
        "scenario": {
            "bs_position": list(scn.bs_position),
            "ue_position": list(scn.ue_position),
            "ris_position": list(scn.ris_position),
            "ris_rotation": {
                "alpha": math.degrees(scn.ris_rotation.alpha),
                "beta": math.degrees(scn.ris_rotation.beta),
                "gamma": math.degrees(scn.ris_rotation.gamma),
            },
            "clock_bias_ris": scn.clock_bias_ris,
            "clock_bias_ue": scn.clock_bias_ue,
            "scatterers_direct": [list(p) for p in scn.scatterers_direct],
            "scatterers_reflected": [list(p) for p in scn.scatterers_reflected],
            "scatterer_rcs": scn.scatterer_rcs,
        },
        "radio": {
            "wavelength": cfg.wavelength,
            "element_spacing": cfg.element_spacing,
            "n_subcarriers": cfg.n_subcarriers,
            "n_transmissions": cfg.n_transmissions,
            "subcarrier_spacing": cfg.subcarrier_spacing,
            "tx_power_dbm": _watt_to_dbm(cfg.tx_power),
            "power_split": cfg.power_split,
            "noise_psd_dbm_hz": _watt_to_dbm(cfg.noise_psd),
            "noise_figure_db": 10.0 * math.log10(cfg.noise_figure),
            "fft_size": cfg.fft_size,
            "bs_shape": list(cfg.bs_shape),
            "ris_shape": list(cfg.ris_shape),
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_scenario(path):
    """Load a scenario/config JSON file written by :func:`save_scenario`."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    s = doc["scenario"]
    r = doc["radio"]
    scn = Scenario(
        bs_position=np.array(s["bs_position"], dtype=float),
        ue_position=np.array(s["ue_position"], dtype=float),
        ris_position=np.array(s["ris_position"], dtype=float),
        ris_rotation=RotationAngles(
            alpha=math.radians(s["ris_rotation"]["alpha"]),
            beta=math.radians(s["ris_rotation"]["beta"]),
            gamma=math.radians(s["ris_rotation"]["gamma"]),
        ),
        clock_bias_ris=float(s["clock_bias_ris"]),
        clock_bias_ue=float(s["clock_bias_ue"]),
        scatterers_direct=np.array(s["scatterers_direct"], dtype=float).reshape(-1, 3),
        scatterers_reflected=np.array(s["scatterers_reflected"], dtype=float).reshape(-1, 3),
        scatterer_rcs=float(s["scatterer_rcs"]),
    )
    cfg = RadioConfig(
        wavelength=float(r["wavelength"]),
        element_spacing=float(r["element_spacing"]),
        n_subcarriers=int(r["n_subcarriers"]),
        n_transmissions=int(r["n_transmissions"]),
        subcarrier_spacing=float(r["subcarrier_spacing"]),
        tx_power=_dbm_to_watt(float(r["tx_power_dbm"])),
        power_split=float(r["power_split"]),
        noise_psd=_dbm_to_watt(float(r["noise_psd_dbm_hz"])),
        noise_figure=10.0 ** (float(r["noise_figure_db"]) / 10.0),
        fft_size=int(r["fft_size"]),
        bs_shape=tuple(r["bs_shape"]),
        ris_shape=tuple(r["ris_shape"]),
    )
    return scn, cfg


def with_overrides(scn: Scenario, cfg: RadioConfig, overrides: dict):
    """Apply ``field=value`` overrides to either dataclass.

    Raises KeyError listing the valid keys when a key matches neither.
    Sequence-valued fields accept comma-separated strings.
    """
    scn_fields = {f for f in scn.__dataclass_fields__}
    cfg_fields = {f for f in cfg.__dataclass_fields__}
    scn_kwargs, cfg_kwargs = {}, {}
    for key, raw in overrides.items():
        if key in scn_fields:
            scn_kwargs[key] = _coerce(getattr(scn, key), raw)
        elif key in cfg_fields:
            cfg_kwargs[key] = _coerce(getattr(cfg, key), raw)
        else:
            valid = ", ".join(sorted(scn_fields | cfg_fields))
            raise KeyError(f"unknown override key '{key}'; valid keys: {valid}")
    if scn_kwargs:
        scn = replace(scn, **scn_kwargs)
    if cfg_kwargs:
        cfg = replace(cfg, **cfg_kwargs)
    return scn, cfg


def _coerce(current, raw):
    if not isinstance(raw, str):
        return raw
    if isinstance(current, RotationAngles):
        a, b, g = (float(v) for v in raw.split(","))
        return RotationAngles(alpha=a, beta=b, gamma=g)
    if isinstance(current, np.ndarray):
        return np.array([float(v) for v in raw.split(",")])
    if isinstance(current, tuple):
        return tuple(int(v) for v in raw.split(","))
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw
