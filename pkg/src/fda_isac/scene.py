"""Sensing snapshots and communication receive vectors for a configured scene."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ccie
from .array_model import ArrayConfig, ConfigError, joint_steering
from .constants import SPEED_OF_LIGHT


@dataclass(frozen=True)
class Target:
    range_m: float
    angle_deg: float
    velocity_mps: float = 0.0
    reflection: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.range_m < 0:
            raise ConfigError(f"target range must be >= 0, got {self.range_m}")
        if abs(self.angle_deg) > 90:
            raise ConfigError(f"target angle must lie in [-90, 90] deg, got {self.angle_deg}")
        object.__setattr__(self, "reflection", complex(self.reflection))

    @property
    def angle_rad(self) -> float:
        return math.radians(self.angle_deg)

    def doppler_hz(self, cfg: ArrayConfig) -> float:
        return 2.0 * self.velocity_mps * cfg.carrier_hz / SPEED_OF_LIGHT


@dataclass(frozen=True)
class Scene:
    targets: tuple[Target, ...] = ()
    sensing_noise_power: float = 1.0
    comm_noise_power: float = 1.0
    comm_channel_power: float = 1.0
    comm_user: tuple[float, float] | None = None  # (range m, angle deg), informational

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        # zero noise is allowed as the noiseless limit
        if self.sensing_noise_power < 0 or self.comm_noise_power < 0:
            raise ConfigError("noise powers must be non-negative")
        if self.comm_channel_power <= 0:
            raise ConfigError("channel power must be positive")

    def with_noise(self, sensing: float | None = None, comm: float | None = None) -> "Scene":
        return Scene(self.targets,
                     self.sensing_noise_power if sensing is None else sensing,
                     self.comm_noise_power if comm is None else comm,
                     self.comm_channel_power, self.comm_user)


def check_scene(scene: Scene, cfg: ArrayConfig) -> None:
    vmax = cfg.max_unambiguous_velocity
    for t in scene.targets:
        if abs(t.velocity_mps) >= vmax:
            raise ConfigError(f"|v| = {abs(t.velocity_mps)} m/s exceeds the unambiguous "
                              f"limit {vmax:g} m/s")


def doppler_phase(target: Target, k: int, cfg: ArrayConfig) -> float:
    """Doppler phase of pulse ``k`` (1-based) in cycles."""
    return target.doppler_hz(cfg) * (k - 1) * cfg.pri_s


def cn_noise(rng: np.random.Generator, shape, power: float) -> np.ndarray:
    scale = math.sqrt(power / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _manifold(scene: Scene, cfg: ArrayConfig) -> np.ndarray:
    if not scene.targets:
        return np.zeros((cfg.n_virtual, 0), dtype=complex)
    r = np.array([t.range_m for t in scene.targets])
    th = np.array([t.angle_rad for t in scene.targets])
    return joint_steering(r, th, cfg).T


def _doppler_rows(scene: Scene, cfg: ArrayConfig, n_pulses: int) -> np.ndarray:
    """Reflection-weighted Doppler rows, (G, K)."""
    if not scene.targets:
        return np.zeros((0, n_pulses), dtype=complex)
    f = np.array([t.doppler_hz(cfg) for t in scene.targets])
    xi = np.array([t.reflection for t in scene.targets])
    cyc = np.outer(f * cfg.pri_s, np.arange(n_pulses))
    return xi[:, None] * np.exp(2j * np.pi * (cyc - np.floor(cyc)))


def synth_snapshot(scene: Scene, cfg: ArrayConfig, frame: ccie.PduFrame, k: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Raw demodulated output y^k of all M*N channels for pulse ``k`` (1-based)."""
    if frame.n_tx != cfg.n_tx:
        raise ValueError(f"frame has {frame.n_tx} antennas, array has {cfg.n_tx}")
    a = _manifold(scene, cfg)
    d = _doppler_rows(scene, cfg, k)[:, k - 1]
    clean = (a @ d) * np.tile(frame.ccie_symbols, cfg.n_rx)
    return clean + cn_noise(rng, cfg.n_virtual, scene.sensing_noise_power)


def compensate(y_raw: np.ndarray, frame: ccie.PduFrame, n_rx: int | None = None) -> np.ndarray:
    """Remove the CCIE symbols from a raw snapshot by exact division."""
    x = np.asarray(frame.ccie_symbols)
    if np.any(x == 0):
        raise ValueError("zero CCIE symbol cannot be compensated")
    n_rx = y_raw.shape[0] // x.size if n_rx is None else n_rx
    return y_raw / np.tile(x, n_rx)


@dataclass
class SnapshotSet:
    data: np.ndarray   # compensated, (MN, K)
    raw: np.ndarray    # before compensation, (MN, K)
    frames: list = field(default_factory=list)
    manifold: np.ndarray | None = None   # ground-truth A, (MN, G)
    doppler: np.ndarray | None = None    # ground-truth reflection-weighted D, (G, K)

    @property
    def n_pulses(self) -> int:
        return self.data.shape[1]


def synth_cpi(scene: Scene, cfg: ArrayConfig, ccie_cfg: ccie.CcieConfig,
              rng: np.random.Generator, n_pulses: int | None = None) -> SnapshotSet:
    """Synthesize one CPI: random CCIE frames, target echoes and receiver noise."""
    check_scene(scene, cfg)
    k = cfg.pulses_per_cpi if n_pulses is None else n_pulses
    bits = rng.integers(0, 2, (k, ccie_cfg.frame_bits(cfg.n_tx)), dtype=np.uint8)
    idx, lab, sym = ccie.encode_batch(bits, ccie_cfg)
    frames = [ccie.PduFrame(idx[i], lab[i], ccie_cfg.alphabet[lab[i]], sym[i], bits[i])
              for i in range(k)]

    a = _manifold(scene, cfg)
    d = _doppler_rows(scene, cfg, k)
    b = np.tile(sym.T, (cfg.n_rx, 1))  # (MN, K) symbol of the transmit channel of each row
    raw = (a @ d) * b + cn_noise(rng, (cfg.n_virtual, k), scene.sensing_noise_power)
    return SnapshotSet(raw / b, raw, frames, a, d)


def draw_channel(rng: np.random.Generator, n_rx_user: int, n_tx: int, power: float) -> np.ndarray:
    """Rayleigh channel matrix h_{u,n} ~ CN(0, power), shape (U, N)."""
    return cn_noise(rng, (n_rx_user, n_tx), power)


def synth_comm_rx(frame: ccie.PduFrame, channel: np.ndarray, noise_power: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Per-transmit-antenna stacked user outputs; row n is x_n h_n + noise, shape (N, U)."""
    channel = np.asarray(channel, dtype=complex)
    if channel.shape[1] != frame.n_tx:
        raise ValueError(f"channel {channel.shape} does not match {frame.n_tx} antennas")
    clean = frame.ccie_symbols[:, None] * channel.T
    return clean + cn_noise(rng, clean.shape, noise_power)
