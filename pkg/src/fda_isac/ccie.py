"""Complex-coefficient information embedding (CCIE) modem.

Each transmit antenna carries ``floor(log2 J)`` index bits, which select one
entry of a shared coefficient vector ``c``, and ``log2 L`` QAM bits. The
transmitted symbol is ``c[i] * x``. Indices and QAM labels are 0-based here.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .array_model import ConfigError

MAX_COEFF_RETRIES = 1000
MIN_PRODUCT_DISTANCE = 1e-6


# --- QAM ---------------------------------------------------------------------

def qam_dims(order: int) -> tuple[int, int]:
    """Split a rectangular QAM order into (I levels, Q levels)."""
    if order < 4 or order & (order - 1):
        raise ConfigError(f"QAM order must be a power of two >= 4, got {order}")
    bits = order.bit_length() - 1
    return 1 << ((bits + 1) // 2), 1 << (bits // 2)


def _gray_pam(levels: int) -> np.ndarray:
    """Amplitude for each Gray label; label 0 sits at the most positive level."""
    amp = np.empty(levels)
    for i in range(levels):
        amp[i ^ (i >> 1)] = levels - 1 - 2 * i
    return amp


def qam_alphabet(order: int) -> np.ndarray:
    """Unit-average-energy Gray QAM points indexed by their integer label."""
    ups, omg = qam_dims(order)
    q_bits = omg.bit_length() - 1
    labels = np.arange(order)
    i_amp = _gray_pam(ups)[labels >> q_bits]
    q_amp = _gray_pam(omg)[labels & (omg - 1)]
    scale = math.sqrt(3.0 / (ups ** 2 + omg ** 2 - 2))
    return scale * (i_amp + 1j * q_amp)


def bits_to_int(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - k)) & 1 for k in range(width)], dtype=np.uint8)


def qam_modulate(bits, order: int) -> complex:
    bits = np.asarray(bits)
    width = order.bit_length() - 1
    if bits.size != width:
        raise ValueError(f"{order}-QAM takes {width} bits, got {bits.size}")
    return complex(qam_alphabet(order)[bits_to_int(bits)])


# --- coefficient vector -------------------------------------------------------

def _min_pairwise_distance(points: np.ndarray) -> float:
    if points.size < 2:
        return math.inf
    d = np.abs(points[:, None] - points[None, :])
    d[np.diag_indices_from(d)] = np.inf
    return float(d.min())


def generate_coeff_vector(n_coeff: int, seed: int, qam_order: int = 4) -> np.ndarray:
    """Seeded complex Gaussian coefficients normalised to c^H c / J = 1.

    Redraws (with an incremented sub-seed) until every product c_j * x_l is
    distinct from every other by more than ``MIN_PRODUCT_DISTANCE``.
    """
    if n_coeff < 1:
        raise ConfigError("coefficient vector needs at least one entry")
    if n_coeff == 1:
        return np.ones(1, dtype=complex)
    alphabet = qam_alphabet(qam_order)
    for attempt in range(MAX_COEFF_RETRIES):
        rng = np.random.default_rng([seed, attempt])
        c = rng.standard_normal(n_coeff) + 1j * rng.standard_normal(n_coeff)
        c *= math.sqrt(n_coeff / np.vdot(c, c).real)
        if _min_pairwise_distance(np.outer(c, alphabet).ravel()) > MIN_PRODUCT_DISTANCE:
            return c
    raise ConfigError(f"no valid coefficient vector for J={n_coeff}, L={qam_order} "
                      f"after {MAX_COEFF_RETRIES} draws")


def coeffs_to_json(c: np.ndarray) -> str:
    return json.dumps([[float(v.real), float(v.imag)] for v in np.asarray(c)])


def coeffs_from_json(text: str) -> np.ndarray:
    pairs = json.loads(text)
    return np.array([complex(re, im) for re, im in pairs])


@dataclass(frozen=True)
class CcieConfig:
    coeffs: np.ndarray
    qam_order: int = 4
    seed: int | None = None
    alphabet: np.ndarray = field(init=False, repr=False, compare=False)
    products: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        object.__setattr__(self, "coeffs", c)
        if c.ndim != 1 or c.size < 1:
            raise ConfigError("coefficient vector must be a non-empty 1-D array")
        if abs(np.vdot(c, c).real / c.size - 1.0) > 1e-9:
            raise ConfigError("coefficient vector must satisfy c^H c / J = 1")
        alphabet = qam_alphabet(self.qam_order)
        products = np.outer(c[: self.n_used], alphabet).ravel()
        if _min_pairwise_distance(np.outer(c, alphabet).ravel()) <= MIN_PRODUCT_DISTANCE:
            raise ConfigError("coefficient/QAM products are not pairwise distinct")
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "products", products)

    @classmethod
    def generate(cls, n_coeff: int, qam_order: int = 4, seed: int = 0) -> "CcieConfig":
        return cls(generate_coeff_vector(n_coeff, seed, qam_order), qam_order, seed)

    @property
    def n_coeff(self) -> int:
        return self.coeffs.size

    @property
    def bits_index(self) -> int:
        return int(math.floor(math.log2(self.n_coeff)))

    @property
    def n_used(self) -> int:
        """Coefficients reachable with ``bits_index`` bits."""
        return 1 << self.bits_index

    @property
    def bits_symbol(self) -> int:
        return self.qam_order.bit_length() - 1

    @property
    def bits_per_antenna(self) -> int:
        return self.bits_index + self.bits_symbol

    def frame_bits(self, n_tx: int) -> int:
        return n_tx * self.bits_per_antenna


# --- framing ----------------------------------------------------------------

@dataclass(frozen=True)
class PduFrame:
    """One pulse worth of CCIE symbols, one entry per transmit antenna."""

    indices: np.ndarray
    labels: np.ndarray
    symbols: np.ndarray
    ccie_symbols: np.ndarray
    bits: np.ndarray

    @property
    def n_tx(self) -> int:
        return self.indices.size


def _split_bits(bits: np.ndarray, cfg: CcieConfig):
    """(..., N * bpa) bit array -> integer index and QAM label arrays (..., N)."""
    bi, bs = cfg.bits_index, cfg.bits_symbol
    blocks = bits.reshape(bits.shape[:-1] + (-1, bi + bs)).astype(np.int64)
    idx = blocks[..., :bi] @ (1 << np.arange(bi - 1, -1, -1))
    lab = blocks[..., bi:] @ (1 << np.arange(bs - 1, -1, -1))
    return idx, lab


def _join_bits(idx: np.ndarray, lab: np.ndarray, cfg: CcieConfig) -> np.ndarray:
    value = (idx.astype(np.int64) << cfg.bits_symbol) | lab.astype(np.int64)
    shifts = np.arange(cfg.bits_per_antenna - 1, -1, -1)
    bits = (value[..., None] >> shifts) & 1
    return bits.reshape(value.shape[:-1] + (-1,)).astype(np.uint8)


def encode_frame(bits, n_tx: int, cfg: CcieConfig) -> PduFrame:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape != (cfg.frame_bits(n_tx),):
        raise ValueError(f"frame for {n_tx} antennas needs {cfg.frame_bits(n_tx)} bits, "
                         f"got {bits.size}")
    idx, lab = _split_bits(bits, cfg)
    symbols = cfg.alphabet[lab]
    return PduFrame(idx, lab, symbols, cfg.coeffs[idx] * symbols, bits.copy())


def random_frame(n_tx: int, cfg: CcieConfig, rng: np.random.Generator) -> PduFrame:
    return encode_frame(rng.integers(0, 2, cfg.frame_bits(n_tx), dtype=np.uint8), n_tx, cfg)


class Detection(NamedTuple):
    index: int
    label: int
    degenerate: bool


def ml_detect(y_n, h_n, cfg: CcieConfig) -> Detection:
    """Joint ML estimate of (coefficient index, QAM label) for one antenna."""
    y_n = np.atleast_1d(np.asarray(y_n, dtype=complex))
    h_n = np.atleast_1d(np.asarray(h_n, dtype=complex))
    p = int(kernels.ml_detect(y_n[None, :], h_n[None, :], cfg.products)[0])
    return Detection(p // cfg.qam_order, p % cfg.qam_order, not np.any(h_n))


def detect_batch(y: np.ndarray, h: np.ndarray, cfg: CcieConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised detection. ``y`` and ``h`` are (..., U); returns (index, label)."""
    shape = y.shape[:-1]
    u = y.shape[-1]
    p = kernels.ml_detect(y.reshape(-1, u), h.reshape(-1, u), cfg.products).reshape(shape)
    return p // cfg.qam_order, p % cfg.qam_order


def decode_frame(received, channel, cfg: CcieConfig) -> np.ndarray:
    """Recover the frame bits.

    ``received`` is (N, U) with row n the stacked outputs of channel n;
    ``channel`` is the (U, N) matrix of h_{u,n}.
    """
    received = np.asarray(received, dtype=complex)
    channel = np.asarray(channel, dtype=complex)
    if received.ndim != 2 or channel.shape != received.shape[::-1]:
        raise ValueError(f"received {received.shape} and channel {channel.shape} do not match")
    idx, lab = detect_batch(received, channel.T, cfg)
    return _join_bits(idx[None, :], lab[None, :], cfg)[0]


def encode_batch(bits: np.ndarray, cfg: CcieConfig):
    """(B, N * bpa) bits -> (index, label, ccie symbol) arrays of shape (B, N)."""
    idx, lab = _split_bits(bits, cfg)
    return idx, lab, cfg.coeffs[idx] * cfg.alphabet[lab]


def join_bits(idx: np.ndarray, lab: np.ndarray, cfg: CcieConfig) -> np.ndarray:
    return _join_bits(idx, lab, cfg)
