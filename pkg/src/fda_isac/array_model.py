"""FDA-MIMO array geometry, steering vectors and frequency-offset design checks.

All functions take angles in radians. Range arguments may be scalars or 1-D
arrays; array input returns one steering vector per row.
"""
from __future__ import annotations

import dataclasses
import math
import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .constants import (
    DEFAULT_CARRIER_HZ,
    DEFAULT_DELTA_F_HZ,
    DEFAULT_PRI_S,
    DEFAULT_PULSE_WIDTH_S,
    DEFAULT_PULSES,
    SPEED_OF_LIGHT,
)

MAX_DECIMAL_DIGITS = 12

_MIXED = re.compile(r"^\s*([+-]?\d+)\s*\+\s*(\d+)\s*/\s*(\d+)\s*$")
_DECIMAL = re.compile(r"^\s*[+-]?\d+(\.\d*)?\s*$")
_RATIO = re.compile(r"^\s*([+-]?\d+)\s*/\s*(\d+)\s*$")


class ConfigError(ValueError):
    """Raised for array or scenario settings that violate a model invariant."""


def parse_offset(value: str | int | float | Fraction) -> Fraction:
    """Parse a frequency-offset multiplier into an exact rational.

    Accepts ``"3+17/100"``, ``"17/100"``, ``"5.2"``, ints, Fractions, and floats
    whose shortest decimal repr has at most 12 fractional digits.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ConfigError(f"offset must be numeric, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConfigError(f"offset {value!r} is not finite")
        value = repr(value)
    if not isinstance(value, str):
        raise ConfigError(f"cannot parse offset {value!r}")

    m = _MIXED.match(value)
    if m:
        whole, num, den = (int(g) for g in m.groups())
        if den == 0:
            raise ConfigError(f"zero denominator in offset {value!r}")
        return Fraction(whole) + Fraction(num, den)
    m = _RATIO.match(value)
    if m:
        num, den = (int(g) for g in m.groups())
        if den == 0:
            raise ConfigError(f"zero denominator in offset {value!r}")
        return Fraction(num, den)
    if _DECIMAL.match(value):
        digits = value.strip().partition(".")[2]
        if len(digits) > MAX_DECIMAL_DIGITS:
            raise ConfigError(
                f"offset {value!r} has more than {MAX_DECIMAL_DIGITS} decimals; "
                "write it as an exact fraction like '3+1/3'")
        return Fraction(value.strip())
    raise ConfigError(f"cannot parse offset {value!r}")


def format_offset(eps: Fraction) -> str:
    """Inverse of :func:`parse_offset` in the mixed ``"i+p/q"`` form."""
    whole = math.floor(eps)
    frac = eps - whole
    if frac == 0:
        return str(whole)
    return f"{whole}+{frac.numerator}/{frac.denominator}"


@dataclass(frozen=True)
class ArrayConfig:
    """Transmit/receive array of the FDA-MIMO base station.

    ``offsets`` are the per-antenna multipliers of ``delta_f_hz``; antenna ``n``
    radiates at ``carrier_hz + offsets[n] * delta_f_hz``.
    """

    n_tx: int = 6
    n_rx: int = 6
    carrier_hz: float = DEFAULT_CARRIER_HZ
    delta_f_hz: float = DEFAULT_DELTA_F_HZ
    d1_m: float | None = None
    d2_m: float | None = None
    offsets: tuple[Fraction, ...] | None = None
    pri_s: float = DEFAULT_PRI_S
    pulses_per_cpi: int = DEFAULT_PULSES
    pulse_width_s: float = DEFAULT_PULSE_WIDTH_S
    _eps: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        wavelength = SPEED_OF_LIGHT / self.carrier_hz if self.carrier_hz > 0 else 0.0
        if self.d1_m is None:
            object.__setattr__(self, "d1_m", wavelength)
        if self.d2_m is None:
            object.__setattr__(self, "d2_m", wavelength)
        if self.offsets is None:
            object.__setattr__(self, "offsets", tuple(Fraction(n) for n in range(self.n_tx)))
        else:
            object.__setattr__(self, "offsets", tuple(parse_offset(e) for e in self.offsets))
        self._validate()
        object.__setattr__(self, "_eps", np.array([float(e) for e in self.offsets]))

    def _validate(self):
        if self.n_tx < 1 or self.n_rx < 1:
            raise ConfigError("need at least one transmit and one receive antenna")
        if self.pulses_per_cpi < 2:
            raise ConfigError("a CPI needs at least two pulses")
        if self.carrier_hz <= 0 or self.delta_f_hz <= 0:
            raise ConfigError("carrier and offset increment must be positive")
        if not 0 < self.pulse_width_s <= self.pri_s:
            raise ConfigError("pulse width must lie in (0, PRI]")
        if self.d1_m <= 0 or self.d2_m <= 0:
            raise ConfigError("element spacings must be positive")
        if len(self.offsets) != self.n_tx:
            raise ConfigError(f"expected {self.n_tx} offsets, got {len(self.offsets)}")
        if self.offsets[0] != 0:
            raise ConfigError("the first transmit antenna must sit at the carrier (offset 0)")
        for a, b in zip(self.offsets, self.offsets[1:]):
            if b - a < 1:
                raise ConfigError(
                    f"offsets {format_offset(a)} -> {format_offset(b)} are closer than one "
                    "increment; waveforms would not stay orthogonal")

    @property
    def eps(self) -> np.ndarray:
        """Offset multipliers as floats."""
        return self._eps

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def n_virtual(self) -> int:
        return self.n_tx * self.n_rx

    @property
    def range_bin_m(self) -> float:
        """Coarse range-bin width c / (2 delta_f)."""
        return SPEED_OF_LIGHT / (2.0 * self.delta_f_hz)

    @property
    def max_unambiguous_velocity(self) -> float:
        return SPEED_OF_LIGHT / (4.0 * self.carrier_hz * self.pri_s)

    def with_offsets(self, offsets: Iterable) -> "ArrayConfig":
        offsets = tuple(offsets)
        return dataclasses.replace(self, offsets=offsets, n_tx=len(offsets))


def replace(cfg: ArrayConfig, **changes) -> ArrayConfig:
    """Copy of ``cfg`` with some fields changed (re-validated)."""
    return dataclasses.replace(cfg, **changes)


# --- steering vectors -------------------------------------------------------

def _range_cycles(r, cfg: ArrayConfig) -> np.ndarray:
    # phase in cycles, reduced mod 1 to keep long ranges accurate
    cyc = np.multiply.outer(np.asarray(r, dtype=float) / cfg.range_bin_m, cfg.eps)
    return cyc - np.floor(cyc)


def tx_range_steering(r, cfg: ArrayConfig) -> np.ndarray:
    """Transmit range steering vector, entries exp(-j 2 pi eps_n delta_f 2R / c)."""
    return np.exp(-2j * np.pi * _range_cycles(r, cfg))


def _ula(theta, n: int, spacing: float, cfg: ArrayConfig) -> np.ndarray:
    s = np.sin(np.asarray(theta, dtype=float)) * (spacing / cfg.wavelength_m)
    return np.exp(2j * np.pi * np.multiply.outer(s, np.arange(n)))


def tx_angle_steering(theta, cfg: ArrayConfig) -> np.ndarray:
    return _ula(theta, cfg.n_tx, cfg.d1_m, cfg)


def rx_angle_steering(theta, cfg: ArrayConfig) -> np.ndarray:
    return _ula(theta, cfg.n_rx, cfg.d2_m, cfg)


def joint_steering(r, theta, cfg: ArrayConfig) -> np.ndarray:
    """Transmit-receive steering a_R(theta) kron [a_T(R) * a_T(theta)].

    ``r`` and ``theta`` broadcast against each other; the last axis has length
    ``n_rx * n_tx`` with the transmit index running fastest.
    """
    r, theta = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(theta, dtype=float))
    tx = tx_range_steering(r, cfg) * tx_angle_steering(theta, cfg)
    rx = rx_angle_steering(theta, cfg)
    out = rx[..., :, None] * tx[..., None, :]
    return out.reshape(r.shape + (cfg.n_virtual,))


def steering_matrix(ranges: Sequence[float], thetas: Sequence[float], cfg: ArrayConfig) -> np.ndarray:
    """Manifold matrix with one joint steering vector per column (MN x G)."""
    return joint_steering(np.asarray(ranges), np.asarray(thetas), cfg).T


# --- frequency offset design ----------------------------------------------

def offset_denominators(cfg: ArrayConfig) -> list[int]:
    """Denominator of each offset's fractional part (1 for integer offsets)."""
    return [(e - math.floor(e)).denominator for e in cfg.offsets]


def steering_range_period(cfg: ArrayConfig) -> float:
    """Design range period (c / 2 delta_f) * lcm of the fractional-part denominators.

    a_T(R + r) == a_T(R) holds for every R, but this is only the minimal period
    when the offsets have no common rational factor above one. For offsets
    {0, 1.5} it gives 150 m while a_T already repeats every 50 m; see
    :func:`minimal_range_period`.
    """
    if all(e == 0 for e in cfg.offsets):
        warnings.warn("all transmit offsets are zero; the range steering vector is constant",
                      RuntimeWarning, stacklevel=2)
        return math.inf
    lcm = reduce(math.lcm, offset_denominators(cfg), 1)
    return cfg.range_bin_m * lcm


def minimal_range_period(cfg: ArrayConfig) -> float:
    """Exact smallest period: (c / 2 delta_f) / gcd of the offsets as rationals."""
    nonzero = [e for e in cfg.offsets if e != 0]
    if not nonzero:
        return math.inf
    num = reduce(math.gcd, (e.numerator for e in nonzero))
    den = reduce(math.lcm, (e.denominator for e in nonzero))
    return cfg.range_bin_m * den / num


@dataclass(frozen=True)
class FodcReport:
    ok: bool
    period_m: float
    max_range_m: float
    denominators: tuple[int, ...]
    default_bound_m: float
    minimal_period_m: float = math.nan

    def summary(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        text = (f"range period {self.period_m:g} m (denominators {list(self.denominators)}); "
                f"max range {self.max_range_m:g} m: {verdict} "
                f"[PRI bound cT/2 = {self.default_bound_m:g} m]")
        if self.minimal_period_m < self.period_m:
            text += f"; warning: a_T already repeats every {self.minimal_period_m:g} m"
        return text


def validate_fodc(cfg: ArrayConfig, max_range_m: float) -> FodcReport:
    """Check that the steering range period covers ``max_range_m``."""
    if max_range_m <= 0:
        raise ConfigError("max_range_m must be positive")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        period = steering_range_period(cfg)
    return FodcReport(
        ok=period >= max_range_m,
        period_m=period,
        max_range_m=float(max_range_m),
        denominators=tuple(offset_denominators(cfg)),
        default_bound_m=SPEED_OF_LIGHT * cfg.pri_s / 2.0,
        minimal_period_m=minimal_range_period(cfg),
    )


def scan_range_period(cfg: ArrayConfig, step_m: float = 0.01, max_m: float = 20000.0,
                      tol: float = 1e-6, ref_range_m: float = 0.0) -> float:
    """Brute-force period search: first grid shift r with a_T(R0 + r) ~= a_T(R0).

    Independent of the rational bookkeeping in :func:`steering_range_period`;
    returns ``inf`` if nothing matches up to ``max_m``.
    """
    ref = tx_range_steering(ref_range_m, cfg)
    chunk = 200_000
    n_total = int(round(max_m / step_m))
    for start in range(1, n_total + 1, chunk):
        k = np.arange(start, min(start + chunk, n_total + 1))
        shifts = k * step_m
        a = tx_range_steering(ref_range_m + shifts, cfg)
        err = np.max(np.abs(a - ref), axis=-1)
        hit = np.flatnonzero(err < tol)
        if hit.size:
            return float(shifts[hit[0]])
    return math.inf
