"""Multi-target range/angle/velocity estimation from a compensated CPI.

Two spatial-spectrum estimators share the same Capon cost
``Omega(R, theta) = a_TR^H Q^-1 a_TR``:

* SSMTE searches (R, theta) jointly inside each occupied range bin.
* LCSSE first searches theta alone on the Schur-complement spectrum (the cost
  minimised over an unconstrained transmit-range vector), then searches range
  along each angle peak.

Both factor ``Omega(R, theta) = a_T(R)^H Z(theta) a_T(R)`` so the grid cost is
dominated by N x N quadratic forms (see :mod:`fda_isac.kernels`). Grid peaks
are optionally polished by a local continuous search of the same cost.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from . import kernels
from .array_model import (
    ArrayConfig,
    joint_steering,
    rx_angle_steering,
    tx_angle_steering,
    tx_range_steering,
)
from .constants import SPEED_OF_LIGHT

COVARIANCE_LOADING = 1e-10
CONDITION_LIMIT = 1e12


# --- covariance ---------------------------------------------------------------

@dataclass(frozen=True)
class CovarianceEstimate:
    q: np.ndarray
    loading: float = 0.0

    @property
    def inverse(self) -> np.ndarray:
        qi = np.linalg.inv(self.q)
        return 0.5 * (qi + qi.conj().T)


def sample_covariance(data: np.ndarray) -> CovarianceEstimate:
    """(1/K) Y Y^H with relative diagonal loading when badly conditioned."""
    data = np.asarray(data)
    if data.ndim == 1:
        data = data[:, None]
    q = data @ data.conj().T / data.shape[1]
    q = 0.5 * (q + q.conj().T)
    loading = 0.0
    if np.linalg.cond(q) > CONDITION_LIMIT:
        loading = COVARIANCE_LOADING * np.trace(q).real / q.shape[0]
        if loading == 0.0:
            loading = COVARIANCE_LOADING
        q = q + loading * np.eye(q.shape[0])
    return CovarianceEstimate(q, loading)


# --- coarse range bins -------------------------------------------------------

@dataclass(frozen=True)
class RangeBin:
    index: int
    center_m: float
    width_m: float
    count: int = 1

    @property
    def window(self) -> tuple[float, float]:
        return self.center_m - self.width_m / 2, self.center_m + self.width_m / 2


def coarse_range_bins(ranges_m: Iterable[float], cfg: ArrayConfig) -> list[RangeBin]:
    """Idealised pulse-compression detector: floor-quantise true ranges.

    Targets sharing a bin are merged; ``count`` records how many there are.
    """
    width = cfg.range_bin_m
    counts: dict[int, int] = {}
    for r in ranges_m:
        p = int(math.floor(r / width))
        counts[p] = counts.get(p, 0) + 1
    return [RangeBin(p, p * width + width / 2, width, n) for p, n in sorted(counts.items())]


# --- spectra ------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Search grid: ``s_theta`` angle points over the sector, ``s_r`` per bin.

    The sector defaults to the full [-90, 90] deg; with element spacing above
    half a wavelength it can be narrowed to an interval free of grating lobes.
    """

    s_theta: int = 1000
    s_r: int = 1000
    refine: bool = True
    theta_min: float = -90.0
    theta_max: float = 90.0

    def __post_init__(self):
        if self.s_theta < 3 or self.s_r < 3:
            raise ValueError("grids need at least three points per axis")
        if not -90.0 <= self.theta_min < self.theta_max <= 90.0:
            raise ValueError("angle sector must satisfy -90 <= min < max <= 90")

    def theta_axis(self) -> np.ndarray:
        return np.linspace(self.theta_min, self.theta_max, self.s_theta)

    def range_axis(self, window: tuple[float, float]) -> np.ndarray:
        return np.linspace(window[0], window[1], self.s_r)

    @property
    def theta_step(self) -> float:
        return (self.theta_max - self.theta_min) / (self.s_theta - 1)

    def range_step(self, width: float) -> float:
        return width / (self.s_r - 1)


@dataclass
class SpectrumGrid:
    theta_axis: np.ndarray    # deg
    range_axis: np.ndarray    # m
    values: np.ndarray        # (len(range_axis), len(theta_axis))


def z_matrices(qinv: np.ndarray, theta_deg: np.ndarray, cfg: ArrayConfig) -> np.ndarray:
    th = np.radians(np.asarray(theta_deg, dtype=float))
    return kernels.z_blocks(qinv, rx_angle_steering(th, cfg), tx_angle_steering(th, cfg))


def capon_cost(qinv: np.ndarray, r: float, theta_deg: float, cfg: ArrayConfig) -> float:
    """Omega(R, theta) evaluated directly on the MN-length steering vector."""
    a = joint_steering(r, math.radians(theta_deg), cfg)
    return float(np.real(np.vdot(a, qinv @ a)))


def ssmte_spectrum(qinv: np.ndarray, window: tuple[float, float], cfg: ArrayConfig,
                   grid: GridSpec, z: np.ndarray | None = None) -> SpectrumGrid:
    """Joint range-angle Capon spectrum 1/|Omega| over one range window."""
    th = grid.theta_axis()
    rr = grid.range_axis(window)
    if z is None:
        z = z_matrices(qinv, th, cfg)
    values = 1.0 / kernels.capon_grid(z, tx_range_steering(rr, cfg))
    return SpectrumGrid(th, rr, values)


def lcsse_angle_spectrum(qinv: np.ndarray, cfg: ArrayConfig, theta_deg: np.ndarray,
                         z: np.ndarray | None = None) -> np.ndarray:
    """Angle-only spectrum 1/|z1 - z2 z4^-1 z2^H| from the partitioned Z(theta)."""
    if cfg.n_tx < 2:
        raise ValueError("the reduced angle search needs at least two transmit antennas")
    if z is None:
        z = z_matrices(qinv, theta_deg, cfg)
    return 1.0 / kernels.schur_spectrum(z)


def range_spectrum(qinv: np.ndarray, theta_deg: float, ranges: np.ndarray,
                   cfg: ArrayConfig) -> np.ndarray:
    z = z_matrices(qinv, np.array([theta_deg]), cfg)
    return 1.0 / kernels.capon_grid(z, tx_range_steering(ranges, cfg))[:, 0]


# --- peak picking ---------------------------------------------------------------

@dataclass
class Peaks:
    """Picked peaks as (range_m, angle_deg, value) tuples, best first."""

    items: list = field(default_factory=list)
    shortfall: bool = False


def _strict_maxima_2d(v: np.ndarray) -> np.ndarray:
    p = np.pad(v, 1, constant_values=-np.inf)
    centre = p[1:-1, 1:-1]
    mask = np.ones_like(centre, dtype=bool)
    rows, cols = v.shape
    for di, dj in itertools.product((-1, 0, 1), repeat=2):
        if di == 0 and dj == 0:
            continue
        mask &= centre > p[1 + di:1 + di + rows, 1 + dj:1 + dj + cols]
    return mask


def _strict_maxima_1d(v: np.ndarray) -> np.ndarray:
    p = np.pad(v, 1, constant_values=-np.inf)
    return (p[1:-1] > p[:-2]) & (p[1:-1] > p[2:])


def pick_peaks(grid: SpectrumGrid, count: int) -> Peaks:
    """Top ``count`` strict local maxima (8-neighbourhood) of a spectrum grid.

    Ordered by value, ties by smaller range then smaller angle.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    ri, ti = np.nonzero(_strict_maxima_2d(grid.values))
    cand = [(grid.range_axis[i], grid.theta_axis[j], grid.values[i, j]) for i, j in zip(ri, ti)]
    cand.sort(key=lambda c: (-c[2], c[0], c[1]))
    return Peaks(cand[:count], len(cand) < count)


def pick_peaks_1d(axis: np.ndarray, values: np.ndarray, count: int) -> list[tuple[float, float]]:
    idx = np.flatnonzero(_strict_maxima_1d(values))
    cand = sorted(((axis[i], values[i]) for i in idx), key=lambda c: (-c[1], c[0]))
    return cand[:count]


# --- continuous refinement ------------------------------------------------------

def _refine_joint(qinv, r0, th0, window, sector, cfg, dr, dth):
    lo, hi = window
    tlo, thi = sector

    def cost(p):
        r = min(max(p[0], lo), hi)
        th = min(max(p[1], tlo), thi)
        return capon_cost(qinv, r, th, cfg)

    simplex = np.array([[r0, th0], [r0 + dr, th0], [r0, th0 + dth]])
    f0 = cost([r0, th0])
    res = optimize.minimize(cost, [r0, th0], method="Nelder-Mead",
                            options=dict(initial_simplex=simplex, xatol=1e-8,
                                         fatol=1e-13 * abs(f0), maxiter=2000))
    r, th = float(np.clip(res.x[0], lo, hi)), float(np.clip(res.x[1], tlo, thi))
    if cost([r, th]) > f0:
        return r0, th0
    return r, th


def _refine_scalar(fun, x0, step, lo, hi):
    a, b = max(x0 - step, lo), min(x0 + step, hi)
    if b <= a:
        return x0
    res = optimize.minimize_scalar(fun, bounds=(a, b), method="bounded",
                                   options=dict(xatol=1e-10))
    return float(res.x) if res.fun <= fun(x0) else x0


# --- estimators ----------------------------------------------------------------

@dataclass(frozen=True)
class EstimatedTarget:
    range_m: float
    angle_deg: float
    velocity_mps: float = float("nan")
    bin_index: int = -1


@dataclass
class EstimateResult:
    targets: list
    shortfall: bool = False
    rank_deficient: bool = False


def ssmte_estimate(qinv: np.ndarray, bins: Sequence[RangeBin], cfg: ArrayConfig,
                   grid: GridSpec = GridSpec()) -> EstimateResult:
    """Joint 2-D search in each occupied bin; ``bin.count`` peaks per bin."""
    z = z_matrices(qinv, grid.theta_axis(), cfg)
    out, short = [], False
    for b in bins:
        spec = ssmte_spectrum(qinv, b.window, cfg, grid, z=z)
        peaks = pick_peaks(spec, b.count)
        short |= peaks.shortfall
        for r, th, _ in peaks.items:
            if grid.refine:
                r, th = _refine_joint(qinv, r, th, b.window,
                                      (grid.theta_min, grid.theta_max), cfg,
                                      grid.range_step(b.width_m), grid.theta_step)
            out.append(EstimatedTarget(float(r), float(th), bin_index=b.index))
    return EstimateResult(out, short)


def lcsse_estimate(qinv: np.ndarray, bins: Sequence[RangeBin], cfg: ArrayConfig,
                   grid: GridSpec = GridSpec()) -> EstimateResult:
    """Angle search on the reduced spectrum, then range search along each angle.

    Every angle peak proposes the local range maxima inside each occupied bin;
    each bin keeps its ``count`` strongest proposals by joint spectrum value.
    """
    n_targets = sum(b.count for b in bins)
    th_axis = grid.theta_axis()
    z = z_matrices(qinv, th_axis, cfg)
    ang = lcsse_angle_spectrum(qinv, cfg, th_axis, z=z)
    angle_peaks = pick_peaks_1d(th_axis, ang, n_targets)
    short = len(angle_peaks) < n_targets

    def schur_cost(t):
        zt = z_matrices(qinv, np.array([t]), cfg)
        return float(kernels.schur_spectrum(zt)[0])

    thetas = []
    for th, _ in angle_peaks:
        if grid.refine:
            th = _refine_scalar(schur_cost, th, grid.theta_step, grid.theta_min, grid.theta_max)
        thetas.append(float(th))

    out = []
    for b in bins:
        rr = grid.range_axis(b.window)
        proposals = []
        for th in thetas:
            vals = range_spectrum(qinv, th, rr, cfg)
            proposals += [(v, r, th) for r, v in pick_peaks_1d(rr, vals, b.count)]
        proposals.sort(key=lambda p: (-p[0], p[1], p[2]))
        if len(proposals) < b.count:
            short = True
        for _, r, th in proposals[: b.count]:
            if grid.refine:
                lo, hi = b.window
                r = _refine_scalar(lambda x: capon_cost(qinv, x, th, cfg), r,
                                   grid.range_step(b.width_m), lo, hi)
            out.append(EstimatedTarget(float(r), th, bin_index=b.index))
    return EstimateResult(out, short)


def estimate_velocities(data: np.ndarray, estimates: Sequence[EstimatedTarget],
                        cfg: ArrayConfig, conjugate: bool = False) -> tuple[np.ndarray, bool]:
    """LS Doppler-matrix fit followed by the rotation between shifted blocks.

    ``conjugate=False`` uses the plain transpose (D_F D_F^T)^-1 D_F D_B^T;
    ``conjugate=True`` uses the least-squares form with D_F^*.
    Returns (velocities, rank_deficient).
    """
    if not estimates:
        return np.zeros(0), False
    a_hat = joint_steering(np.array([e.range_m for e in estimates]),
                           np.radians([e.angle_deg for e in estimates]), cfg).T
    gram = a_hat.conj().T @ a_hat
    deficient = bool(np.linalg.cond(gram) > 1e10)
    if deficient:
        gram = gram + COVARIANCE_LOADING * np.trace(gram).real * np.eye(gram.shape[0])
    d_hat = np.linalg.solve(gram, a_hat.conj().T @ data)
    d_f, d_b = d_hat[:, :-1], d_hat[:, 1:]
    left = d_f.conj() if conjugate else d_f
    lhs = left @ d_f.T
    rhs = left @ d_b.T
    try:
        e = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        deficient = True
        e = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    kappa = np.diag(e)
    v = SPEED_OF_LIGHT * np.angle(kappa) / (4.0 * cfg.carrier_hz * math.pi * cfg.pri_s)
    return v, deficient


def estimate_targets(data: np.ndarray, bins: Sequence[RangeBin], cfg: ArrayConfig,
                     method: str = "lcsse", grid: GridSpec = GridSpec(),
                     conjugate: bool = False) -> EstimateResult:
    """Covariance, spatial search and velocity stage for one CPI."""
    cov = sample_covariance(data)
    qinv = cov.inverse
    if method == "ssmte":
        res = ssmte_estimate(qinv, bins, cfg, grid)
    elif method == "lcsse":
        res = lcsse_estimate(qinv, bins, cfg, grid)
    else:
        raise ValueError(f"unknown estimator {method!r}")
    v, deficient = estimate_velocities(data, res.targets, cfg, conjugate)
    res.targets = [EstimatedTarget(t.range_m, t.angle_deg, float(vi), t.bin_index)
                   for t, vi in zip(res.targets, v)]
    res.rank_deficient = deficient
    return res


# --- complexity -------------------------------------------------------------------

def complexity_count(method: str, n: int, m: int, k: int, g: int, g_bins: int,
                     s_r: int, s_theta: int) -> int:
    """Multiplication counts of the two estimators (exact integer arithmetic)."""
    nm = n * m
    common = k * nm ** 2 + nm ** 3 + 3 * g ** 3 + 2 * g ** 2 * (k + nm - 1) + g * nm * k + 4 * g
    if method == "ssmte":
        return common + s_r * s_theta * g_bins * (nm ** 2 + nm + 1)
    if method == "lcsse":
        return (common + s_theta * ((n - 1) ** 3 + (n - 1) ** 2 + n)
                + s_r * g * g_bins * (nm ** 2 + nm + 1))
    raise ValueError(f"unknown estimator {method!r}")


# --- export ------------------------------------------------------------------------

def write_spectrum_csv(grid: SpectrumGrid, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["theta_deg", "range_m", "value"])
    for i, r in enumerate(grid.range_axis):
        for j, th in enumerate(grid.theta_axis):
            w.writerow([f"{th:.10g}", f"{r:.10g}", f"{grid.values[i, j]:.10g}"])
