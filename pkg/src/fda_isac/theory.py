"""Closed-form analytics: single-target CRB, CCIE BER upper bound, rates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .array_model import ArrayConfig, joint_steering
from .ccie import CcieConfig, qam_dims
from .constants import SPEED_OF_LIGHT
from .scene import Target

PARAMS = ("re_xi", "im_xi", "range", "theta", "doppler")


# --- Fisher information --------------------------------------------------------

def derivative_generators(target: Target, cfg: ArrayConfig, n_pulses: int) -> dict:
    """Diagonals of the generators that differentiate the steering factors.

    Returned as vectors over the MN virtual channels (``range``, ``theta``)
    and over the K pulses (``doppler``). The range generator is built from the
    actual offset multipliers, so it reduces to the 0..N-1 ramp for linear
    offsets.
    """
    th = target.angle_rad
    m_idx = np.repeat(np.arange(cfg.n_rx), cfg.n_tx)
    n_idx = np.tile(np.arange(cfg.n_tx), cfg.n_rx)
    eps = np.tile(cfg.eps, cfg.n_rx)
    k_cos = 2.0 * math.pi * cfg.carrier_hz * math.cos(th) / SPEED_OF_LIGHT
    return {
        "range": -1j * 4.0 * math.pi * cfg.delta_f_hz / SPEED_OF_LIGHT * eps,
        "theta": 1j * k_cos * (cfg.d2_m * m_idx + cfg.d1_m * n_idx),
        "doppler": 1j * 2.0 * math.pi * cfg.pri_s * np.arange(n_pulses),
    }


def _factors(target: Target, cfg: ArrayConfig, n_pulses: int):
    """Each derivative of Pi = xi a psi^T written as coef * (u ⊙ a)(v ⊙ psi)^T."""
    xi = target.reflection
    gen = derivative_generators(target, cfg, n_pulses)
    one_s = np.ones(cfg.n_virtual)
    one_k = np.ones(n_pulses)
    return [
        (1.0 + 0j, one_s, one_k),
        (1j, one_s, one_k),
        (xi, gen["range"], one_k),
        (xi, gen["theta"], one_k),
        (xi, one_s, gen["doppler"]),
    ]


def _w_matrix(target: Target, cfg: ArrayConfig, n_pulses: int):
    a = joint_steering(target.range_m, target.angle_rad, cfg)
    f = target.doppler_hz(cfg) * cfg.pri_s * np.arange(n_pulses)
    psi = np.exp(2j * np.pi * (f - np.floor(f)))
    return a, psi


def fisher_trace(target: Target, cfg: ArrayConfig, noise_power: float,
                 n_pulses: int | None = None) -> np.ndarray:
    """F_xy = 2 Re Tr[dPi_x^H Lambda^-1 dPi_y] with explicit MN x K derivative matrices."""
    k = cfg.pulses_per_cpi if n_pulses is None else n_pulses
    a, psi = _w_matrix(target, cfg, k)
    mats = [coef * np.outer(u * a, v * psi) for coef, u, v in _factors(target, cfg, k)]
    f = np.empty((5, 5))
    for x in range(5):
        for y in range(5):
            f[x, y] = 2.0 * np.real(np.vdot(mats[x], mats[y])) / noise_power
    return f


def fisher_block(target: Target, cfg: ArrayConfig, noise_power: float,
                 n_pulses: int | None = None) -> np.ndarray:
    """Same matrix assembled entry by entry from the whitened factors.

    Uses Tr{(u1 v1^T)^H (u2 v2^T)} = (u1^H u2)(v1^H v2) so no MN x K matrix is
    formed; |a| = |psi| = 1 reduces each trace to sums of generator products.
    """
    k = cfg.pulses_per_cpi if n_pulses is None else n_pulses
    xi = target.reflection
    gen = derivative_generators(target, cfg, k)
    g_s = {"1": np.ones(cfg.n_virtual), "R": gen["range"], "T": gen["theta"]}
    g_k = {"1": np.ones(k), "F": gen["doppler"]}
    zeta = {"W": ("1", "1"), "R": ("R", "1"), "T": ("T", "1"), "F": ("1", "F")}

    def tr(p, q):
        (sp, kp), (sq, kq) = zeta[p], zeta[q]
        return np.vdot(g_s[sp], g_s[sq]) * np.vdot(g_k[kp], g_k[kq]) / noise_power

    xc = np.conj(xi)
    x2 = abs(xi) ** 2
    d = ("R", "T", "F")
    blk = np.zeros((5, 5), dtype=complex)
    blk[0, 0] = blk[1, 1] = tr("W", "W")
    for i, p in enumerate(d, start=2):
        blk[0, i] = xi * tr("W", p)
        blk[1, i] = -1j * xi * tr("W", p)
        blk[i, 0] = xc * tr(p, "W")
        blk[i, 1] = 1j * xc * tr(p, "W")
        for j, q in enumerate(d, start=2):
            blk[i, j] = x2 * tr(p, q)
    return 2.0 * np.real(blk)


def fisher_matrix(target: Target, cfg: ArrayConfig, noise_power: float,
                  n_pulses: int | None = None, path: str = "trace") -> np.ndarray:
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    if path == "trace":
        return fisher_trace(target, cfg, noise_power, n_pulses)
    if path == "block":
        return fisher_block(target, cfg, noise_power, n_pulses)
    raise ValueError(f"unknown Fisher path {path!r}")


@dataclass(frozen=True)
class CrbReport:
    crb_range_m2: float
    crb_angle_rad2: float
    crb_doppler_hz2: float
    crb_velocity_mps2: float

    @property
    def crb_angle_deg2(self) -> float:
        return self.crb_angle_rad2 * (180.0 / math.pi) ** 2


def crb_from_fisher(f: np.ndarray, carrier_hz: float) -> CrbReport:
    """Schur complement of the half-scaled Fisher matrix and cofactor ratios."""
    g = 0.5 * f
    g11, g12, g21, g22 = g[:2, :2], g[:2, 2:], g[2:, :2], g[2:, 2:]
    if abs(np.linalg.det(g11)) == 0.0:
        raise ValueError("reflection coefficient is zero; parameters are unidentifiable")
    d = g22 - g21 @ np.linalg.solve(g11, g12)
    det_d = np.linalg.det(d)
    if not det_d > 0:
        raise ValueError("Fisher information is singular; configuration is unidentifiable")

    def minor(i, j):
        return np.linalg.det(d[np.ix_([i, j], [i, j])])

    crb_r = minor(1, 2) / (2.0 * det_d)
    crb_t = minor(0, 2) / (2.0 * det_d)
    crb_f = minor(0, 1) / (2.0 * det_d)
    scale_v = (SPEED_OF_LIGHT / (2.0 * carrier_hz)) ** 2
    return CrbReport(float(crb_r), float(crb_t), float(crb_f), float(crb_f * scale_v))


def crb(target: Target, cfg: ArrayConfig, noise_power: float,
        n_pulses: int | None = None) -> CrbReport:
    return crb_from_fisher(fisher_matrix(target, cfg, noise_power, n_pulses), cfg.carrier_hz)


# --- BER bound -------------------------------------------------------------------

def pep_scale(c_j: complex, x_l: complex, c_jp: complex, x_lp: complex,
              channel_power: float, same_index: bool) -> float:
    """Per-branch variance of the decision statistic for one hypothesis pair."""
    if same_index:
        return abs(x_lp - x_l) ** 2 * abs(c_j) ** 2 * channel_power / 2.0
    return abs(c_jp * x_lp - c_j * x_l) ** 2 * channel_power / 2.0


def rayleigh_p(alpha):
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(invalid="ignore"):
        p = 0.5 * (1.0 - np.sqrt(alpha / (1.0 + alpha)))
    return np.where(np.isinf(alpha), 0.0, p)


def mrc_average(alpha, n_branches: int):
    """P^U sum_u C(U-1+u, u)(1-P)^u with binomials from log-gamma."""
    if n_branches < 1:
        raise ValueError("need at least one receive branch")
    p = rayleigh_p(alpha)
    u = np.arange(n_branches)
    log_binom = gammaln(n_branches + u) - gammaln(u + 1) - gammaln(n_branches)
    terms = np.exp(log_binom) * (1.0 - p)[..., None] ** u
    return p ** n_branches * terms.sum(axis=-1)


def pep(sigma_kappa2, noise_power: float, n_branches: int):
    """Average pairwise error probability over i.i.d. Rayleigh branches."""
    if noise_power == 0:
        alpha = np.where(np.asarray(sigma_kappa2) > 0, np.inf, 0.0)
    else:
        alpha = np.asarray(sigma_kappa2, dtype=float) / (2.0 * noise_power)
    return mrc_average(alpha, n_branches)


def p_im_raw(cfg: CcieConfig, n_branches: int, channel_power: float,
             noise_power: float) -> float:
    """Union bound on the coefficient-index error probability (unclipped)."""
    j_used = cfg.n_used
    if j_used < 2:
        return 0.0
    c = cfg.coeffs[:j_used]
    x = cfg.alphabet
    pts = np.outer(c, x)                                           # (J, L)
    diff = pts[None, None, :, :] - pts[:, :, None, None]           # [j, l, j', l']
    sk2 = np.abs(diff) ** 2 * channel_power / 2.0
    j = np.arange(j_used)
    mask = np.broadcast_to((j[:, None] != j[None, :])[:, None, :, None], sk2.shape)
    total = float(pep(sk2[mask], noise_power, n_branches).sum())
    return total / (j_used * cfg.qam_order)


def p_im_bound(cfg: CcieConfig, n_branches: int, channel_power: float,
               noise_power: float) -> float:
    return min(max(p_im_raw(cfg, n_branches, channel_power, noise_power), 0.0), 1.0)


def _pam_bit_weights(levels: int, q: int):
    """(i, weight) pairs of the Gray PAM per-bit error series for bit ``q``."""
    top = int((1.0 - 2.0 ** -q) * levels)
    out = []
    for i in range(top):
        sign = (-1) ** ((i * 2 ** (q - 1)) // levels)
        w = 2 ** (q - 1) - math.floor(i * 2 ** (q - 1) / levels + 0.5)
        out.append((i, sign * w))
    return out


def _pam_ber(levels: int, eps: float, snr_jl: np.ndarray, n_branches: int) -> np.ndarray:
    """Sum over bits of the fading-averaged PAM bit errors for each |c_j x_l|^2 SNR."""
    total = np.zeros_like(snr_jl)
    for q in range(1, levels.bit_length()):
        acc = np.zeros_like(snr_jl)
        for i, w in _pam_bit_weights(levels, q):
            acc += w * mrc_average(((2 * i + 1) * eps) ** 2 * snr_jl, n_branches)
        total += 2.0 / levels * acc
    return total


def p_qam_raw(cfg: CcieConfig, n_branches: int, channel_power: float,
              noise_power: float) -> float:
    ups, omg = qam_dims(cfg.qam_order)
    eps = math.sqrt(3.0 / (ups ** 2 + omg ** 2 - 2))
    pts = np.outer(cfg.coeffs[: cfg.n_used], cfg.alphabet).ravel()
    if noise_power == 0:
        snr = np.full(pts.shape, np.inf)
    else:
        snr = np.abs(pts) ** 2 * channel_power / noise_power
    with np.errstate(invalid="ignore"):
        p_jl = (_pam_ber(ups, eps, snr, n_branches) + _pam_ber(omg, eps, snr, n_branches))
    p_jl = p_jl / math.log2(cfg.qam_order)
    return float(p_jl.mean())


def p_qam_bound(cfg: CcieConfig, n_branches: int, channel_power: float,
                noise_power: float) -> float:
    return min(max(p_qam_raw(cfg, n_branches, channel_power, noise_power), 0.0), 1.0)


@dataclass(frozen=True)
class BerBound:
    p_im: float
    p_index: float
    p_qam: float
    p_const: float
    p_total: float
    p_const_alt: float
    p_total_alt: float
    p_total_raw: float


def ccie_ber_bound(cfg: CcieConfig, n_tx: int, n_branches: int, channel_power: float,
                   noise_power: float) -> BerBound:
    """Bit error bound. ``p_total`` weighs the wrong-index constellation term by
    (J-1)/J; the ``_alt`` fields use 1/2 instead. All antennas are statistically
    identical, so ``n_tx`` only fixes the frame layout."""
    if n_tx < 1:
        raise ValueError("need at least one transmit antenna")
    mu_i, mu_c = cfg.bits_index, cfg.bits_symbol
    j_used = cfg.n_used
    pim_raw = p_im_raw(cfg, n_branches, channel_power, noise_power)
    pqam_raw = p_qam_raw(cfg, n_branches, channel_power, noise_power)
    pim = min(max(pim_raw, 0.0), 1.0)
    pqam = min(max(pqam_raw, 0.0), 1.0)

    def index_bits(p):
        return 0.0 if mu_i == 0 else 2 ** mu_i * p / (2.0 * (2 ** mu_i - 1))

    def total(pi, pc):
        return (pi * mu_i + pc * mu_c) / (mu_i + mu_c)

    p_index = min(index_bits(pim), 1.0)
    p_const = (j_used - 1) / j_used * pim + (1.0 - pim) * pqam
    p_const_alt = 0.5 * pim + (1.0 - pim) * pqam
    raw = total(index_bits(pim_raw),
                (j_used - 1) / j_used * pim_raw + (1.0 - pim_raw) * pqam_raw)
    return BerBound(
        p_im=pim, p_index=p_index, p_qam=pqam, p_const=min(p_const, 1.0),
        p_total=min(max(total(p_index, p_const), 0.0), 1.0),
        p_const_alt=min(p_const_alt, 1.0),
        p_total_alt=min(max(total(p_index, p_const_alt), 0.0), 1.0),
        p_total_raw=raw,
    )


# --- rates ---------------------------------------------------------------------------

def bits_per_pulse(scheme: str, n_tx: int, n_coeff: int = 1, qam_order: int = 4) -> int:
    """Bits carried per pulse; FOPIM uses an offset pool equal to ``n_tx``."""
    if min(n_tx, n_coeff, qam_order) < 1:
        raise ValueError("counts must be positive")
    mu_c = qam_order.bit_length() - 1
    if 1 << mu_c != qam_order:
        raise ValueError("QAM order must be a power of two")
    if scheme == "ccie":
        return n_tx * (n_coeff.bit_length() - 1 + mu_c)
    if scheme == "fopim":
        perm_bits = math.factorial(n_tx).bit_length() - 1
        comb_bits = math.comb(n_tx, n_tx).bit_length() - 1
        return n_tx * mu_c + perm_bits + comb_bits
    raise ValueError(f"unknown scheme {scheme!r}")
