import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from fda_isac import theory
from fda_isac.array_model import ArrayConfig, joint_steering
from fda_isac.ccie import CcieConfig
from fda_isac.constants import FODC_OFFSETS, LINEAR_OFFSETS
from fda_isac.scene import Target

from conftest import THREE_TARGETS

SIGMA2_5DB = 10 ** -0.5


def _fd_fisher(target, cfg, noise, k):
    """Central-difference derivatives of Pi(rho) = xi a(R, theta) psi(F)^T."""
    def pi(p):
        a = joint_steering(p[2], p[3], cfg)
        psi = np.exp(2j * np.pi * p[4] * cfg.pri_s * np.arange(k))
        return (p[0] + 1j * p[1]) * np.outer(a, psi)

    xi = target.reflection
    p0 = np.array([xi.real, xi.imag, target.range_m, target.angle_rad, target.doppler_hz(cfg)])
    steps = [1e-6, 1e-6, 1e-6, 1e-7, 1e-3]
    d = [(pi(p0 + h * e) - pi(p0 - h * e)) / (2 * h) for h, e in zip(steps, np.eye(5))]
    return np.array([[2 * np.real(np.vdot(d[x], d[y])) / noise for y in range(5)]
                     for x in range(5)])


def _pep_quadrature(alpha, u):
    """E[Q(sqrt(2 g))] for g ~ Gamma(U, alpha): U-branch MRC over Rayleigh fading."""
    f = lambda g: special.ndtr(-math.sqrt(2 * g)) * stats.gamma.pdf(g, u, scale=alpha)
    return integrate.quad(f, 0, np.inf, limit=200)[0]


# --- Fisher information ---------------------------------------------------------

def test_doppler_generator(fodc_cfg):
    gen = theory.derivative_generators(THREE_TARGETS[0], fodc_cfg, 5)
    assert np.allclose(gen["doppler"], 2j * math.pi * fodc_cfg.pri_s * np.arange(5))
    for v in gen.values():
        assert np.all(v.real == 0)


def test_range_generator_uses_offsets(fodc_cfg, lfo_cfg):
    t = THREE_TARGETS[0]
    g = theory.derivative_generators(t, fodc_cfg, 2)["range"]
    scale = -4j * math.pi * fodc_cfg.delta_f_hz / 3e8
    assert np.allclose(g[:6], scale * fodc_cfg.eps)
    glin = theory.derivative_generators(t, lfo_cfg, 2)["range"]
    assert np.allclose(glin, scale * np.tile(np.arange(6), 6))


@pytest.mark.parametrize("offsets", [FODC_OFFSETS, LINEAR_OFFSETS])
def test_fisher_matches_finite_differences(offsets):
    cfg = ArrayConfig(offsets=offsets)
    t = Target(40.9, 10.55, 8.62, 0.8 - 0.3j)
    f = theory.fisher_matrix(t, cfg, 0.5, 20)
    ref = _fd_fisher(t, cfg, 0.5, 20)
    assert np.max(np.abs(f - ref)) < 1e-8 * np.max(np.abs(f))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 5000), st.floats(-85, 85), st.floats(-120, 120),
       st.complex_numbers(min_magnitude=0.1, max_magnitude=3),
       st.integers(2, 60), st.sampled_from([FODC_OFFSETS, LINEAR_OFFSETS]))
def test_fisher_paths_agree_and_psd(r, th, v, xi, k, offsets):
    cfg = ArrayConfig(offsets=offsets)
    t = Target(r, th, v, xi)
    a = theory.fisher_matrix(t, cfg, 0.7, k, path="trace")
    b = theory.fisher_matrix(t, cfg, 0.7, k, path="block")
    assert np.max(np.abs(a - b)) <= 1e-9 * np.max(np.abs(a))
    assert np.allclose(a, a.T, atol=1e-9 * np.max(np.abs(a)))
    assert np.linalg.eigvalsh(a).min() >= -1e-9 * np.max(np.abs(a))


def test_fisher_noise_scaling(fodc_cfg):
    t = THREE_TARGETS[1]
    f1 = theory.fisher_matrix(t, fodc_cfg, 0.3)
    f2 = theory.fisher_matrix(t, fodc_cfg, 0.6)
    assert np.allclose(f2, f1 / 2, rtol=1e-12)
    with pytest.raises(ValueError):
        theory.fisher_matrix(t, fodc_cfg, 0.0)
    with pytest.raises(ValueError):
        theory.fisher_matrix(t, fodc_cfg, 1.0, path="dense")


# --- CRB -----------------------------------------------------------------------------

def test_crb_frozen_scene_values(fodc_cfg):
    r = theory.crb(THREE_TARGETS[0], fodc_cfg, SIGMA2_5DB)
    assert r.crb_range_m2 == pytest.approx(0.0019419726599064, rel=1e-9)
    assert r.crb_angle_rad2 == pytest.approx(1.9723092238693048e-07, rel=1e-9)
    assert r.crb_doppler_hz2 == pytest.approx(0.04635615247064942, rel=1e-9)
    assert r.crb_velocity_mps2 == pytest.approx(1.043013430589612e-05, rel=1e-9)
    r3 = theory.crb(THREE_TARGETS[2], fodc_cfg, SIGMA2_5DB)
    assert r3.crb_angle_rad2 == pytest.approx(2.651063952209992e-07, rel=1e-9)
    assert r3.crb_angle_deg2 == pytest.approx(r3.crb_angle_rad2 * (180 / math.pi) ** 2)


def test_crb_equals_inverse_of_fd_fisher(fodc_cfg):
    t = THREE_TARGETS[2]
    ref = np.diag(np.linalg.inv(_fd_fisher(t, fodc_cfg, SIGMA2_5DB, 200)))[2:]
    r = theory.crb(t, fodc_cfg, SIGMA2_5DB)
    assert np.allclose([r.crb_range_m2, r.crb_angle_rad2, r.crb_doppler_hz2], ref, rtol=1e-5)


def test_cofactor_matches_direct_inverse(fodc_cfg):
    f = theory.fisher_matrix(THREE_TARGETS[1], fodc_cfg, 0.2)
    g = f / 2
    d = g[2:, 2:] - g[2:, :2] @ np.linalg.inv(g[:2, :2]) @ g[:2, 2:]
    expect = np.diag(np.linalg.inv(d)) / 2
    r = theory.crb_from_fisher(f, fodc_cfg.carrier_hz)
    assert np.allclose([r.crb_range_m2, r.crb_angle_rad2, r.crb_doppler_hz2], expect, rtol=1e-9)


def test_crb_linear_in_noise(fodc_cfg):
    t = THREE_TARGETS[0]
    a = theory.crb(t, fodc_cfg, 0.1)
    b = theory.crb(t, fodc_cfg, 0.2)
    for name in ("crb_range_m2", "crb_angle_rad2", "crb_doppler_hz2", "crb_velocity_mps2"):
        assert getattr(b, name) == pytest.approx(2 * getattr(a, name), rel=1e-9)


def test_crb_doppler_decreases_with_pulses(fodc_cfg):
    vals = [theory.crb(THREE_TARGETS[0], fodc_cfg, 0.3, k).crb_doppler_hz2 for k in (50, 100, 200)]
    assert vals[0] > vals[1] > vals[2]


def test_crb_zero_reflection_unidentifiable(fodc_cfg):
    with pytest.raises(ValueError):
        theory.crb(Target(40.0, 5.0, 1.0, 0.0), fodc_cfg, 0.3)


def test_crb_velocity_conversion(fodc_cfg):
    r = theory.crb(THREE_TARGETS[0], fodc_cfg, 0.3)
    assert r.crb_velocity_mps2 == pytest.approx(r.crb_doppler_hz2 * (3e8 / 2e10) ** 2)


# --- pairwise error probability ----------------------------------------------------------

def test_pep_scale_cases():
    c, x = 0.7 + 0.2j, (1 + 1j) / math.sqrt(2)
    assert theory.pep_scale(c, x, c, x, 1.0, True) == 0.0
    assert theory.pep_scale(c, x, 2 * c, x / 2, 1.0, False) == pytest.approx(0.0, abs=1e-30)
    c2, x2 = -0.3 + 1.1j, (1 - 1j) / math.sqrt(2)
    assert theory.pep_scale(c, x, c2, x2, 0.8, False) == pytest.approx(
        abs(c2 * x2 - c * x) ** 2 * 0.8 / 2)
    assert theory.pep_scale(c, x, c, x2, 0.8, True) == pytest.approx(
        abs(x2 - x) ** 2 * abs(c) ** 2 * 0.8 / 2)


def test_pep_limits_and_example():
    assert theory.pep(0.0, 1.0, 1) == pytest.approx(0.5)
    assert theory.pep(1e12, 1.0, 3) < 1e-20
    assert theory.pep(1.0, 0.0, 2) == 0.0
    assert theory.rayleigh_p(1.0) == pytest.approx(0.14645, abs=1e-5)
    assert theory.pep(2.0, 1.0, 2) == pytest.approx(0.05806, abs=1e-5)
    assert theory.pep(2.0, 1.0, 2) == pytest.approx(_pep_quadrature(1.0, 2), abs=1e-9)
    with pytest.raises(ValueError):
        theory.mrc_average(1.0, 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 50), st.integers(1, 6))
def test_pep_matches_quadrature(alpha, u):
    assert theory.mrc_average(alpha, u) == pytest.approx(_pep_quadrature(alpha, u), abs=1e-6)


def test_mrc_large_branch_count_is_stable():
    p = theory.mrc_average(np.array([0.5, 2.0]), 200)
    assert np.all(np.isfinite(p)) and np.all(p >= 0)


# --- BER bound ---------------------------------------------------------------------------

def test_p_im_brute_force():
    cfg = CcieConfig.generate(2, 4, seed=3)
    noise = 0.1
    total = 0.0
    for j, jp in itertools.permutations(range(2), 2):
        for x, xp in itertools.product(cfg.alphabet, repeat=2):
            s = theory.pep_scale(cfg.coeffs[j], x, cfg.coeffs[jp], xp, 1.0, False)
            total += theory.pep(s, noise, 2)
    assert theory.p_im_raw(cfg, 2, 1.0, noise) == pytest.approx(total / 8, rel=1e-12)


def test_p_im_limits():
    one = CcieConfig(np.array([1.0 + 0j]), 4)
    assert theory.p_im_bound(one, 2, 1.0, 0.1) == 0.0
    cfg = CcieConfig.generate(4, 4, seed=0)
    assert theory.p_im_bound(cfg, 2, 1.0, 0.0) == 0.0
    assert theory.p_im_bound(cfg, 1, 1.0, 100.0) <= 1.0


def test_p_qam_qpsk_matches_rayleigh_quadrature():
    cfg = CcieConfig(np.array([1.0 + 0j]), 4)
    for s2 in (0.05, 0.3, 1.0):
        # per-bit Gray QPSK error, Q(sqrt(g / s2)) averaged over g ~ Exp(1)
        ref = integrate.quad(lambda g: special.ndtr(-math.sqrt(g / s2)) * math.exp(-g),
                             0, np.inf)[0]
        assert theory.p_qam_raw(cfg, 1, 1.0, s2) == pytest.approx(ref, abs=1e-9)
    assert theory.p_qam_bound(cfg, 1, 1.0, 0.0) == 0.0


def test_pam_weights_qpsk_epsilon():
    # L = 4: eps = sqrt(3 / 6); a single (i=0, weight 1) term per bit
    assert math.sqrt(3 / (2 ** 2 + 2 ** 2 - 2)) == pytest.approx(1 / math.sqrt(2))
    assert theory._pam_bit_weights(2, 1) == [(0, 1)]
    assert theory._pam_bit_weights(4, 1) == [(0, 1), (1, 1)]
    assert theory._pam_bit_weights(4, 2) == [(0, 2), (1, 1), (2, -1)]


def test_bound_composition():
    cfg = CcieConfig(np.array([1.0 + 0j]), 16)
    b = theory.ccie_ber_bound(cfg, 4, 2, 1.0, 0.05)
    assert b.p_im == 0.0
    assert b.p_total == pytest.approx(b.p_qam)   # mu_I = 0
    cfg4 = CcieConfig.generate(4, 4, seed=0)
    b = theory.ccie_ber_bound(cfg4, 4, 2, 1.0, 0.05)
    assert b.p_index == pytest.approx(4 * b.p_im / 6)
    assert b.p_const == pytest.approx(0.75 * b.p_im + (1 - b.p_im) * b.p_qam)
    assert b.p_const_alt == pytest.approx(0.5 * b.p_im + (1 - b.p_im) * b.p_qam)
    assert b.p_total == pytest.approx((2 * b.p_index + 2 * b.p_const) / 4)
    zero = theory.ccie_ber_bound(cfg4, 4, 2, 1.0, 0.0)
    assert zero.p_total == 0.0 and zero.p_total_alt == 0.0
    with pytest.raises(ValueError):
        theory.ccie_ber_bound(cfg4, 0, 2, 1.0, 0.1)


@pytest.mark.parametrize("j, l, u", [(4, 4, 2), (8, 4, 2), (2, 16, 1), (4, 16, 3)])
def test_bound_monotone_and_bounded(j, l, u):
    cfg = CcieConfig.generate(j, l, seed=0)
    snr = np.arange(-10, 41, 1.0)
    vals = [theory.ccie_ber_bound(cfg, 4, u, 1.0, 10 ** (-s / 10)) for s in snr]
    tot = np.array([v.p_total for v in vals])
    assert np.all(np.diff(tot) <= 1e-15)
    for v in vals:
        for name in ("p_im", "p_index", "p_qam", "p_const", "p_total", "p_const_alt",
                     "p_total_alt"):
            assert 0.0 <= getattr(v, name) <= 1.0


def test_raw_bound_exceeds_one_at_low_snr():
    cfg = CcieConfig.generate(16, 4, seed=0)
    b = theory.ccie_ber_bound(cfg, 4, 1, 1.0, 100.0)
    assert b.p_total_raw > b.p_total
    assert theory.p_im_raw(cfg, 1, 1.0, 100.0) > 1.0
    assert theory.p_im_bound(cfg, 1, 1.0, 100.0) == 1.0


# --- rates -----------------------------------------------------------------------------------

def test_bits_per_pulse():
    assert theory.bits_per_pulse("ccie", 4, 4, 4) == 16
    assert theory.bits_per_pulse("fopim", 4, qam_order=4) == 12
    assert theory.bits_per_pulse("ccie", 6, 6, 16) == 6 * (2 + 4)
    for n in range(2, 17):
        assert theory.bits_per_pulse("ccie", n, n, 4) >= theory.bits_per_pulse("fopim", n, 1, 4)
    with pytest.raises(ValueError):
        theory.bits_per_pulse("ofdm", 4)
    with pytest.raises(ValueError):
        theory.bits_per_pulse("ccie", 4, 4, 6)
    with pytest.raises(ValueError):
        theory.bits_per_pulse("ccie", 0)
