import os
import subprocess
import sys

import numpy as np
import pytest

from fda_isac import kernels

needs_numba = pytest.mark.skipif(kernels.numba_backend is None, reason="numba not installed")


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _hermitian(rng, n):
    a = _crandn(rng, n, n)
    return a @ a.conj().T + np.eye(n)


@needs_numba
@pytest.mark.parametrize("m, n", [(6, 6), (3, 4), (1, 2)])
def test_backends_agree(m, n):
    rng = np.random.default_rng(m * 10 + n)
    nb, np_ = kernels.numba_backend, kernels.numpy_backend
    qinv = np.linalg.inv(_hermitian(rng, m * n))
    aR = np.exp(2j * np.pi * rng.uniform(size=(17, m)))
    aT = np.exp(2j * np.pi * rng.uniform(size=(17, n)))
    z_a, z_b = nb.z_blocks(qinv, aR, aT), np_.z_blocks(qinv, aR, aT)
    assert np.allclose(z_a, z_b, rtol=1e-12, atol=1e-12)
    ar = np.exp(2j * np.pi * rng.uniform(size=(23, n)))
    assert np.allclose(nb.capon_grid(z_a, ar), np_.capon_grid(z_a, ar), rtol=1e-12)
    assert np.allclose(nb.schur_spectrum(z_a), np_.schur_spectrum(z_a), rtol=1e-9)
    y, h = _crandn(rng, 500, 3), _crandn(rng, 500, 3)
    sym = _crandn(rng, 16)
    assert np.array_equal(nb.ml_detect(y, h, sym), np_.ml_detect(y, h, sym))


@needs_numba
def test_ml_tie_break_both_backends():
    y = np.ones((1, 2), complex)
    h = np.zeros((1, 2), complex)
    sym = np.arange(1, 9) + 0j
    for be in (kernels.numba_backend, kernels.numpy_backend):
        assert be.ml_detect(y, h, sym)[0] == 0


def test_capon_grid_matches_quadratic_form():
    rng = np.random.default_rng(3)
    z = _crandn(rng, 4, 5, 5)
    ar = _crandn(rng, 6, 5)
    expect = np.abs(np.einsum("ri,tik,rk->rt", ar.conj(), z, ar))
    assert np.allclose(kernels.capon_grid(z, ar), expect)


@pytest.mark.parametrize("rows", [1, 500])
def test_size_dispatch_matches_reference(rows):
    rng = np.random.default_rng(rows)
    qinv = np.linalg.inv(_hermitian(rng, 12))
    aR = np.exp(2j * np.pi * rng.uniform(size=(rows, 3)))
    aT = np.exp(2j * np.pi * rng.uniform(size=(rows, 4)))
    ref = kernels.numpy_backend
    z = kernels.z_blocks(qinv, aR, aT)
    assert np.allclose(z, ref.z_blocks(qinv, aR, aT), rtol=1e-12, atol=1e-12)
    ar = np.exp(2j * np.pi * rng.uniform(size=(300, 4)))
    assert np.allclose(kernels.capon_grid(z, ar), ref.capon_grid(z, ar), rtol=1e-12)
    assert np.allclose(kernels.schur_spectrum(z), ref.schur_spectrum(z), rtol=1e-9)


def test_env_flag_selects_numpy():
    code = "from fda_isac import kernels; print(kernels.backend.name, kernels.USE_NUMBA)"
    env = dict(os.environ, FDA_ISAC_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["numpy", "False"]
    env["FDA_ISAC_NO_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    expected = "numba" if kernels.numba_backend is not None else "numpy"
    assert out[0] == expected
