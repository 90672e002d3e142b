"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``FDA_ISAC_NO_NUMBA=1`` (or run
without numba installed) to force the numpy implementations; large batches of
the BLAS-shaped kernels go to numpy even when numba is active. Both backends
are always importable as :data:`numpy_backend` and :data:`numba_backend`
(the latter is ``None`` when numba is unavailable) so they can be compared.

Kernels
-------
capon_grid(z, ar)
    |ar[r]^H z[t] ar[r]| for every (r, t); shape (S_r, S_t).
z_blocks(qinv, aR, aT)
    Z[t] = B_t^H Qinv B_t with B_t = aR[t] kron diag(aT[t]); shape (S_t, N, N).
schur_spectrum(z)
    |z11 - z12 z22^-1 z21| per block, with z22 loaded when ill conditioned.
ml_detect(y, h, symbols)
    argmin_p ||y[b] - symbols[p] h[b]||^2 per row, first index on ties.
"""
from __future__ import annotations

import os
import types

import numpy as np

SCHUR_LOADING = 1e-10


def _env_disabled() -> bool:
    return os.environ.get("FDA_ISAC_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


# --- numpy reference implementations ---------------------------------------

def _capon_grid_np(z, ar):
    s_t, n, _ = z.shape
    outer = (ar.conj()[:, :, None] * ar[:, None, :]).reshape(ar.shape[0], n * n)
    return np.abs(outer @ z.reshape(s_t, n * n).T)


def _z_blocks_np(qinv, aR, aT):
    m = aR.shape[1]
    n = aT.shape[1]
    q4 = qinv.reshape(m, n, m, n)
    # sum over receive indices first: (S_t, N, N)
    inner = np.einsum("ti,injk,tj->tnk", aR.conj(), q4, aR, optimize=True)
    return aT.conj()[:, :, None] * inner * aT[:, None, :]


def _schur_spectrum_np(z):
    z11 = z[:, 0, 0]
    z12 = z[:, 0, 1:]
    z22 = z[:, 1:, 1:]
    k = z22.shape[-1]
    if k == 0:
        return np.abs(z11)
    tr = np.real(np.trace(z22, axis1=1, axis2=2))
    cond = np.linalg.cond(z22)
    # relative loading; absolute when the block is identically zero
    load = np.where(cond > 1e12, SCHUR_LOADING * np.where(tr > 0, tr / k, 1.0), 0.0)
    z22 = z22 + load[:, None, None] * np.eye(k)
    x = np.linalg.solve(z22, z12.conj()[:, :, None])[:, :, 0]
    return np.abs(z11 - np.einsum("tk,tk->t", z12, x))


def _ml_detect_np(y, h, symbols):
    # ||y - s h||^2 = ||y||^2 - 2 Re(s^* h^H y) + |s|^2 ||h||^2
    hy = np.einsum("bu,bu->b", h.conj(), y)
    hh = np.einsum("bu,bu->b", h.conj(), h).real
    yy = np.einsum("bu,bu->b", y.conj(), y).real
    d = (yy[:, None] - 2.0 * np.real(symbols.conj()[None, :] * hy[:, None])
         + (np.abs(symbols) ** 2)[None, :] * hh[:, None])
    return np.argmin(d, axis=1)


numpy_backend = types.SimpleNamespace(
    name="numpy",
    capon_grid=_capon_grid_np,
    z_blocks=_z_blocks_np,
    schur_spectrum=_schur_spectrum_np,
    ml_detect=_ml_detect_np,
)


# --- numba implementations --------------------------------------------------

def _build_numba():
    try:
        from numba import njit
    except ImportError:
        return None

    @njit(cache=True)
    def capon_grid(z, ar):
        # one GEMM against the flattened outer products; a plain loop is ~8x slower
        s_t, n, _ = z.shape
        s_r = ar.shape[0]
        outer = np.empty((s_r, n * n), dtype=np.complex128)
        for r in range(s_r):
            for i in range(n):
                ci = ar[r, i].conjugate()
                for k in range(n):
                    outer[r, i * n + k] = ci * ar[r, k]
        zt = np.ascontiguousarray(z.reshape(s_t, n * n).T)
        return np.abs(np.dot(outer, zt))

    @njit(cache=True)
    def z_blocks(qinv, aR, aT):
        s_t, m = aR.shape
        n = aT.shape[1]
        out = np.zeros((s_t, n, n), dtype=np.complex128)
        for t in range(s_t):
            for i in range(m):
                ci = aR[t, i].conjugate()
                for j in range(m):
                    w = ci * aR[t, j]
                    for a in range(n):
                        for b in range(n):
                            out[t, a, b] += w * qinv[i * n + a, j * n + b]
            for a in range(n):
                ca = aT[t, a].conjugate()
                for b in range(n):
                    out[t, a, b] *= ca * aT[t, b]
        return out

    @njit(cache=True)
    def schur_spectrum(z):
        s_t, n, _ = z.shape
        out = np.empty(s_t)
        k = n - 1
        for t in range(s_t):
            if k == 0:
                out[t] = abs(z[t, 0, 0])
                continue
            z22 = np.ascontiguousarray(z[t, 1:, 1:])
            rhs = np.empty((k, 1), dtype=np.complex128)
            for i in range(k):
                rhs[i, 0] = z[t, 0, i + 1].conjugate()
            if np.linalg.cond(z22) > 1e12:
                tr = 0.0
                for i in range(k):
                    tr += z22[i, i].real
                ld = SCHUR_LOADING * (tr / k if tr > 0 else 1.0)
                for i in range(k):
                    z22[i, i] += ld
            x = np.linalg.solve(z22, rhs)
            acc = z[t, 0, 0]
            for i in range(k):
                acc -= z[t, 0, i + 1] * x[i, 0]
            out[t] = abs(acc)
        return out

    @njit(cache=True)
    def ml_detect(y, h, symbols):
        b_count, u_count = y.shape
        p_count = symbols.shape[0]
        out = np.empty(b_count, dtype=np.int64)
        for b in range(b_count):
            best = np.inf
            best_p = 0
            for p in range(p_count):
                s = symbols[p]
                d = 0.0
                for u in range(u_count):
                    e = y[b, u] - s * h[b, u]
                    d += e.real * e.real + e.imag * e.imag
                if d < best:
                    best = d
                    best_p = p
            out[b] = best_p
        return out

    return types.SimpleNamespace(
        name="numba",
        capon_grid=capon_grid,
        z_blocks=z_blocks,
        schur_spectrum=schur_spectrum,
        ml_detect=ml_detect,
    )


numba_backend = _build_numba()
USE_NUMBA = numba_backend is not None and not _env_disabled()
backend = numba_backend if USE_NUMBA else numpy_backend


def _c128(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


# Batch sizes above which the BLAS-backed numpy path beats the compiled loops
# (see benchmarks/bench_kernels.py). Small batches, as in refinement, stay compiled.
CAPON_NUMPY_CELLS = 100_000
Z_BLOCKS_NUMPY_ROWS = 80
SCHUR_NUMPY_ROWS = 40


def _pick(size, threshold):
    return numpy_backend if size > threshold else backend


def capon_grid(z, ar):
    return _pick(len(z) * len(ar), CAPON_NUMPY_CELLS).capon_grid(_c128(z), _c128(ar))


def z_blocks(qinv, aR, aT):
    return _pick(len(aR), Z_BLOCKS_NUMPY_ROWS).z_blocks(_c128(qinv), _c128(aR), _c128(aT))


def schur_spectrum(z):
    return _pick(len(z), SCHUR_NUMPY_ROWS).schur_spectrum(_c128(z))


def ml_detect(y, h, symbols):
    return backend.ml_detect(_c128(y), _c128(h), _c128(symbols))
