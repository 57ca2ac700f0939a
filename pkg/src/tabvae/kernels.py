"""Hot inner-loop kernels for the order-4 tensor contraction.

Two interchangeable backends compute the same contractions:

* ``numba`` — explicit loops compiled with ``@njit`` (default when numba
  imports cleanly).
* ``numpy`` — pure-numpy fallback that lowers the contraction to a single
  BLAS matmul via reshape.

Set ``TABVAE_BACKEND=numpy`` (or ``numba``) to force one; see
``benchmarks/bench_kernels.py`` for a timing comparison of the two.

All kernels take C-contiguous float64 arrays. E is batched ``(B, M, d)``,
the weight tensor is ``(M, d, W, d)`` and the output is ``(B, W, d)``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# fused Adam step (in place on flat views): decoupled weight decay, then the
# bias-corrected moment update


def _adam_numpy(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    if wd != 0.0:
        p *= 1.0 - lr * wd
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# numpy backend: contraction as one reshape + matmul (BLAS)

def _fwd_numpy(e, w):
    b, m, d = e.shape
    wt, dk = w.shape[2], w.shape[3]
    return (e.reshape(b, m * d) @ w.reshape(m * d, wt * dk)).reshape(b, wt, dk)


def _bwd_e_numpy(g, w):
    m, d = w.shape[0], w.shape[1]
    b = g.shape[0]
    flat = g.reshape(b, -1) @ w.reshape(m * d, -1).T
    return flat.reshape(b, m, d)


def _bwd_w_numpy(e, g):
    b, m, d = e.shape
    wt, dk = g.shape[1], g.shape[2]
    flat = e.reshape(b, m * d).T @ g.reshape(b, wt * dk)
    return flat.reshape(m, d, wt, dk)


# ---------------------------------------------------------------------------
# numba backend: explicit loops compiled once per shape signature. Kernels
# stay single-threaded: reductions run in a fixed order (bit-reproducible)
# and the shapes seen in training are too small to amortize thread launches.

if HAVE_NUMBA:

    @njit(cache=True, fastmath=True)
    def _fwd_numba(e, w):
        b, m, d = e.shape
        wt, dk = w.shape[2], w.shape[3]
        out = np.zeros((b, wt, dk))
        w2 = w.reshape(m * d, wt * dk)
        for n in range(b):
            o = out[n].reshape(wt * dk)
            row = e[n].reshape(m * d)
            for i in range(m * d):
                x = row[i]
                for u in range(wt * dk):
                    o[u] += x * w2[i, u]
        return out

    @njit(cache=True, fastmath=True)
    def _bwd_e_numba(g, w):
        b, wt, dk = g.shape
        m, d = w.shape[0], w.shape[1]
        out = np.empty((b, m, d))
        w2 = w.reshape(m * d, wt * dk)
        for n in range(b):
            gn = g[n].reshape(wt * dk)
            o = out[n].reshape(m * d)
            for i in range(m * d):
                acc = 0.0
                for u in range(wt * dk):
                    acc += gn[u] * w2[i, u]
                o[i] = acc
        return out

    @njit(cache=True)
    def _adam_numba(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
        decay = 1.0 - lr * wd
        for i in range(p.size):
            mi = beta1 * m[i] + (1.0 - beta1) * g[i]
            vi = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            m[i] = mi
            v[i] = vi
            p[i] = p[i] * decay - lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)

    @njit(cache=True, fastmath=True)
    def _bwd_w_numba(e, g):
        b, m, d = e.shape
        wt, dk = g.shape[1], g.shape[2]
        out = np.zeros((m * d, wt * dk))
        for n in range(b):
            row = e[n].reshape(m * d)
            gn = g[n].reshape(wt * dk)
            for i in range(m * d):
                x = row[i]
                for u in range(wt * dk):
                    out[i, u] += x * gn[u]
        return out.reshape(m, d, wt, dk)


_TABLES = {
    "numpy": (_fwd_numpy, _bwd_e_numpy, _bwd_w_numpy, _adam_numpy),
}
if HAVE_NUMBA:
    _TABLES["numba"] = (_fwd_numba, _bwd_e_numba, _bwd_w_numba, _adam_numba)


def _default_backend() -> str:
    choice = os.environ.get("TABVAE_BACKEND", "").strip().lower()
    if choice:
        if choice not in ("numpy", "numba"):
            raise ValueError(f"TABVAE_BACKEND must be 'numpy' or 'numba', got {choice!r}")
        if choice == "numba" and not HAVE_NUMBA:
            raise RuntimeError("TABVAE_BACKEND=numba but numba is not importable")
        return choice
    return "numba" if HAVE_NUMBA else "numpy"


_BACKEND = _default_backend()


def active_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime (used by tests and the benchmark)."""
    if name not in _TABLES:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_TABLES)}")
    global _BACKEND
    _BACKEND = name


def contract_forward(e: np.ndarray, w: np.ndarray) -> np.ndarray:
    return _TABLES[_BACKEND][0](e, w)


def contract_backward_e(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    return _TABLES[_BACKEND][1](g, w)


def contract_backward_w(e: np.ndarray, g: np.ndarray) -> np.ndarray:
    return _TABLES[_BACKEND][2](e, g)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2) -> None:
    """In-place fused Adam step on flat float64 views."""
    _TABLES[_BACKEND][3](p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2)
