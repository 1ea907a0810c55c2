"""Collapsed-Gibbs sweep kernels: the hot inner loops of topic modeling.

Each sweep exists twice: a scalar loop compiled with numba ``@njit`` and a
numpy fallback vectorized over topics. Which one the package uses is
decided at import time: the env flag ``TOPICSUM_NO_NUMBA=1`` forces the
fallback, as does an unavailable numba. Both paths consume the same
pre-generated uniform stream and accumulate cumulative topic probabilities
left-to-right in float64, so their sampling trajectories are bit-identical
(asserted by tests and by ``benchmarks/bench_gibbs.py``, which also times
the two backends against each other).
"""

import os

import numpy as np

_FLAG = os.environ.get("TOPICSUM_NO_NUMBA", "").strip().lower()
_DISABLED = _FLAG in ("1", "true", "yes")

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


def _train_sweep(z, doc_ids, word_ids, n_dk, n_kw, n_k, alpha, eta,
                 vocab_size, uniforms):
    """One full resampling pass over every token, in place.

    Assignment z[i] is resampled from the collapsed conditional
    (n_dk + alpha) * (n_kw + eta) / (n_k + V*eta) with token i's own
    count removed. uniforms[i] drives the categorical draw.
    """
    n_tokens = z.shape[0]
    K = n_k.shape[0]
    v_eta = vocab_size * eta
    cum = np.empty(K, dtype=np.float64)
    for i in range(n_tokens):
        d = doc_ids[i]
        w = word_ids[i]
        k_old = z[i]
        n_dk[d, k_old] -= 1
        n_kw[k_old, w] -= 1
        n_k[k_old] -= 1

        acc = 0.0
        for k in range(K):
            acc += (n_dk[d, k] + alpha) * (n_kw[k, w] + eta) / (n_k[k] + v_eta)
            cum[k] = acc
        r = uniforms[i] * acc
        k_new = K - 1
        for k in range(K):
            if r < cum[k]:
                k_new = k
                break

        z[i] = k_new
        n_dk[d, k_new] += 1
        n_kw[k_new, w] += 1
        n_k[k_new] += 1


def _foldin_sweep(z, word_ids, n_k_doc, phi, alpha, uniforms):
    """Resample one held-out document's assignments with phi frozen."""
    n_tokens = z.shape[0]
    K = n_k_doc.shape[0]
    cum = np.empty(K, dtype=np.float64)
    for i in range(n_tokens):
        w = word_ids[i]
        k_old = z[i]
        n_k_doc[k_old] -= 1

        acc = 0.0
        for k in range(K):
            acc += (n_k_doc[k] + alpha) * phi[k, w]
            cum[k] = acc
        r = uniforms[i] * acc
        k_new = K - 1
        for k in range(K):
            if r < cum[k]:
                k_new = k
                break

        z[i] = k_new
        n_k_doc[k_new] += 1


def train_sweep_numpy(z, doc_ids, word_ids, n_dk, n_kw, n_k, alpha, eta,
                      vocab_size, uniforms):
    """Fallback train sweep; per-token math vectorized over topics.

    np.cumsum adds left-to-right like the scalar loop, so the two backends
    draw identical topic sequences from identical uniforms.
    """
    K = n_k.shape[0]
    v_eta = vocab_size * eta
    for i in range(z.shape[0]):
        d = doc_ids[i]
        w = word_ids[i]
        k_old = z[i]
        n_dk[d, k_old] -= 1
        n_kw[k_old, w] -= 1
        n_k[k_old] -= 1

        cum = np.cumsum((n_dk[d] + alpha) * (n_kw[:, w] + eta) / (n_k + v_eta))
        r = uniforms[i] * cum[-1]
        k_new = int(np.searchsorted(cum, r, side="right"))
        if k_new >= K:
            k_new = K - 1

        z[i] = k_new
        n_dk[d, k_new] += 1
        n_kw[k_new, w] += 1
        n_k[k_new] += 1


def foldin_sweep_numpy(z, word_ids, n_k_doc, phi, alpha, uniforms):
    """Fallback fold-in sweep; vectorized over topics like train_sweep_numpy."""
    K = n_k_doc.shape[0]
    for i in range(z.shape[0]):
        w = word_ids[i]
        k_old = z[i]
        n_k_doc[k_old] -= 1

        cum = np.cumsum((n_k_doc + alpha) * phi[:, w])
        r = uniforms[i] * cum[-1]
        k_new = int(np.searchsorted(cum, r, side="right"))
        if k_new >= K:
            k_new = K - 1

        z[i] = k_new
        n_k_doc[k_new] += 1


if _HAVE_NUMBA:
    train_sweep_numba = njit(cache=True)(_train_sweep)
    foldin_sweep_numba = njit(cache=True)(_foldin_sweep)
else:  # pragma: no cover
    train_sweep_numba = None
    foldin_sweep_numba = None

_USE_NUMBA = _HAVE_NUMBA and not _DISABLED

if _USE_NUMBA:
    train_sweep = train_sweep_numba
    foldin_sweep = foldin_sweep_numba
else:
    train_sweep = train_sweep_numpy
    foldin_sweep = foldin_sweep_numpy


def backend() -> str:
    """Name of the sweep implementation selected at import time."""
    return "numba" if _USE_NUMBA else "numpy"
