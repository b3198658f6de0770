"""Hot numeric loops with a compiled and a plain-numpy implementation.

Backend selection happens once at import via the CROSSREC_BACKEND env var:
"numpy" forces the fallback path, "numba" insists on the compiled path
(raising if numba is absent), unset auto-detects. Both implementations do the
same per-sample arithmetic in the same order; `benchmarks/bench_kernels.py`
times them against each other.
"""
from __future__ import annotations

import math
import os

import numpy as np

ENV_VAR = "CROSSREC_BACKEND"


def _resolve_backend() -> str:
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()


def _bpr_epoch_loops(user_emb, item_emb, users, pos_items, neg_items, lr, reg):
    # One pass of stochastic gradient ascent on ln sigma(u.(v_pos - v_neg))
    # with L2 shrinkage; all three vectors of a step update from their values
    # before the step. Returns the mean pairwise loss measured pre-update.
    n = users.shape[0]
    d = user_emb.shape[1]
    total = 0.0
    for t in range(n):
        u = users[t]
        i = pos_items[t]
        j = neg_items[t]
        x = 0.0
        for k in range(d):
            x += user_emb[u, k] * (item_emb[i, k] - item_emb[j, k])
        if x > 0.0:
            e = math.exp(-x)
            g = e / (1.0 + e)  # sigma(-x)
            total += math.log1p(e)  # -ln sigma(x)
        else:
            e = math.exp(x)
            g = 1.0 / (1.0 + e)
            total += math.log1p(e) - x
        for k in range(d):
            uk = user_emb[u, k]
            vik = item_emb[i, k]
            vjk = item_emb[j, k]
            user_emb[u, k] = uk + lr * (g * (vik - vjk) - reg * uk)
            item_emb[i, k] = vik + lr * (g * uk - reg * vik)
            item_emb[j, k] = vjk + lr * (-g * uk - reg * vjk)
    return total / n


def _bpr_epoch_numpy(user_emb, item_emb, users, pos_items, neg_items, lr, reg):
    n = users.shape[0]
    total = 0.0
    for t in range(n):
        u = users[t]
        i = pos_items[t]
        j = neg_items[t]
        uu = user_emb[u].copy()
        vi = item_emb[i].copy()
        vj = item_emb[j].copy()
        diff = vi - vj
        x = float(uu @ diff)
        if x > 0.0:
            e = math.exp(-x)
            g = e / (1.0 + e)
            total += math.log1p(e)
        else:
            e = math.exp(x)
            g = 1.0 / (1.0 + e)
            total += math.log1p(e) - x
        user_emb[u] = uu + lr * (g * diff - reg * uu)
        item_emb[i] = vi + lr * (g * uu - reg * vi)
        item_emb[j] = vj + lr * (-g * uu - reg * vj)
    return total / n


def _loo_ranks_loops(item_emb, candidates, queries):
    # candidates: (n, m) item indices with column 0 the held-out positive.
    # Rank counts candidates scoring strictly higher, plus score ties that
    # break toward the smaller item index.
    n, m = candidates.shape
    d = item_emb.shape[1]
    ranks = np.empty(n, dtype=np.int64)
    for r in range(n):
        pos_item = candidates[r, 0]
        s_pos = 0.0
        for k in range(d):
            s_pos += queries[r, k] * item_emb[pos_item, k]
        rank = 1
        for c in range(1, m):
            it = candidates[r, c]
            s = 0.0
            for k in range(d):
                s += queries[r, k] * item_emb[it, k]
            if s > s_pos or (s == s_pos and it < pos_item):
                rank += 1
        ranks[r] = rank
    return ranks


def _loo_ranks_numpy(item_emb, candidates, queries):
    n, _ = candidates.shape
    ranks = np.empty(n, dtype=np.int64)
    for r in range(n):
        cand = candidates[r]
        scores = item_emb[cand] @ queries[r]
        s_pos = scores[0]
        ahead = (scores[1:] > s_pos) | ((scores[1:] == s_pos) & (cand[1:] < cand[0]))
        ranks[r] = 1 + int(np.count_nonzero(ahead))
    return ranks


_NUMBA_IMPLS = None


def numba_impls():
    """Compile (once) and return the numba variants (bpr_epoch, loo_ranks)."""
    global _NUMBA_IMPLS
    if _NUMBA_IMPLS is None:
        from numba import njit

        _NUMBA_IMPLS = (
            njit(cache=True)(_bpr_epoch_loops),
            njit(cache=True)(_loo_ranks_loops),
        )
    return _NUMBA_IMPLS


def numpy_impls():
    return _bpr_epoch_numpy, _loo_ranks_numpy


if BACKEND == "numba":
    bpr_epoch, loo_ranks = numba_impls()
else:
    bpr_epoch, loo_ranks = numpy_impls()
