"""Per-domain matrix factorization pre-trained with BPR.

The trained `EmbeddingTable` is the backbone contract every downstream stage
consumes: once frozen it is immutable (enforced through numpy's writeable
flag) and transfer training must leave it bit-identical.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DivergenceError, FrozenTableError, SamplingInfeasibleError

log = logging.getLogger(__name__)


class EmbeddingTable:
    def __init__(self, domain_id, user_embeddings, item_embeddings, frozen=False):
        user_embeddings = np.ascontiguousarray(user_embeddings, dtype=np.float64)
        item_embeddings = np.ascontiguousarray(item_embeddings, dtype=np.float64)
        if user_embeddings.ndim != 2 or item_embeddings.ndim != 2:
            raise ValueError("embeddings must be 2-d matrices")
        if user_embeddings.shape[1] != item_embeddings.shape[1]:
            raise ValueError("user and item embedding dims differ")
        if user_embeddings.shape[1] < 1:
            raise ValueError("embedding dim must be >= 1")
        if not (np.isfinite(user_embeddings).all() and np.isfinite(item_embeddings).all()):
            raise ValueError("embeddings must be finite")
        self.domain_id = str(domain_id)
        self.user_embeddings = user_embeddings
        self.item_embeddings = item_embeddings
        self._frozen = False
        if frozen:
            self.freeze()

    @property
    def frozen(self):
        return self._frozen

    @property
    def dim(self):
        return self.user_embeddings.shape[1]

    @property
    def num_users(self):
        return self.user_embeddings.shape[0]

    @property
    def num_items(self):
        return self.item_embeddings.shape[0]

    def freeze(self):
        """Mark immutable (idempotent). Writes through numpy now raise."""
        self.user_embeddings.flags.writeable = False
        self.item_embeddings.flags.writeable = False
        self._frozen = True
        return self

    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.domain_id.encode("utf-8"))
        for arr in (self.user_embeddings, self.item_embeddings):
            h.update(str(arr.shape).encode("ascii"))
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def __repr__(self):
        state = "frozen" if self._frozen else "mutable"
        return (
            f"EmbeddingTable({self.domain_id!r}, users={self.num_users}, "
            f"items={self.num_items}, dim={self.dim}, {state})"
        )


@dataclass(frozen=True)
class BprHyper:
    dim: int = 64
    learning_rate: float = 0.05
    regularization: float = 1e-4
    epochs: int = 50
    negatives_per_positive: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.learning_rate <= 0 or self.epochs <= 0 or self.negatives_per_positive <= 0:
            raise ValueError("learning_rate, epochs, negatives_per_positive must be positive")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")


def bpr_triple_loss(u, v_pos, v_neg, reg):
    """Per-sample objective the SGD kernel descends:
    -ln sigma(u.(v_pos - v_neg)) + (reg/2)(|u|^2 + |v_pos|^2 + |v_neg|^2)."""
    x = float(u @ (v_pos - v_neg))
    penalty = 0.5 * reg * (u @ u + v_pos @ v_pos + v_neg @ v_neg)
    return float(np.logaddexp(0.0, -x) + penalty)


def bpr_triple_grads(u, v_pos, v_neg, reg):
    """Analytic gradients of `bpr_triple_loss` w.r.t. (u, v_pos, v_neg)."""
    diff = v_pos - v_neg
    x = float(u @ diff)
    g = 1.0 / (1.0 + np.exp(x)) if x <= 0 else np.exp(-x) / (1.0 + np.exp(-x))
    du = -g * diff + reg * u
    dvp = -g * u + reg * v_pos
    dvn = g * u + reg * v_neg
    return du, dvp, dvn


def _draw_negatives(rng, users, pair_keys, num_items, max_rounds=1000):
    """Uniform negatives, rejection-resampled until none hits a positive."""
    n = users.shape[0]
    neg = rng.integers(0, num_items, size=n, dtype=np.int64)
    for _ in range(max_rounds):
        keys = users * num_items + neg
        pos = np.searchsorted(pair_keys, keys)
        pos[pos == pair_keys.size] = 0  # any valid slot; equality check below decides
        bad = pair_keys[pos] == keys
        if not bad.any():
            return neg
        neg[bad] = rng.integers(0, num_items, size=int(bad.sum()), dtype=np.int64)
    raise SamplingInfeasibleError("negative sampling did not converge")


def mean_bpr_loss(user_emb, item_emb, users, pos_items, neg_items):
    """Mean -ln sigma(u.(v_pos - v_neg)) without updating anything."""
    x = np.einsum(
        "ij,ij->i", user_emb[users], item_emb[pos_items] - item_emb[neg_items]
    )
    return float(np.logaddexp(0.0, -x).mean())


def train_bpr(ds, hyper, initial=None):
    """BPR with per-interaction SGD; one uniform negative per positive pass.

    Embeddings start i.i.d. Gaussian (std 0.1) unless resuming from
    `initial`, which must not be frozen.
    """
    rng = np.random.default_rng(hyper.seed)
    if initial is not None:
        if initial.frozen:
            raise FrozenTableError(f"{initial.domain_id}: cannot resume a frozen table")
        if initial.dim != hyper.dim:
            raise ValueError("initial table dim does not match hyper.dim")
        user_emb = initial.user_embeddings.copy()
        item_emb = initial.item_embeddings.copy()
    else:
        user_emb = rng.normal(0.0, 0.1, size=(ds.num_users, hyper.dim))
        item_emb = rng.normal(0.0, 0.1, size=(ds.num_items, hyper.dim))

    pairs = ds.pairs
    if pairs.shape[0] == 0:
        raise ValueError(f"{ds.domain_id}: no interactions to train on")
    counts = np.bincount(pairs[:, 0], minlength=ds.num_users)
    if counts.max() >= ds.num_items:
        raise SamplingInfeasibleError(
            f"{ds.domain_id}: a user interacts with every item; no negatives exist"
        )
    pair_keys = np.sort(pairs[:, 0] * ds.num_items + pairs[:, 1])

    base_users = pairs[:, 0]
    base_pos = pairs[:, 1]
    if hyper.negatives_per_positive > 1:
        base_users = np.tile(base_users, hyper.negatives_per_positive)
        base_pos = np.tile(base_pos, hyper.negatives_per_positive)

    lr, reg = hyper.learning_rate, hyper.regularization
    for epoch in range(1, hyper.epochs + 1):
        perm = rng.permutation(base_users.shape[0])
        users = np.ascontiguousarray(base_users[perm])
        pos = np.ascontiguousarray(base_pos[perm])
        neg = _draw_negatives(rng, users, pair_keys, ds.num_items)
        loss = kernels.bpr_epoch(user_emb, item_emb, users, pos, neg, lr, reg)
        if not np.isfinite(loss):
            raise DivergenceError(f"bpr[{ds.domain_id}]", epoch, loss)
        log.debug("bpr[%s] epoch %d loss %.6f", ds.domain_id, epoch, loss)
    return EmbeddingTable(ds.domain_id, user_emb, item_emb)


def score(table, user, item):
    """Dot-product preference score."""
    if not (0 <= user < table.num_users):
        raise IndexError(f"user index {user} out of range [0, {table.num_users})")
    if not (0 <= item < table.num_items):
        raise IndexError(f"item index {item} out of range [0, {table.num_items})")
    return float(table.user_embeddings[user] @ table.item_embeddings[item])
