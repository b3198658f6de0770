"""Mapping-function baseline: one feed-forward map per transfer direction,
trained to regress source user embeddings onto target ones (squared error).
Shares the adapter's architecture and optimizer defaults so comparisons hold
everything but the objective fixed."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, FrozenTableError, TrainingInfeasibleError
from .nets import Adam, FeedForward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmcdrHyper:
    hidden: int | None = None  # defaults to 2 * dim
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.hidden is not None and self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size, epochs must be positive")


class MappingParams:
    def __init__(self, domain_src, domain_tgt, net):
        self.domain_src = str(domain_src)
        self.domain_tgt = str(domain_tgt)
        self.net = net
        self.history = None

    @property
    def dim(self):
        return self.net.dim_in

    def blocks(self):
        return [(name, arr) for name, arr in self.net.params()]

    def copy(self):
        dup = MappingParams(self.domain_src, self.domain_tgt, self.net.copy())
        return dup


def mapping_loss_and_grads(net, x, y, want_grads=False):
    """Mean squared row error |net(x) - y|^2 and its parameter gradients."""
    out, cache = net.forward(x)
    r = out - y
    loss = float(np.square(r).sum(axis=1).mean())
    if not want_grads:
        return loss, None
    dout = 2.0 * r / x.shape[0]
    _, grads = net.backward(cache, dout)
    return loss, grads


def train_emcdr(tables, split, hyper, source, target):
    """Fit the direction's map on training-overlap embedding pairs."""
    if isinstance(tables, dict):
        by_id = dict(tables)
    else:
        by_id = {t.domain_id: t for t in tables}
    if {source, target} != {split.domain_x, split.domain_y} or source == target:
        raise ValueError(f"bad direction {source!r}->{target!r} for this split")
    src_table, tgt_table = by_id[source], by_id[target]
    for t in (src_table, tgt_table):
        if not t.frozen:
            raise FrozenTableError(f"{t.domain_id}: backbone must be frozen before mapping training")
    if src_table.dim != tgt_table.dim:
        raise ValueError("backbone dims differ")
    xs, ys = split.train_pairs()
    if source == split.domain_y:
        xs, ys = ys, xs
    if xs.shape[0] == 0:
        raise TrainingInfeasibleError("no training overlap users")
    x_all = src_table.user_embeddings[xs]
    y_all = tgt_table.user_embeddings[ys]

    rng = np.random.default_rng(hyper.seed)
    dim = src_table.dim
    hidden = hyper.hidden if hyper.hidden is not None else 2 * dim
    net = FeedForward(dim, hidden, dim, rng)
    names = [name for name, _ in net.params()]
    opt = Adam([arr for _, arr in net.params()], lr=hyper.learning_rate)

    n = x_all.shape[0]
    history = []
    for epoch in range(1, hyper.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            batch = perm[start : start + hyper.batch_size]
            loss, grads = mapping_loss_and_grads(net, x_all[batch], y_all[batch], True)
            opt.step([grads[name] for name in names])
            total += loss * batch.size
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"emcdr[{source}->{target}]", epoch, epoch_loss)
        history.append({"epoch": epoch, "loss": epoch_loss})
        log.debug("emcdr[%s->%s] epoch %d loss %.6f", source, target, epoch, epoch_loss)
    params = MappingParams(source, target, net)
    params.history = history
    return params


def emcdr_transfer(params, tables, user):
    """Map the user's source embedding into the target domain."""
    if isinstance(tables, dict):
        by_id = dict(tables)
    else:
        by_id = {t.domain_id: t for t in tables}
    src_table = by_id[params.domain_src]
    if not (0 <= user < src_table.num_users):
        raise IndexError(f"user index {user} out of range [0, {src_table.num_users})")
    x = src_table.user_embeddings[user].reshape(1, -1)
    return params.net.apply(x)[0]
