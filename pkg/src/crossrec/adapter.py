"""Plug-in transfer adapter between two frozen embedding backbones.

Each domain gets a prior (embedding -> alignment space) and a decoder
(alignment space -> embedding). Training pulls overlap users' alignment
representations together with three terms: an in-batch contrastive loss over
cosine similarities, a scale-alignment loss through trainable affine maps
F1/F2 (training only, never used at inference), and a same-domain
reconstruction loss through the decoders. The contrastive and scale terms
need paired overlap users; reconstruction does not, so training draws its
reconstruction batches from every user of each domain and the decoders stay
faithful on the cold-start population the adapter is meant to serve.
Cold-start transfer is decoder_target(prior_source(u)).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import evaluation
from .errors import DivergenceError, FrozenTableError, TrainingInfeasibleError, ZeroNormError
from .nets import Adam, FeedForward

log = logging.getLogger(__name__)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine similarity undefined for zero-norm vectors")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def _normalize_rows(m, what):
    norms = np.linalg.norm(m, axis=1)
    if (norms == 0.0).any():
        raise ZeroNormError(f"{what}: zero-norm row, cosine similarity undefined")
    return m / norms[:, None], norms


def _infonce(a, b, tau, want_grads=False):
    """One-directional in-batch InfoNCE with cosine similarity, anchors = rows
    of `a`, positives on the diagonal, softmax over all rows of `b`."""
    if a.shape != b.shape:
        raise ValueError("paired batches must share a shape")
    if a.shape[0] < 2:
        raise ValueError("contrastive loss needs at least 2 rows")
    if tau <= 0:
        raise ValueError("tau must be positive")
    ah, an = _normalize_rows(a, "contrastive_loss")
    bh, bn = _normalize_rows(b, "contrastive_loss")
    n = a.shape[0]
    logits = (ah @ bh.T) / tau
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    loss = float((lse - np.diag(logits)).mean())
    if not want_grads:
        return loss, None, None
    p = np.exp(logits - lse[:, None])
    ds = (p - np.eye(n)) / (n * tau)
    dah = ds @ bh
    dbh = ds.T @ ah
    da = (dah - (dah * ah).sum(axis=1)[:, None] * ah) / an[:, None]
    db = (dbh - (dbh * bh).sum(axis=1)[:, None] * bh) / bn[:, None]
    return loss, da, db


def contrastive_loss(up_x, up_y, tau):
    """Mean over anchors i of -log softmax_j(cos(up_x[i], up_y[j]) / tau)[i]."""
    return _infonce(np.asarray(up_x, float), np.asarray(up_y, float), tau)[0]


def _row_norm_grads(residual, n_rows):
    norms = np.linalg.norm(residual, axis=1)
    loss = float(norms.mean())
    safe = np.where(norms > 0.0, norms, 1.0)
    grad = residual / safe[:, None] / n_rows
    grad[norms == 0.0] = 0.0
    return loss, grad


def _apply_scale(m, alpha, beta):
    if alpha.ndim == 2:
        return m @ alpha + beta
    return m * alpha + beta


def _scale_loss(up_x, up_y, alpha1, beta1, alpha2, beta2, want_grads=False):
    if up_x.shape != up_y.shape:
        raise ValueError("paired batches must share a shape")
    n = up_x.shape[0]
    r1 = _apply_scale(up_x, alpha1, beta1) - up_y
    r2 = _apply_scale(up_y, alpha2, beta2) - up_x
    l1, g1 = _row_norm_grads(r1, n)
    l2, g2 = _row_norm_grads(r2, n)
    loss = l1 + l2
    if not want_grads:
        return loss, None
    if alpha1.ndim == 2:
        da1 = up_x.T @ g1
        da2 = up_y.T @ g2
        dx = g1 @ alpha1.T - g2
        dy = g2 @ alpha2.T - g1
    else:
        da1 = (up_x * g1).sum(axis=0)
        da2 = (up_y * g2).sum(axis=0)
        dx = g1 * alpha1 - g2
        dy = g2 * alpha2 - g1
    grads = {
        "dx": dx,
        "dy": dy,
        "alpha1": da1,
        "beta1": g1.sum(axis=0),
        "alpha2": da2,
        "beta2": g2.sum(axis=0),
    }
    return loss, grads


def scale_alignment_loss(up_x, up_y, alpha1, beta1, alpha2, beta2):
    """Mean row norm of F1(up_x) - up_y plus mean row norm of F2(up_y) - up_x,
    with F_k an affine map (matrix alpha: full d x d, or a vector for the
    diagonal variant)."""
    return _scale_loss(
        np.asarray(up_x, float),
        np.asarray(up_y, float),
        np.asarray(alpha1, float),
        np.asarray(beta1, float),
        np.asarray(alpha2, float),
        np.asarray(beta2, float),
    )[0]


def reconstruction_loss(u, u_hat):
    """Mean row norm of u - u_hat for one domain's round trip; the training
    objective sums this over both domains."""
    u = np.asarray(u, float)
    u_hat = np.asarray(u_hat, float)
    if u.shape != u_hat.shape:
        raise ValueError("paired batches must share a shape")
    return float(np.linalg.norm(u - u_hat, axis=1).mean())


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    l2: float
    l3: float
    lambdas: tuple
    total: float


def total_loss(l1, l2, l3, lambdas):
    """Weighted sum; a zero lambda disables a term but it is still reported."""
    if len(lambdas) != 3:
        raise ValueError("lambdas must have three entries")
    lam = tuple(float(v) for v in lambdas)
    if any(v < 0 for v in lam):
        raise ValueError("lambdas must be >= 0")
    total = lam[0] * l1 + lam[1] * l2 + lam[2] * l3
    return LossBreakdown(l1=float(l1), l2=float(l2), l3=float(l3), lambdas=lam, total=float(total))


@dataclass(frozen=True)
class AdapterHyper:
    hidden: int | None = None  # defaults to 2 * dim at build time
    tau: float = 0.2
    lambdas: tuple = (1.0, 1.0, 1.0)
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10  # 0 disables validation early stopping
    scale_mode: str = "full"  # alpha maps: "full" matrix or "diagonal"
    seed: int = 0

    def __post_init__(self):
        if self.hidden is not None and self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if len(self.lambdas) != 3 or any(v < 0 for v in self.lambdas):
            raise ValueError("lambdas must be three values >= 0")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size, max_epochs must be positive")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.scale_mode not in ("full", "diagonal"):
            raise ValueError(f"unknown scale_mode {self.scale_mode!r}")


class AdapterParams:
    """Per-domain priors and decoders plus the training-only scale maps."""

    def __init__(self, domain_x, domain_y, dim, hidden, priors, decoders,
                 alpha1, beta1, alpha2, beta2, tau, lambdas, scale_mode):
        self.domain_x = str(domain_x)
        self.domain_y = str(domain_y)
        self.dim = int(dim)
        self.hidden = int(hidden)
        self.priors = priors  # {domain_id: FeedForward}
        self.decoders = decoders
        self.alpha1 = alpha1
        self.beta1 = beta1
        self.alpha2 = alpha2
        self.beta2 = beta2
        self.tau = float(tau)
        self.lambdas = tuple(float(v) for v in lambdas)
        self.scale_mode = scale_mode
        self.history = None  # set by train_adapter

    @classmethod
    def build(cls, domain_x, domain_y, dim, hyper, rng):
        hidden = hyper.hidden if hyper.hidden is not None else 2 * dim
        priors = {
            domain_x: FeedForward(dim, hidden, dim, rng),
            domain_y: FeedForward(dim, hidden, dim, rng),
        }
        decoders = {
            domain_x: FeedForward(dim, hidden, dim, rng),
            domain_y: FeedForward(dim, hidden, dim, rng),
        }
        if hyper.scale_mode == "full":
            alpha1, alpha2 = np.eye(dim), np.eye(dim)
        else:
            alpha1, alpha2 = np.ones(dim), np.ones(dim)
        return cls(
            domain_x, domain_y, dim, hidden, priors, decoders,
            alpha1, np.zeros(dim), alpha2, np.zeros(dim),
            hyper.tau, hyper.lambdas, hyper.scale_mode,
        )

    def blocks(self):
        """Stable ordered (name, array) pairs covering every parameter."""
        out = []
        for role, net in (
            ("prior_x", self.priors[self.domain_x]),
            ("prior_y", self.priors[self.domain_y]),
            ("decoder_x", self.decoders[self.domain_x]),
            ("decoder_y", self.decoders[self.domain_y]),
        ):
            for name, arr in net.params():
                out.append((f"{role}.{name}", arr))
        out.extend(
            [
                ("scale.alpha1", self.alpha1),
                ("scale.beta1", self.beta1),
                ("scale.alpha2", self.alpha2),
                ("scale.beta2", self.beta2),
            ]
        )
        return out

    def copy(self):
        dup = AdapterParams(
            self.domain_x, self.domain_y, self.dim, self.hidden,
            {d: net.copy() for d, net in self.priors.items()},
            {d: net.copy() for d, net in self.decoders.items()},
            self.alpha1.copy(), self.beta1.copy(),
            self.alpha2.copy(), self.beta2.copy(),
            self.tau, self.lambdas, self.scale_mode,
        )
        return dup

    def domains(self):
        return (self.domain_x, self.domain_y)


def _merge_grads(a, b):
    return {name: a[name] + b[name] for name in a}


def adapter_losses(params, ux, uy, want_grads=False, recon_x=None, recon_y=None):
    """Forward (and optionally backward) pass for one training step.

    `ux`/`uy` is a batch of paired overlap users feeding the contrastive and
    scale terms. The reconstruction term runs on `recon_x`/`recon_y` when
    given (unpaired, sizes may differ); otherwise it reuses the paired batch.
    Returns (LossBreakdown, grads dict keyed like `blocks()` or None).
    """
    if (recon_x is None) != (recon_y is None):
        raise ValueError("recon_x and recon_y must be given together")
    if recon_x is None:
        recon_x, recon_y = ux, uy
    lam1, lam2, lam3 = params.lambdas
    prior_x = params.priors[params.domain_x]
    prior_y = params.priors[params.domain_y]
    dec_x = params.decoders[params.domain_x]
    dec_y = params.decoders[params.domain_y]

    upx, cache_px = prior_x.forward(ux)
    upy, cache_py = prior_y.forward(uy)
    rpx, cache_rx = prior_x.forward(recon_x)
    rpy, cache_ry = prior_y.forward(recon_y)
    hatx, cache_dx = dec_x.forward(rpx)
    haty, cache_dy = dec_y.forward(rpy)

    l1_fwd, da_fwd, db_fwd = _infonce(upx, upy, params.tau, want_grads)
    l1_rev, da_rev, db_rev = _infonce(upy, upx, params.tau, want_grads)
    l1 = 0.5 * (l1_fwd + l1_rev)

    l2, scale_grads = _scale_loss(
        upx, upy, params.alpha1, params.beta1, params.alpha2, params.beta2, want_grads
    )

    l3x, gx = _row_norm_grads(recon_x - hatx, recon_x.shape[0])
    l3y, gy = _row_norm_grads(recon_y - haty, recon_y.shape[0])
    l3 = l3x + l3y

    breakdown = total_loss(l1, l2, l3, params.lambdas)
    if not want_grads:
        return breakdown, None

    # d loss / d reconstruction = -residual direction
    d_dec_in_x, g_dec_x = dec_x.backward(cache_dx, -lam3 * gx)
    d_dec_in_y, g_dec_y = dec_y.backward(cache_dy, -lam3 * gy)

    dupx = lam1 * 0.5 * (da_fwd + db_rev) + lam2 * scale_grads["dx"]
    dupy = lam1 * 0.5 * (db_fwd + da_rev) + lam2 * scale_grads["dy"]
    _, g_pri_x = prior_x.backward(cache_px, dupx)
    _, g_pri_y = prior_y.backward(cache_py, dupy)
    _, g_rec_x = prior_x.backward(cache_rx, d_dec_in_x)
    _, g_rec_y = prior_y.backward(cache_ry, d_dec_in_y)

    grads = {}
    for role, g in (
        ("prior_x", _merge_grads(g_pri_x, g_rec_x)),
        ("prior_y", _merge_grads(g_pri_y, g_rec_y)),
        ("decoder_x", g_dec_x),
        ("decoder_y", g_dec_y),
    ):
        for name, arr in g.items():
            grads[f"{role}.{name}"] = arr
    grads["scale.alpha1"] = lam2 * scale_grads["alpha1"]
    grads["scale.beta1"] = lam2 * scale_grads["beta1"]
    grads["scale.alpha2"] = lam2 * scale_grads["alpha2"]
    grads["scale.beta2"] = lam2 * scale_grads["beta2"]
    return breakdown, grads


def _resolve_tables(tables, domain_x, domain_y):
    if isinstance(tables, dict):
        by_id = dict(tables)
    else:
        by_id = {t.domain_id: t for t in tables}
    try:
        return by_id[domain_x], by_id[domain_y]
    except KeyError as err:
        raise ValueError(f"no table for domain {err.args[0]!r}") from None


def transfer_vector(params, u, source, target):
    """decoder_target(prior_source(u)) for a single embedding vector."""
    if {source, target} != {params.domain_x, params.domain_y} or source == target:
        raise ValueError(f"bad direction {source!r}->{target!r} for domains {params.domains()}")
    x = np.asarray(u, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != params.dim:
        raise ValueError(f"expected dim {params.dim}, got {x.shape[1]}")
    aligned = params.priors[source].apply(x)
    return params.decoders[target].apply(aligned)[0]


def transfer(params, tables, user, source, target):
    """Cold-start inference for `user` (index in the source domain)."""
    src_table, _ = _resolve_tables(tables, source, target)
    if not (0 <= user < src_table.num_users):
        raise IndexError(f"user index {user} out of range [0, {src_table.num_users})")
    return transfer_vector(params, src_table.user_embeddings[user], source, target)


def cascade(params_ab, params_bc, u):
    """Two-hop transfer A->B->C: the reconstructed B representation feeds the
    B-side prior of the second adapter. Equals composing the two transfers."""
    shared = params_ab.domain_y
    if params_bc.domain_x != shared:
        raise ValueError(
            f"chain mismatch: first adapter ends at {shared!r}, "
            f"second starts at {params_bc.domain_x!r}"
        )
    mid = transfer_vector(params_ab, u, params_ab.domain_x, shared)
    return transfer_vector(params_bc, mid, shared, params_bc.domain_y)


def _validation_hr(params, tables, split, k=10):
    has_val = split.val_x_to_y or split.val_y_to_x
    if not has_val:
        return None
    def infer(user, source, target):
        return transfer(params, tables, user, source, target)
    result = evaluation.evaluate_cold_start(
        infer, tables, split, ks=(k,), cohort="validation"
    )
    return result.macro.hr[k]


class _PopulationBatches:
    """Endless seeded-shuffle batches over one domain's full user table."""

    def __init__(self, rows, batch_size, rng):
        self.rows = rows
        self.batch_size = batch_size
        self.rng = rng
        self.perm = None  # filled by the first reshuffle
        self.cursor = 0

    def reshuffle(self):
        self.perm = self.rng.permutation(self.rows.shape[0])
        self.cursor = 0

    def next(self):
        if self.cursor + self.batch_size > self.rows.shape[0]:
            self.reshuffle()
        batch = self.rows[self.perm[self.cursor : self.cursor + self.batch_size]]
        self.cursor += self.batch_size
        return batch


def train_adapter(tables, split, hyper):
    """Mini-batch training over the split's overlap users.

    Both tables must be frozen. Contrastive and scale terms train on paired
    overlap batches (batches of one are dropped since the contrastive term is
    undefined); the reconstruction term trains on batches drawn from every
    user of each domain, so its signal does not shrink with the overlap.
    Early stopping tracks validation HR@10 with the given patience and
    restores the best parameters.
    """
    table_x, table_y = _resolve_tables(tables, split.domain_x, split.domain_y)
    for t in (table_x, table_y):
        if not t.frozen:
            raise FrozenTableError(f"{t.domain_id}: backbone must be frozen before adapter training")
    if table_x.dim != table_y.dim:
        raise ValueError("backbone dims differ")
    xs, ys = split.train_pairs()
    n = xs.shape[0]
    if n == 0:
        raise TrainingInfeasibleError("no training overlap users")
    ux_all = table_x.user_embeddings[xs]
    uy_all = table_y.user_embeddings[ys]

    rng = np.random.default_rng(hyper.seed)
    params = AdapterParams.build(split.domain_x, split.domain_y, table_x.dim, hyper, rng)
    names = [name for name, _ in params.blocks()]
    opt = Adam([arr for _, arr in params.blocks()], lr=hyper.learning_rate)

    best = None
    best_hr = -1.0
    stale = 0
    history = []
    pop_x = _PopulationBatches(table_x.user_embeddings, hyper.batch_size, rng)
    pop_y = _PopulationBatches(table_y.user_embeddings, hyper.batch_size, rng)
    for epoch in range(1, hyper.max_epochs + 1):
        perm = rng.permutation(n)
        pop_x.reshuffle()
        pop_y.reshuffle()
        sums = np.zeros(4)
        used = 0
        for start in range(0, n, hyper.batch_size):
            batch = perm[start : start + hyper.batch_size]
            if batch.size == 1:
                log.warning("adapter epoch %d: dropping size-1 batch", epoch)
                continue
            breakdown, grads = adapter_losses(
                params, ux_all[batch], uy_all[batch], True,
                recon_x=pop_x.next(), recon_y=pop_y.next(),
            )
            opt.step([grads[name] for name in names])
            sums += np.array([breakdown.l1, breakdown.l2, breakdown.l3, breakdown.total]) * batch.size
            used += batch.size
        if used == 0:
            raise TrainingInfeasibleError(
                "every batch was degenerate (need >= 2 overlap users per batch)"
            )
        epoch_breakdown = LossBreakdown(
            l1=sums[0] / used, l2=sums[1] / used, l3=sums[2] / used,
            lambdas=params.lambdas, total=sums[3] / used,
        )
        if not np.isfinite(epoch_breakdown.total):
            raise DivergenceError("adapter", epoch, epoch_breakdown.total)
        val_hr = None
        if hyper.patience > 0:
            val_hr = _validation_hr(params, (table_x, table_y), split)
        history.append({"epoch": epoch, "loss": epoch_breakdown, "val_hr": val_hr})
        log.debug(
            "adapter epoch %d total %.6f (l1 %.4f l2 %.4f l3 %.4f) val_hr %s",
            epoch, epoch_breakdown.total, epoch_breakdown.l1,
            epoch_breakdown.l2, epoch_breakdown.l3, val_hr,
        )
        if val_hr is not None:
            if val_hr > best_hr + 1e-12:
                best_hr = val_hr
                best = params.copy()
                stale = 0
            else:
                stale += 1
                if stale >= hyper.patience:
                    log.info("adapter: early stop at epoch %d (best val HR@10 %.4f)", epoch, best_hr)
                    break
    out = best if best is not None else params
    out.history = history
    return out
