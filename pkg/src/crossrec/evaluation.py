"""Leave-one-out ranking evaluation and latent-space diagnostics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyCohortError

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8


def hr_at_k(rank, k):
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank, k):
    return 1.0 / math.log2(rank + 1.0) if rank <= k else 0.0


def mrr_from_rank(rank):
    return 1.0 / rank


@dataclass(frozen=True)
class RankingMetrics:
    hr: dict  # k -> value
    ndcg: dict
    mrr: float
    n_users: int

    def validate(self):
        ks = sorted(self.hr)
        if sorted(self.ndcg) != ks:
            raise ValueError("hr and ndcg must cover the same cutoffs")
        for k in ks:
            if not (0.0 <= self.hr[k] <= 1.0 and 0.0 <= self.ndcg[k] <= 1.0):
                raise ValueError(f"metric at k={k} outside [0, 1]")
            if self.ndcg[k] > self.hr[k] + 1e-12:
                raise ValueError(f"ndcg@{k} exceeds hr@{k}")
        for lo, hi in zip(ks, ks[1:]):
            if self.hr[lo] > self.hr[hi] + 1e-12:
                raise ValueError("hr must be non-decreasing in k")
        if not (0.0 <= self.mrr <= 1.0):
            raise ValueError("mrr outside [0, 1]")
        return self


def rank_candidates(u_hat, table, candidates, expected_size=1000):
    """Candidates sorted by descending score, ties toward the smaller index.

    `candidates` must hold exactly `expected_size` item indices (pass None to
    accept any size >= 1).
    """
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.ndim != 1 or cand.size < 1:
        raise ValueError("candidates must be a non-empty 1-d index list")
    if expected_size is not None and cand.size != expected_size:
        raise ValueError(f"expected {expected_size} candidates, got {cand.size}")
    if cand.min() < 0 or cand.max() >= table.num_items:
        raise IndexError("candidate item index out of range")
    u_hat = np.asarray(u_hat, dtype=np.float64)
    scores = table.item_embeddings[cand] @ u_hat
    order = np.lexsort((cand, -scores))
    return cand[order]


def rank_of_positive(u_hat, table, positive, negatives):
    """1-based rank of the positive among itself plus the negatives."""
    cand = np.concatenate(([positive], np.asarray(negatives, dtype=np.int64)))
    if cand.min() < 0 or cand.max() >= table.num_items:
        raise IndexError("candidate item index out of range")
    u_hat = np.asarray(u_hat, dtype=np.float64)
    scores = table.item_embeddings[cand] @ u_hat
    s_pos = scores[0]
    ahead = (scores[1:] > s_pos) | ((scores[1:] == s_pos) & (cand[1:] < cand[0]))
    return 1 + int(np.count_nonzero(ahead))


def _metrics_from_ranks(ranks, ks):
    ranks = np.asarray(ranks)
    hr = {k: float(np.mean(ranks <= k)) for k in ks}
    ndcg = {
        k: float(np.mean(np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)))
        for k in ks
    }
    return RankingMetrics(hr=hr, ndcg=ndcg, mrr=float(np.mean(1.0 / ranks)),
                          n_users=int(ranks.size)).validate()


@dataclass(frozen=True)
class ColdStartEval:
    directions: dict  # direction name -> RankingMetrics
    macro: RankingMetrics
    ranks: dict  # direction name -> np.ndarray of 1-based ranks


def evaluate_cold_start(infer, tables, split, ks=(10, 20), cohort="test"):
    """Rank each held-out positive against its fixed negatives.

    `infer(user_index, source_domain, target_domain)` must return the inferred
    target-domain embedding. Results are per direction plus an unweighted
    macro average; nothing is mutated.
    """
    if isinstance(tables, dict):
        by_id = dict(tables)
    else:
        by_id = {t.domain_id: t for t in tables}
    per_direction = {}
    all_ranks = {}
    for direction, source, target in split.directions():
        records = split.records(direction, cohort)
        if not records:
            continue
        table = by_id[target]
        m = split.num_negatives + 1
        cand = np.empty((len(records), m), dtype=np.int64)
        queries = np.empty((len(records), table.dim))
        for row, rec in enumerate(records):
            if rec.negatives is None:
                raise ValueError(
                    f"record for user {rec.user_id!r} has no negatives; run sample_negatives"
                )
            cand[row, 0] = rec.positive_item
            cand[row, 1:] = rec.negatives
            queries[row] = infer(rec.source_user, source, target)
        ranks = kernels.loo_ranks(table.item_embeddings, cand, queries)
        per_direction[direction] = _metrics_from_ranks(ranks, ks)
        all_ranks[direction] = ranks
    if not per_direction:
        raise EmptyCohortError(f"no {cohort} records in either direction")
    macro = RankingMetrics(
        hr={k: float(np.mean([m.hr[k] for m in per_direction.values()])) for k in ks},
        ndcg={k: float(np.mean([m.ndcg[k] for m in per_direction.values()])) for k in ks},
        mrr=float(np.mean([m.mrr for m in per_direction.values()])),
        n_users=sum(m.n_users for m in per_direction.values()),
    ).validate()
    return ColdStartEval(directions=per_direction, macro=macro, ranks=all_ranks)


def avg_latent_distance(inferred, ground_truth):
    """Mean Euclidean distance between paired rows."""
    a = np.asarray(inferred, dtype=np.float64)
    b = np.asarray(ground_truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("need at least one paired row")
    return float(np.linalg.norm(a - b, axis=1).mean())


def _gaussian_kl(mean1, var1, mean2, var2):
    return 0.5 * (np.log(var2 / var1) + (var1 + (mean1 - mean2) ** 2) / var2 - 1.0)


def kl_disentanglement(specific, shared):
    """Symmetrized KL between diagonal Gaussians fitted to the two sets,
    summed over dimensions and averaged over the two directions.

    A variance floor of 1e-8 guards degenerate dimensions (flagged in logs).
    """
    a = np.asarray(specific, dtype=np.float64)
    b = np.asarray(shared, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("inputs must be 2-d with aligned columns")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 rows per set to fit variances")
    m1, m2 = a.mean(axis=0), b.mean(axis=0)
    v1, v2 = a.var(axis=0), b.var(axis=0)
    floored = int((v1 < VARIANCE_FLOOR).sum() + (v2 < VARIANCE_FLOOR).sum())
    if floored:
        log.warning("kl_disentanglement: variance floor applied to %d dimension(s)", floored)
    v1 = np.maximum(v1, VARIANCE_FLOOR)
    v2 = np.maximum(v2, VARIANCE_FLOOR)
    forward = _gaussian_kl(m1, v1, m2, v2).sum()
    reverse = _gaussian_kl(m2, v2, m1, v1).sum()
    return float(0.5 * (forward + reverse))
