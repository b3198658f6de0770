"""Ranking metrics, leave-one-out evaluation, latent diagnostics."""
import logging
import math

import numpy as np
import pytest

from _oracles import (
    naive_gaussian_kl_sym,
    naive_hr,
    naive_mrr,
    naive_ndcg,
    naive_rank,
)
from crossrec import data, evaluation, mf
from crossrec.errors import EmptyCohortError


# ---------------------------------------------------------------------------
# closed forms

def test_metric_closed_forms():
    for rank in (1, 2, 5, 10, 11, 500):
        for k in (1, 10, 20):
            assert evaluation.hr_at_k(rank, k) == naive_hr(rank, k)
            assert evaluation.ndcg_at_k(rank, k) == pytest.approx(naive_ndcg(rank, k))
        assert evaluation.mrr_from_rank(rank) == pytest.approx(naive_mrr(rank))
    assert evaluation.ndcg_at_k(1, 10) == 1.0
    assert evaluation.ndcg_at_k(2, 10) == pytest.approx(1.0 / math.log2(3.0))
    assert evaluation.hr_at_k(11, 10) == 0.0
    assert evaluation.ndcg_at_k(11, 10) == 0.0


def test_ranking_metrics_validation():
    good = evaluation.RankingMetrics(hr={10: 0.5, 20: 0.7}, ndcg={10: 0.3, 20: 0.4},
                                     mrr=0.25, n_users=10)
    assert good.validate() is good
    with pytest.raises(ValueError, match="non-decreasing"):
        evaluation.RankingMetrics(hr={10: 0.7, 20: 0.5}, ndcg={10: 0.3, 20: 0.3},
                                  mrr=0.2, n_users=1).validate()
    with pytest.raises(ValueError, match="exceeds"):
        evaluation.RankingMetrics(hr={10: 0.5}, ndcg={10: 0.6}, mrr=0.2, n_users=1).validate()
    with pytest.raises(ValueError, match="mrr"):
        evaluation.RankingMetrics(hr={10: 0.5}, ndcg={10: 0.3}, mrr=1.2, n_users=1).validate()
    with pytest.raises(ValueError, match="cutoffs"):
        evaluation.RankingMetrics(hr={10: 0.5}, ndcg={20: 0.3}, mrr=0.2, n_users=1).validate()


# ---------------------------------------------------------------------------
# ranking

def test_rank_of_positive_matches_sort_oracle(rng):
    # quantized embeddings make score ties common; 500 random instances
    table = mf.EmbeddingTable(
        "d",
        rng.integers(-2, 3, size=(4, 3)).astype(float),
        rng.integers(-2, 3, size=(50, 3)).astype(float),
    )
    for _ in range(500):
        u_hat = rng.integers(-2, 3, size=3).astype(float)
        cand = rng.permutation(50)[:12]
        positive, negatives = int(cand[0]), cand[1:]
        got = evaluation.rank_of_positive(u_hat, table, positive, negatives)
        scores = [float(u_hat @ table.item_embeddings[c]) for c in cand]
        assert got == naive_rank(scores, list(cand), 0)


def test_rank_candidates_ordering(rng):
    table = mf.EmbeddingTable("d", rng.normal(size=(2, 2)),
                              np.array([[1.0, 0.0], [3.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))
    u_hat = np.array([1.0, 0.0])  # scores: 1, 3, 1, 2 -> order 1, 3, then tie 0 before 2
    got = evaluation.rank_candidates(u_hat, table, [0, 1, 2, 3], expected_size=4)
    np.testing.assert_array_equal(got, [1, 3, 0, 2])
    with pytest.raises(ValueError, match="expected 1000"):
        evaluation.rank_candidates(u_hat, table, [0, 1, 2])
    with pytest.raises(IndexError):
        evaluation.rank_candidates(u_hat, table, [0, 9], expected_size=2)


def test_random_scores_rank_uniformly(rng):
    # 999 random negatives + an unrelated positive: ranks should be uniform
    # on 1..1000, so the mean sits near 500.5 and HR@10 near 1%.
    n_records, n_items, d = 1500, 1100, 8
    item_emb = rng.normal(size=(n_items, d))
    queries = rng.normal(size=(n_records, d))
    cand = np.stack([rng.permutation(n_items)[:1000] for _ in range(n_records)]).astype(np.int64)
    from crossrec import kernels
    ranks = kernels.loo_ranks(item_emb, cand, queries)
    assert abs(float(ranks.mean()) - 500.5) < 25.0
    hr10 = float(np.mean(ranks <= 10))
    assert 0.002 <= hr10 <= 0.02


# ---------------------------------------------------------------------------
# cold-start evaluation

def _eval_setup(rng, n_users=30, n_items=40, dim=5, num_negatives=15):
    lat = rng.normal(size=(n_users, dim))
    table_x = mf.EmbeddingTable("X", lat, rng.normal(size=(n_items, dim))).freeze()
    table_y = mf.EmbeddingTable("Y", rng.normal(size=(n_users, dim)),
                                rng.normal(size=(n_items, dim))).freeze()
    rows = tuple((f"s{k:04d}", k, k) for k in range(n_users))

    def build_records(indices, table):
        records = []
        for k in indices:
            pos = int(rng.integers(n_items))
            pool = np.setdiff1d(np.arange(n_items), [pos])
            negs = np.sort(rng.choice(pool, size=num_negatives, replace=False))
            records.append(data.ColdStartRecord(f"s{k:04d}", k, k, pos, negs))
        return tuple(records)

    split = data.CdrSplit(
        domain_x="X", domain_y="Y", seed=0, eta=1.0, coldstart_frac=0.2,
        num_negatives=num_negatives, overlap=rows, eligible=rows[:20],
        train_overlap=rows[:20],
        test_x_to_y=build_records(range(20, 24), table_y),
        val_x_to_y=build_records(range(24, 26), table_y),
        test_y_to_x=build_records(range(26, 29), table_x),
        val_y_to_x=build_records(range(29, 30), table_x),
    )
    return table_x, table_y, split


def test_evaluate_cold_start_matches_per_record_recomputation(rng):
    table_x, table_y, split = _eval_setup(rng)
    tables = {"X": table_x, "Y": table_y}
    probe = np.arange(5, dtype=float)

    def infer(user, source, target):
        return probe * (user + 1) * (1.0 if target == "Y" else -1.0)

    result = evaluation.evaluate_cold_start(infer, tables, split, ks=(5, 10))
    for direction, source, target in split.directions():
        records = split.records(direction, "test")
        table = tables[target]
        ranks = [
            evaluation.rank_of_positive(
                infer(r.source_user, source, target), table, r.positive_item, r.negatives
            )
            for r in records
        ]
        np.testing.assert_array_equal(result.ranks[direction], ranks)
        m = result.directions[direction]
        assert m.n_users == len(records)
        for k in (5, 10):
            assert m.hr[k] == pytest.approx(np.mean([naive_hr(r, k) for r in ranks]))
            assert m.ndcg[k] == pytest.approx(np.mean([naive_ndcg(r, k) for r in ranks]))
        assert m.mrr == pytest.approx(np.mean([naive_mrr(r) for r in ranks]))
    # macro = unweighted mean over the two directions
    for k in (5, 10):
        want = 0.5 * (result.directions["x_to_y"].hr[k] + result.directions["y_to_x"].hr[k])
        assert result.macro.hr[k] == pytest.approx(want)
    assert result.macro.n_users == 7


def test_evaluate_cold_start_validation_cohort(rng):
    table_x, table_y, split = _eval_setup(rng)

    def infer(user, source, target):
        return np.ones(5)

    res = evaluation.evaluate_cold_start(
        infer, (table_x, table_y), split, ks=(10,), cohort="validation"
    )
    assert res.directions["x_to_y"].n_users == 2
    assert res.directions["y_to_x"].n_users == 1


def test_evaluate_cold_start_requires_negatives(rng):
    table_x, table_y, split = _eval_setup(rng)
    import dataclasses
    bare = dataclasses.replace(
        split,
        test_x_to_y=tuple(
            dataclasses.replace(r, negatives=None) for r in split.test_x_to_y
        ),
    )
    with pytest.raises(ValueError, match="negatives"):
        evaluation.evaluate_cold_start(
            lambda u, s, t: np.ones(5), (table_x, table_y), bare, ks=(10,)
        )


def test_evaluate_cold_start_empty_cohort(rng):
    table_x, table_y, split = _eval_setup(rng)
    import dataclasses
    empty = dataclasses.replace(split, test_x_to_y=(), test_y_to_x=())
    with pytest.raises(EmptyCohortError):
        evaluation.evaluate_cold_start(
            lambda u, s, t: np.ones(5), (table_x, table_y), empty, ks=(10,)
        )


def test_evaluate_cold_start_single_direction(rng):
    table_x, table_y, split = _eval_setup(rng)
    import dataclasses
    one_way = dataclasses.replace(split, test_y_to_x=())
    res = evaluation.evaluate_cold_start(
        lambda u, s, t: np.ones(5), (table_x, table_y), one_way, ks=(10,)
    )
    assert list(res.directions) == ["x_to_y"]
    assert res.macro.hr[10] == res.directions["x_to_y"].hr[10]


def test_oracle_transfer_tops_noise_free_ranking():
    # an oracle that returns the true target latent should rank the held-out
    # positive (a top-quantile item by construction) above every negative
    cfg = data.SyntheticConfig(
        users_per_domain=80, items_per_domain=300, latent_dim=8,
        overlap_fraction=0.5, noise_std=0.0, positive_quantile=0.05,
        transform="identity",
    )
    datasets, truth = data.generate_synthetic(cfg, seed=3)
    ds_x, ds_y = datasets
    split = data.make_cdr_split(ds_x, ds_y, seed=1, num_negatives=200)
    split = data.sample_negatives(split, ds_y, seed=2)
    split = data.sample_negatives(split, ds_x, seed=2)
    tables = {
        "X": mf.EmbeddingTable("X", truth.user_latents["X"], truth.item_latents["X"]).freeze(),
        "Y": mf.EmbeddingTable("Y", truth.user_latents["Y"], truth.item_latents["Y"]).freeze(),
    }

    def oracle(user, source, target):
        # identity transforms, no noise: source latent equals target latent
        return truth.user_latents[source][user]

    result = evaluation.evaluate_cold_start(oracle, tables, split, ks=(10,))
    assert result.macro.hr[10] >= 0.9


# ---------------------------------------------------------------------------
# latent diagnostics

def test_avg_latent_distance(rng):
    a = np.array([[0.0, 0.0], [3.0, 4.0]])
    b = np.array([[1.0, 0.0], [3.0, 4.0]])
    assert evaluation.avg_latent_distance(a, b) == pytest.approx(0.5)
    with pytest.raises(ValueError, match="shape"):
        evaluation.avg_latent_distance(a, b[:1])
    with pytest.raises(ValueError):
        evaluation.avg_latent_distance(np.empty((0, 2)), np.empty((0, 2)))


def test_kl_disentanglement_identical_sets_is_zero(rng):
    a = rng.normal(size=(50, 4))
    assert evaluation.kl_disentanglement(a, a.copy()) == pytest.approx(0.0, abs=1e-12)


def test_kl_disentanglement_hand_value():
    # unit-variance 1-d sets with means 0 and 2: each direction's KL is 2.0
    specific = np.array([[-1.0], [1.0]])
    shared = np.array([[1.0], [3.0]])
    assert evaluation.kl_disentanglement(specific, shared) == pytest.approx(2.0, abs=1e-12)


def test_kl_disentanglement_matches_naive(rng):
    for _ in range(5):
        a = rng.normal(loc=rng.normal(), scale=rng.uniform(0.5, 2.0), size=(40, 6))
        b = rng.normal(loc=rng.normal(), scale=rng.uniform(0.5, 2.0), size=(35, 6))
        got = evaluation.kl_disentanglement(a, b)
        want = naive_gaussian_kl_sym(a, b)
        assert got == pytest.approx(want, rel=1e-10)


def test_kl_disentanglement_floors_degenerate_variance(rng, caplog):
    a = rng.normal(size=(20, 3))
    b = rng.normal(size=(20, 3))
    b[:, 1] = 7.0  # zero variance dimension
    with caplog.at_level(logging.WARNING, logger="crossrec.evaluation"):
        value = evaluation.kl_disentanglement(a, b)
    assert np.isfinite(value)
    assert any("variance floor" in rec.message for rec in caplog.records)


def test_kl_disentanglement_input_validation(rng):
    with pytest.raises(ValueError, match="aligned"):
        evaluation.kl_disentanglement(rng.normal(size=(5, 3)), rng.normal(size=(5, 4)))
    with pytest.raises(ValueError, match="2 rows"):
        evaluation.kl_disentanglement(rng.normal(size=(1, 3)), rng.normal(size=(5, 3)))
