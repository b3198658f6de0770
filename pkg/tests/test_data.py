"""Loading, filtering, splits, negatives, serialization, synthetic corpora."""
import json

import numpy as np
import pytest

from _oracles import naive_filter
from conftest import make_dataset
from crossrec import data
from crossrec.errors import (
    DegenerateDatasetError,
    EmptyDatasetError,
    ParseError,
    SamplingInfeasibleError,
    SplitInfeasibleError,
)


# ---------------------------------------------------------------------------
# loading

def test_load_tab_separated(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("alice\tbook1\nbob\tbook2\nalice\tbook2\n")
    ds = data.load_interactions(p, "books")
    assert ds.domain_id == "books"
    assert ds.user_ids == ["alice", "bob"]
    assert ds.item_ids == ["book1", "book2"]
    assert ds.num_interactions == 3
    assert ds.pair_set() == {(0, 0), (0, 1), (1, 1)}


def test_load_comma_with_extra_columns(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("u1,i1,5.0,1234\nu2,i2,3.0,1235\n")
    ds = data.load_interactions(p, "d")
    assert ds.num_interactions == 2
    assert ds.user_ids == ["u1", "u2"]


def test_load_whitespace_and_blank_lines(tmp_path):
    p = tmp_path / "x.dat"
    p.write_text("u1 i1\n\n   \nu1   i2\n")
    ds = data.load_interactions(p, "d")
    assert ds.pair_set() == {(0, 0), (0, 1)}


def test_load_collapses_duplicates(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("a\ti\na\ti\na\ti\nb\ti\n")
    ds = data.load_interactions(p, "d")
    assert ds.num_interactions == 2


def test_load_first_appearance_indexing(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("zed\tz9\nann\ta1\nzed\ta1\n")
    ds = data.load_interactions(p, "d")
    assert ds.user_ids == ["zed", "ann"]
    assert ds.item_ids == ["z9", "a1"]


def test_load_malformed_line_reports_position(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("a\ti1\njusttoken\n")
    with pytest.raises(ParseError) as exc:
        data.load_interactions(p, "d")
    assert exc.value.line_no == 2
    assert str(p) in str(exc.value)


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.tsv"
    p.write_text("\n\n")
    with pytest.raises(EmptyDatasetError):
        data.load_interactions(p, "d")


def test_dataset_validation_rejects_bad_pairs():
    with pytest.raises(ValueError, match="out of range"):
        make_dataset("d", [(0, 0), (5, 0)], num_users=2, num_items=1)
    with pytest.raises(ValueError, match="duplicate interaction"):
        data.InteractionDataset("d", ["a"], ["x"], [(0, 0), (0, 0)])
    with pytest.raises(ValueError, match="duplicate user"):
        data.InteractionDataset("d", ["a", "a"], ["x"], [(0, 0)])


def test_positives_are_sorted_per_user():
    ds = make_dataset("d", [(0, 3), (0, 1), (0, 2), (1, 0)])
    np.testing.assert_array_equal(ds.positives_of(0), [1, 2, 3])
    np.testing.assert_array_equal(ds.positives_of(1), [0])


# ---------------------------------------------------------------------------
# filtering

def test_filter_matches_naive_fixed_point(rng):
    pairs = {(int(u), int(i)) for u, i in zip(rng.integers(0, 40, 400), rng.integers(0, 30, 400))}
    ds = make_dataset("d", list(pairs), num_users=40, num_items=30)
    out = data.filter_min_counts(ds, min_item_interactions=3, min_user_interactions=2)
    expected = naive_filter(pairs, min_item=3, min_user=2)
    got = {(out.user_ids[u], out.item_ids[i]) for u, i in out.pairs}
    want = {(ds.user_ids[u], ds.item_ids[i]) for u, i in expected}
    assert got == want


def test_filter_cascades():
    # Item 2 is rare and goes first; that starves user 2, whose removal in
    # turn starves item 3, after which user 3 still clears the bar. Users 0
    # and 1 with items 0 and 1 form a stable core.
    pairs = [
        (0, 0), (0, 1),
        (1, 0), (1, 1),
        (2, 2), (2, 3),
        (3, 3), (3, 0), (3, 1),
    ]
    ds = make_dataset("d", pairs)
    out = data.filter_min_counts(ds, min_item_interactions=2, min_user_interactions=2)
    got = {(out.user_ids[u], out.item_ids[i]) for u, i in out.pairs}
    assert got == {
        ("u00000", "d_i00000"), ("u00000", "d_i00001"),
        ("u00001", "d_i00000"), ("u00001", "d_i00001"),
        ("u00003", "d_i00000"), ("u00003", "d_i00001"),
    }
    assert out.user_ids == ["u00000", "u00001", "u00003"]


def test_filter_idempotent(rng):
    pairs = {(int(u), int(i)) for u, i in zip(rng.integers(0, 25, 300), rng.integers(0, 20, 300))}
    ds = make_dataset("d", list(pairs), num_users=25, num_items=20)
    once = data.filter_min_counts(ds, 3, 2)
    twice = data.filter_min_counts(once, 3, 2)
    assert once.user_ids == twice.user_ids
    assert once.item_ids == twice.item_ids
    np.testing.assert_array_equal(once.pairs, twice.pairs)


def test_filter_preserves_id_order(rng):
    pairs = {(int(u), int(i)) for u, i in zip(rng.integers(0, 30, 400), rng.integers(0, 25, 400))}
    ds = make_dataset("d", list(pairs), num_users=30, num_items=25)
    out = data.filter_min_counts(ds, 3, 2)
    orig_user_pos = {uid: k for k, uid in enumerate(ds.user_ids)}
    kept = [orig_user_pos[uid] for uid in out.user_ids]
    assert kept == sorted(kept)


def test_filter_degenerate():
    ds = make_dataset("d", [(0, 0), (1, 1)])
    with pytest.raises(DegenerateDatasetError):
        data.filter_min_counts(ds, min_item_interactions=5, min_user_interactions=5)


# ---------------------------------------------------------------------------
# splits

def _paired_domains(n_shared, n_items=50, extra_x=0, extra_y=0):
    """Two domains sharing exactly n_shared user ids, one interaction per user."""
    uids_x = [f"s{k:05d}" for k in range(n_shared)] + [f"x{k:05d}" for k in range(extra_x)]
    uids_y = [f"s{k:05d}" for k in range(n_shared)] + [f"y{k:05d}" for k in range(extra_y)]
    pairs_x = [(k, k % n_items) for k in range(len(uids_x))]
    pairs_y = [(k, (k * 7 + 1) % n_items) for k in range(len(uids_y))]
    ds_x = data.InteractionDataset(
        "X", uids_x, [f"X_i{k:05d}" for k in range(n_items)], pairs_x
    )
    ds_y = data.InteractionDataset(
        "Y", uids_y, [f"Y_i{k:05d}" for k in range(n_items)], pairs_y
    )
    return ds_x, ds_y


def test_split_sizes_large_overlap():
    # 5644 shared users, 20% held out: 1128 cold-start records, 4516 eligible.
    ds_x, ds_y = _paired_domains(5644)
    split = data.make_cdr_split(ds_x, ds_y, eta=1.0, coldstart_frac=0.2, seed=3)
    assert len(split.overlap) == 5644
    assert len(split.holdout_records()) == 1128
    assert len(split.eligible) == 4516
    assert len(split.train_overlap) == 4516
    assert len(split.test_x_to_y) == 282
    assert len(split.val_x_to_y) == 282
    assert len(split.test_y_to_x) == 282
    assert len(split.val_y_to_x) == 282
    small = data.with_eta(split, 0.05)
    assert len(small.train_overlap) == 226


def test_split_partitions_overlap():
    ds_x, ds_y = _paired_domains(200, extra_x=13, extra_y=7)
    split = data.make_cdr_split(ds_x, ds_y, seed=1)
    assert len(split.overlap) == 200
    held = {r.user_id for r in split.holdout_records()}
    eligible = {row[0] for row in split.eligible}
    assert held & eligible == set()
    assert held | eligible == {row[0] for row in split.overlap}
    xy = {r.user_id for r in split.test_x_to_y + split.val_x_to_y}
    yx = {r.user_id for r in split.test_y_to_x + split.val_y_to_x}
    assert xy & yx == set()
    assert {r.user_id for r in split.test_x_to_y} & {r.user_id for r in split.val_x_to_y} == set()


def test_split_positives_come_from_target_domain():
    ds_x, ds_y = _paired_domains(120)
    split = data.make_cdr_split(ds_x, ds_y, seed=5)
    for rec in split.test_x_to_y + split.val_x_to_y:
        assert rec.positive_item in ds_y.positives_of(rec.target_user)
        assert ds_x.user_ids[rec.source_user] == rec.user_id
        assert ds_y.user_ids[rec.target_user] == rec.user_id
    for rec in split.test_y_to_x + split.val_y_to_x:
        assert rec.positive_item in ds_x.positives_of(rec.target_user)


def test_split_deterministic():
    ds_x, ds_y = _paired_domains(150)
    a = data.make_cdr_split(ds_x, ds_y, seed=9)
    b = data.make_cdr_split(ds_x, ds_y, seed=9)
    assert data.split_to_json(a) == data.split_to_json(b)
    c = data.make_cdr_split(ds_x, ds_y, seed=10)
    assert {r.user_id for r in a.holdout_records()} != {r.user_id for r in c.holdout_records()}


def test_with_eta_gives_nested_prefixes():
    ds_x, ds_y = _paired_domains(300)
    split = data.make_cdr_split(ds_x, ds_y, eta=1.0, seed=2)
    subsets = {}
    for eta in (0.05, 0.2, 0.5, 1.0):
        sub = data.with_eta(split, eta)
        assert len(sub.train_overlap) == int(np.ceil(eta * len(split.eligible)))
        subsets[eta] = [row[0] for row in sub.train_overlap]
    assert subsets[1.0][: len(subsets[0.5])] == subsets[0.5]
    assert subsets[0.5][: len(subsets[0.2])] == subsets[0.2]
    assert subsets[0.2][: len(subsets[0.05])] == subsets[0.05]


def test_split_infeasible_and_bad_args():
    ds_x, ds_y = _paired_domains(5)
    with pytest.raises(SplitInfeasibleError):
        data.make_cdr_split(ds_x, ds_y, coldstart_frac=0.2)
    big_x, big_y = _paired_domains(100)
    with pytest.raises(ValueError, match="eta"):
        data.make_cdr_split(big_x, big_y, eta=0.0)
    with pytest.raises(ValueError, match="eta"):
        data.with_eta(data.make_cdr_split(big_x, big_y), 1.5)
    with pytest.raises(ValueError, match="coldstart_frac"):
        data.make_cdr_split(big_x, big_y, coldstart_frac=1.0)
    with pytest.raises(ValueError, match="differ"):
        data.make_cdr_split(big_x, big_x)


def test_sample_negatives_properties():
    ds_x, ds_y = _paired_domains(100, n_items=40)
    split = data.make_cdr_split(ds_x, ds_y, seed=4, num_negatives=25)
    filled = data.sample_negatives(split, ds_y, seed=7)
    for rec in filled.test_x_to_y + filled.val_x_to_y:
        assert rec.negatives is not None
        assert rec.negatives.size == 25
        assert len(set(rec.negatives.tolist())) == 25
        assert not rec.negatives.flags.writeable
        positives = set(ds_y.positives_of(rec.target_user).tolist())
        assert positives.isdisjoint(rec.negatives.tolist())
        assert rec.positive_item not in rec.negatives
    # untouched direction and input split
    assert all(r.negatives is None for r in filled.test_y_to_x)
    assert all(r.negatives is None for r in split.test_x_to_y)
    again = data.sample_negatives(split, ds_y, seed=7)
    for a, b in zip(filled.test_x_to_y, again.test_x_to_y):
        np.testing.assert_array_equal(a.negatives, b.negatives)


def test_sample_negatives_infeasible():
    ds_x, ds_y = _paired_domains(100, n_items=40)
    split = data.make_cdr_split(ds_x, ds_y, seed=4)
    with pytest.raises(SamplingInfeasibleError):
        data.sample_negatives(split, ds_y, n=40)
    with pytest.raises(ValueError, match="not a domain"):
        data.sample_negatives(split, make_dataset("Z", [(0, 0)]), n=5)


def test_apply_split_strips_target_rows_only():
    ds_x, ds_y = _paired_domains(100, extra_x=10, extra_y=20)
    split = data.make_cdr_split(ds_x, ds_y, seed=6)
    train_x, train_y = data.apply_split(ds_x, ds_y, split)
    assert train_x.num_users == ds_x.num_users
    assert train_y.item_ids == ds_y.item_ids
    for rec in split.test_x_to_y + split.val_x_to_y:
        assert train_y.positives_of(rec.target_user).size == 0
        assert train_x.positives_of(rec.source_user).size > 0
    for rec in split.test_y_to_x + split.val_y_to_x:
        assert train_x.positives_of(rec.target_user).size == 0
        assert train_y.positives_of(rec.source_user).size > 0
    dropped = {r.target_user for r in split.test_x_to_y + split.val_x_to_y}
    kept_rows = ds_y.pairs[~np.isin(ds_y.pairs[:, 0], list(dropped))]
    np.testing.assert_array_equal(train_y.pairs, kept_rows)


# ---------------------------------------------------------------------------
# serialization

def test_split_json_roundtrip():
    ds_x, ds_y = _paired_domains(80, n_items=30)
    split = data.sample_negatives(
        data.make_cdr_split(ds_x, ds_y, eta=0.5, seed=11, num_negatives=10), ds_y
    )
    doc = data.split_to_json(split, ds_x, ds_y)
    back = data.split_from_json(json.loads(json.dumps(doc)))
    assert back.domain_x == "X" and back.domain_y == "Y"
    assert back.eta == split.eta
    assert back.train_overlap == split.train_overlap
    assert len(back.test_x_to_y) == len(split.test_x_to_y)
    for a, b in zip(split.test_x_to_y, back.test_x_to_y):
        assert (a.user_id, a.source_user, a.target_user, a.positive_item) == (
            b.user_id,
            b.source_user,
            b.target_user,
            b.positive_item,
        )
        np.testing.assert_array_equal(a.negatives, b.negatives)
    assert doc["index_maps"]["user_ids_x"] == ds_x.user_ids


def test_split_schema_version_checked():
    ds_x, ds_y = _paired_domains(80)
    doc = data.split_to_json(data.make_cdr_split(ds_x, ds_y))
    doc["schema_version"] = 99
    with pytest.raises(ValueError, match="schema_version"):
        data.split_from_json(doc)


def test_split_file_roundtrip(tmp_path):
    ds_x, ds_y = _paired_domains(60)
    split = data.make_cdr_split(ds_x, ds_y, seed=2)
    p = tmp_path / "split.json"
    data.save_split(p, split, ds_x, ds_y)
    back = data.load_split(p)
    assert data.split_to_json(back) == data.split_to_json(split)


def test_dataset_json_roundtrip(tmp_path):
    ds = make_dataset("d", [(0, 1), (1, 0), (2, 1)])
    p = tmp_path / "ds.json"
    data.save_dataset(p, ds)
    back = data.load_dataset(p)
    assert back.domain_id == ds.domain_id
    assert back.user_ids == ds.user_ids
    assert back.item_ids == ds.item_ids
    np.testing.assert_array_equal(back.pairs, ds.pairs)
    doc = data.dataset_to_json(ds)
    doc["schema_version"] = 0
    with pytest.raises(ValueError, match="schema_version"):
        data.dataset_from_json(doc)


def test_tsv_roundtrip(tmp_path):
    ds = make_dataset("d", [(0, 1), (1, 0), (2, 1), (2, 0)])
    p = tmp_path / "out.tsv"
    data.write_interactions_tsv(p, ds)
    back = data.load_interactions(p, "d")
    orig = {(ds.user_ids[u], ds.item_ids[i]) for u, i in ds.pairs}
    got = {(back.user_ids[u], back.item_ids[i]) for u, i in back.pairs}
    assert got == orig


# ---------------------------------------------------------------------------
# synthetic corpora

def _small_cfg(**kw):
    base = dict(
        num_domains=2,
        users_per_domain=60,
        items_per_domain=40,
        latent_dim=8,
        overlap_fraction=0.5,
        noise_std=0.0,
        positive_quantile=0.05,
        transform="identity",
    )
    base.update(kw)
    return data.SyntheticConfig(**base)


def test_synthetic_shapes_and_positives():
    datasets, truth = data.generate_synthetic(_small_cfg(), seed=1)
    assert [ds.domain_id for ds in datasets] == ["X", "Y"]
    k_pos = 2  # round(0.05 * 40)
    for ds in datasets:
        assert ds.num_users == 60
        assert ds.num_items == 40
        assert ds.num_interactions == 60 * k_pos
        counts = np.bincount(ds.pairs[:, 0], minlength=60)
        assert (counts == k_pos).all()
    assert truth.shared_latents.shape == (60 + 30, 8)


def test_synthetic_positive_quantile_arithmetic():
    cfg = _small_cfg(users_per_domain=50, items_per_domain=500, positive_quantile=0.02)
    datasets, _ = data.generate_synthetic(cfg, seed=1)
    for ds in datasets:
        counts = np.bincount(ds.pairs[:, 0], minlength=ds.num_users)
        assert (counts == 10).all()  # round(0.02 * 500)


def test_synthetic_overlap_via_shared_ids():
    datasets, _ = data.generate_synthetic(_small_cfg(), seed=2)
    shared = data.overlap_user_ids(datasets[0], datasets[1])
    assert len(shared) == 30
    assert shared == [f"u{g:06d}" for g in range(30)]


def test_synthetic_identity_latents_match_across_domains():
    datasets, truth = data.generate_synthetic(_small_cfg(), seed=3)
    lx = truth.user_latents["X"][:30]
    ly = truth.user_latents["Y"][:30]
    np.testing.assert_allclose(lx, ly)
    np.testing.assert_allclose(lx, truth.shared_latents[:30])


def test_synthetic_rotation_is_orthonormal():
    datasets, truth = data.generate_synthetic(_small_cfg(transform="rotation"), seed=4)
    for domain in ("X", "Y"):
        mat, offset = truth.transforms[domain]
        np.testing.assert_allclose(mat.T @ mat, np.eye(8), atol=1e-10)
        core = truth.shared_latents[:30]
        np.testing.assert_allclose(truth.user_latents[domain][:30], core @ mat.T + offset)


def test_synthetic_deterministic():
    a, _ = data.generate_synthetic(_small_cfg(), seed=7)
    b, _ = data.generate_synthetic(_small_cfg(), seed=7)
    for da, db in zip(a, b):
        assert da.user_ids == db.user_ids
        np.testing.assert_array_equal(da.pairs, db.pairs)
    c, _ = data.generate_synthetic(_small_cfg(), seed=8)
    assert not np.array_equal(a[0].pairs, c[0].pairs)


def test_synthetic_config_validation():
    with pytest.raises(ValueError):
        _small_cfg(num_domains=1)
    with pytest.raises(ValueError):
        _small_cfg(overlap_fraction=0.0)
    with pytest.raises(ValueError):
        _small_cfg(transform="shear")
    cfg = _small_cfg(num_domains=3, domain_ids=("A", "B", "C"))
    assert cfg.resolved_domain_ids() == ("A", "B", "C")
    assert _small_cfg(num_domains=3).resolved_domain_ids() == ("A", "B", "C")


def test_align_ground_truth_after_tsv_roundtrip(tmp_path):
    datasets, truth = data.generate_synthetic(_small_cfg(), seed=5)
    ds = datasets[0]
    p = tmp_path / "x.tsv"
    data.write_interactions_tsv(p, ds)
    back = data.load_interactions(p, "X")
    users, items = data.align_ground_truth(truth, back)
    orig_u = {uid: truth.user_latents["X"][k] for k, uid in enumerate(ds.user_ids)}
    for k, uid in enumerate(back.user_ids):
        np.testing.assert_array_equal(users[k], orig_u[uid])
    assert items.shape[0] == back.num_items


def test_chain_splits_exclude_holdout_from_training():
    cfg = _small_cfg(num_domains=3, users_per_domain=80, overlap_fraction=0.6)
    datasets, _ = data.generate_synthetic(cfg, seed=6)
    pair_splits, end_split = data.make_chain_splits(datasets, coldstart_frac=0.2, seed=1)
    assert len(pair_splits) == 2
    assert end_split.domain_x == "A" and end_split.domain_y == "C"
    core = 48  # round(0.6 * 80) users shared by all three domains
    assert len(end_split.test_x_to_y) == int(core * 0.2)
    held = {r.user_id for r in end_split.test_x_to_y}
    for ps in pair_splits:
        assert held.isdisjoint({row[0] for row in ps.train_overlap})
        assert ps.holdout_records() == ()
    with pytest.raises(ValueError, match="three"):
        data.make_chain_splits(datasets[:2])
