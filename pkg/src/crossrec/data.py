"""Interaction datasets: loading, filtering, cross-domain splits, synthetic data."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateDatasetError,
    EmptyDatasetError,
    ParseError,
    SamplingInfeasibleError,
    SplitInfeasibleError,
)

log = logging.getLogger(__name__)

DATASET_SCHEMA_VERSION = 1
SPLIT_SCHEMA_VERSION = 1


class InteractionDataset:
    """Implicit-feedback interactions for one domain.

    User and item indices are dense (0..n-1); the id lists map them back to
    external identifiers. `pairs` is an (n, 2) int64 array of unique
    (user_index, item_index) rows, sorted by (user, item).
    """

    def __init__(self, domain_id, user_ids, item_ids, pairs, check=True):
        self.domain_id = str(domain_id)
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        self.pairs = np.ascontiguousarray(pairs[order])
        self._csr = None
        self._user_index = None
        self._item_index = None
        if check:
            self._check()

    def _check(self):
        if self.pairs.size:
            if self.pairs.min() < 0:
                raise ValueError("negative index in interaction pairs")
            if self.pairs[:, 0].max() >= self.num_users:
                raise ValueError("user index out of range")
            if self.pairs[:, 1].max() >= self.num_items:
                raise ValueError("item index out of range")
            dup = np.all(self.pairs[1:] == self.pairs[:-1], axis=1)
            if dup.any():
                raise ValueError("duplicate interaction pairs")
        if len(set(self.user_ids)) != len(self.user_ids):
            raise ValueError("duplicate user ids")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValueError("duplicate item ids")

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)

    @property
    def num_interactions(self):
        return int(self.pairs.shape[0])

    def __repr__(self):
        return (
            f"InteractionDataset({self.domain_id!r}, users={self.num_users}, "
            f"items={self.num_items}, interactions={self.num_interactions})"
        )

    @property
    def user_index(self):
        if self._user_index is None:
            self._user_index = {uid: k for k, uid in enumerate(self.user_ids)}
        return self._user_index

    @property
    def item_index(self):
        if self._item_index is None:
            self._item_index = {iid: k for k, iid in enumerate(self.item_ids)}
        return self._item_index

    def user_positives(self):
        """CSR view of per-user positives: (indptr, sorted item indices)."""
        if self._csr is None:
            counts = np.bincount(self.pairs[:, 0], minlength=self.num_users)
            indptr = np.zeros(self.num_users + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            # pairs are already sorted by (user, item)
            self._csr = (indptr, np.ascontiguousarray(self.pairs[:, 1]))
        return self._csr

    def positives_of(self, user):
        indptr, items = self.user_positives()
        return items[indptr[user] : indptr[user + 1]]

    def pair_set(self):
        return {(int(u), int(i)) for u, i in self.pairs}


def load_interactions(path, domain_id):
    """Parse a delimited interaction file (user_id, item_id[, rating, ts]).

    The delimiter is sniffed from the first data line (tab, then comma,
    otherwise whitespace). Duplicate pairs collapse; indices are assigned
    densely by first appearance.
    """
    path = Path(path)
    delim = None
    user_ids, item_ids = [], []
    user_index, item_index = {}, {}
    seen = set()
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if delim is None:
                if "\t" in line:
                    delim = "\t"
                elif "," in line:
                    delim = ","
                else:
                    delim = " "  # any whitespace
            fields = [f.strip() for f in (line.split() if delim == " " else line.split(delim))]
            if len(fields) < 2 or not fields[0] or not fields[1]:
                raise ParseError(path, line_no, f"expected 'user{delim}item[...]', got {line!r}")
            uid, iid = fields[0], fields[1]
            u = user_index.get(uid)
            if u is None:
                u = len(user_ids)
                user_index[uid] = u
                user_ids.append(uid)
            i = item_index.get(iid)
            if i is None:
                i = len(item_ids)
                item_index[iid] = i
                item_ids.append(iid)
            if (u, i) not in seen:
                seen.add((u, i))
                pairs.append((u, i))
    if not pairs:
        raise EmptyDatasetError(f"{path}: no interactions")
    return InteractionDataset(domain_id, user_ids, item_ids, np.array(pairs, dtype=np.int64))


def filter_min_counts(ds, min_item_interactions=10, min_user_interactions=5):
    """Iteratively drop under-threshold items then users until a fixed point.

    Surviving indices are re-densified preserving their original order.
    """
    if min_item_interactions < 1 or min_user_interactions < 1:
        raise ValueError("thresholds must be >= 1")
    pairs = ds.pairs
    n_users, n_items = ds.num_users, ds.num_items
    while True:
        before = pairs.shape[0]
        item_counts = np.bincount(pairs[:, 1], minlength=n_items)
        keep_item = item_counts >= min_item_interactions
        pairs = pairs[keep_item[pairs[:, 1]]]
        user_counts = np.bincount(pairs[:, 0], minlength=n_users)
        keep_user = user_counts >= min_user_interactions
        pairs = pairs[keep_user[pairs[:, 0]]]
        if pairs.shape[0] == before:
            break
    if pairs.shape[0] == 0:
        raise DegenerateDatasetError(
            f"{ds.domain_id}: filtering (items>={min_item_interactions}, "
            f"users>={min_user_interactions}) removed everything"
        )
    kept_users = np.unique(pairs[:, 0])
    kept_items = np.unique(pairs[:, 1])
    user_map = np.full(n_users, -1, dtype=np.int64)
    user_map[kept_users] = np.arange(kept_users.size)
    item_map = np.full(n_items, -1, dtype=np.int64)
    item_map[kept_items] = np.arange(kept_items.size)
    new_pairs = np.column_stack((user_map[pairs[:, 0]], item_map[pairs[:, 1]]))
    return InteractionDataset(
        ds.domain_id,
        [ds.user_ids[k] for k in kept_users],
        [ds.item_ids[k] for k in kept_items],
        new_pairs,
    )


@dataclass(frozen=True)
class ColdStartRecord:
    """One held-out overlap user evaluated in a fixed direction."""

    user_id: str
    source_user: int
    target_user: int
    positive_item: int
    negatives: np.ndarray | None = None


@dataclass(frozen=True)
class CdrSplit:
    """Cross-domain split: training overlap plus directional cold-start cohorts.

    `overlap` rows are (external id, index in X, index in Y). `eligible` is the
    overlap minus the cold-start holdout, in seeded-shuffle order so that
    `with_eta` produces nested training subsets; `train_overlap` is its prefix
    of size ceil(eta * len(eligible)).
    """

    domain_x: str
    domain_y: str
    seed: int
    eta: float
    coldstart_frac: float
    num_negatives: int
    overlap: tuple
    eligible: tuple
    train_overlap: tuple
    test_x_to_y: tuple
    val_x_to_y: tuple
    test_y_to_x: tuple
    val_y_to_x: tuple

    def records(self, direction, cohort="test"):
        kind = "val" if cohort in ("val", "validation") else cohort
        key = f"{kind}_{direction}"
        if kind not in ("test", "val") or not hasattr(self, key):
            raise ValueError(f"unknown cohort/direction {cohort!r}/{direction!r}")
        return getattr(self, key)

    def holdout_records(self):
        return self.test_x_to_y + self.val_x_to_y + self.test_y_to_x + self.val_y_to_x

    def train_pairs(self):
        """Training overlap as (x indices, y indices) arrays."""
        if not self.train_overlap:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        xs = np.array([r[1] for r in self.train_overlap], dtype=np.int64)
        ys = np.array([r[2] for r in self.train_overlap], dtype=np.int64)
        return xs, ys

    def directions(self):
        return (
            ("x_to_y", self.domain_x, self.domain_y),
            ("y_to_x", self.domain_y, self.domain_x),
        )


def overlap_user_ids(ds_x, ds_y):
    """External user ids present in both domains, in domain-X index order."""
    y_index = ds_y.user_index
    return [uid for uid in ds_x.user_ids if uid in y_index]


def _sample_positive(rng, ds, user):
    items = ds.positives_of(user)
    if items.size == 0:
        raise SplitInfeasibleError(f"user index {user} has no interactions in {ds.domain_id}")
    return int(items[rng.integers(items.size)])


def make_cdr_split(ds_x, ds_y, eta=1.0, coldstart_frac=0.2, seed=0, num_negatives=999):
    """Hold out a cold-start fraction of overlap users, half per direction.

    Within each direction the first half of the holdout is the test cohort and
    the remainder validation. Of the non-held-out overlap, a seeded-shuffle
    prefix of size ceil(eta * n) trains the transfer maps. Leave-one-out
    positives are sampled here; negatives are filled by `sample_negatives`.
    """
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    if not (0.0 < coldstart_frac < 1.0):
        raise ValueError(f"coldstart_frac must be in (0, 1), got {coldstart_frac}")
    if ds_x.domain_id == ds_y.domain_id:
        raise ValueError("domains must differ")
    shared = overlap_user_ids(ds_x, ds_y)
    if len(shared) < 2.0 / coldstart_frac:
        raise SplitInfeasibleError(
            f"overlap has {len(shared)} users; need at least {2.0 / coldstart_frac:.0f} "
            f"for coldstart_frac={coldstart_frac}"
        )
    x_index, y_index = ds_x.user_index, ds_y.user_index
    overlap = [(uid, x_index[uid], y_index[uid]) for uid in shared]

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(overlap))
    n_hold = int(len(overlap) * coldstart_frac)
    hold_pos = perm[:n_hold]
    eligible_pos = np.sort(perm[n_hold:])
    eligible = [overlap[k] for k in eligible_pos]

    n_xy = (n_hold + 1) // 2
    group_xy = [overlap[k] for k in hold_pos[:n_xy]]
    group_yx = [overlap[k] for k in hold_pos[n_xy:]]

    def build(group, target_ds, src_col, tgt_col):
        records = []
        for row in group:
            pos = _sample_positive(rng, target_ds, row[tgt_col])
            records.append(
                ColdStartRecord(
                    user_id=row[0],
                    source_user=row[src_col],
                    target_user=row[tgt_col],
                    positive_item=pos,
                )
            )
        n_test = (len(records) + 1) // 2
        return tuple(records[:n_test]), tuple(records[n_test:])

    test_xy, val_xy = build(group_xy, ds_y, 1, 2)
    test_yx, val_yx = build(group_yx, ds_x, 2, 1)

    shuffle = rng.permutation(len(eligible))
    eligible_shuffled = tuple(eligible[k] for k in shuffle)
    n_train = math.ceil(eta * len(eligible_shuffled))

    return CdrSplit(
        domain_x=ds_x.domain_id,
        domain_y=ds_y.domain_id,
        seed=seed,
        eta=eta,
        coldstart_frac=coldstart_frac,
        num_negatives=num_negatives,
        overlap=tuple(overlap),
        eligible=eligible_shuffled,
        train_overlap=eligible_shuffled[:n_train],
        test_x_to_y=test_xy,
        val_x_to_y=val_xy,
        test_y_to_x=test_yx,
        val_y_to_x=val_yx,
    )


def with_eta(split, eta):
    """Same split with the training overlap rescaled to ceil(eta * eligible)."""
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    n_train = math.ceil(eta * len(split.eligible))
    return replace(split, eta=eta, train_overlap=split.eligible[:n_train])


def sample_negatives(split, ds_target, n=None, seed=0):
    """Fill negatives for every record whose target domain is `ds_target`.

    Each record draws `n` distinct items uniformly from the target items the
    user never interacted with; requires num_items > n + user positives.
    Returns a new split; the input is untouched.
    """
    if n is None:
        n = split.num_negatives
    if ds_target.domain_id == split.domain_y:
        fields = ("test_x_to_y", "val_x_to_y")
    elif ds_target.domain_id == split.domain_x:
        fields = ("test_y_to_x", "val_y_to_x")
    else:
        raise ValueError(f"{ds_target.domain_id!r} is not a domain of this split")
    rng = np.random.default_rng(seed)
    all_items = np.arange(ds_target.num_items, dtype=np.int64)
    updates = {}
    for field in fields:
        fresh = []
        for rec in getattr(split, field):
            positives = ds_target.positives_of(rec.target_user)
            if ds_target.num_items <= n + positives.size:
                raise SamplingInfeasibleError(
                    f"{ds_target.domain_id}: {ds_target.num_items} items cannot supply "
                    f"{n} negatives for user {rec.user_id!r} with {positives.size} positives"
                )
            pool = np.setdiff1d(all_items, positives, assume_unique=True)
            negs = rng.choice(pool, size=n, replace=False)
            negs.flags.writeable = False
            fresh.append(replace(rec, negatives=negs))
        updates[field] = tuple(fresh)
    return replace(split, num_negatives=n, **updates)


def apply_split(ds_x, ds_y, split):
    """Training views of both domains with holdout users' target rows removed.

    Cold-start users keep their source-domain interactions and lose all of
    their target-domain ones; index spaces are unchanged.
    """
    drop_y = {r.target_user for r in split.test_x_to_y + split.val_x_to_y}
    drop_x = {r.target_user for r in split.test_y_to_x + split.val_y_to_x}

    def strip(ds, drop):
        if not drop:
            return ds
        drop_arr = np.zeros(ds.num_users, dtype=bool)
        drop_arr[list(drop)] = True
        kept = ds.pairs[~drop_arr[ds.pairs[:, 0]]]
        return InteractionDataset(ds.domain_id, ds.user_ids, ds.item_ids, kept, check=False)

    return strip(ds_x, drop_x), strip(ds_y, drop_y)


# ---------------------------------------------------------------------------
# serialization

def _record_to_json(rec):
    return {
        "user_id": rec.user_id,
        "source_user": int(rec.source_user),
        "target_user": int(rec.target_user),
        "positive_item": int(rec.positive_item),
        "negatives": None if rec.negatives is None else [int(v) for v in rec.negatives],
    }


def _record_from_json(d):
    negs = d["negatives"]
    if negs is not None:
        negs = np.array(negs, dtype=np.int64)
        negs.flags.writeable = False
    return ColdStartRecord(
        user_id=d["user_id"],
        source_user=int(d["source_user"]),
        target_user=int(d["target_user"]),
        positive_item=int(d["positive_item"]),
        negatives=negs,
    )


def split_to_json(split, ds_x=None, ds_y=None):
    """JSON document for a split; embeds both domains' id maps when given."""
    doc = {
        "schema_version": SPLIT_SCHEMA_VERSION,
        "domain_x": split.domain_x,
        "domain_y": split.domain_y,
        "seed": split.seed,
        "eta": split.eta,
        "coldstart_frac": split.coldstart_frac,
        "num_negatives": split.num_negatives,
        "overlap": [[uid, int(x), int(y)] for uid, x, y in split.overlap],
        "eligible": [[uid, int(x), int(y)] for uid, x, y in split.eligible],
        "train_overlap": [[uid, int(x), int(y)] for uid, x, y in split.train_overlap],
        "cohorts": {
            "test_x_to_y": [_record_to_json(r) for r in split.test_x_to_y],
            "val_x_to_y": [_record_to_json(r) for r in split.val_x_to_y],
            "test_y_to_x": [_record_to_json(r) for r in split.test_y_to_x],
            "val_y_to_x": [_record_to_json(r) for r in split.val_y_to_x],
        },
        "index_maps": {
            "user_ids_x": None if ds_x is None else ds_x.user_ids,
            "item_ids_x": None if ds_x is None else ds_x.item_ids,
            "user_ids_y": None if ds_y is None else ds_y.user_ids,
            "item_ids_y": None if ds_y is None else ds_y.item_ids,
        },
    }
    return doc


def split_from_json(doc):
    version = doc.get("schema_version")
    if version != SPLIT_SCHEMA_VERSION:
        raise ValueError(f"unsupported split schema_version {version!r}")
    cohorts = doc["cohorts"]
    return CdrSplit(
        domain_x=doc["domain_x"],
        domain_y=doc["domain_y"],
        seed=int(doc["seed"]),
        eta=float(doc["eta"]),
        coldstart_frac=float(doc["coldstart_frac"]),
        num_negatives=int(doc["num_negatives"]),
        overlap=tuple((u, int(x), int(y)) for u, x, y in doc["overlap"]),
        eligible=tuple((u, int(x), int(y)) for u, x, y in doc["eligible"]),
        train_overlap=tuple((u, int(x), int(y)) for u, x, y in doc["train_overlap"]),
        test_x_to_y=tuple(_record_from_json(r) for r in cohorts["test_x_to_y"]),
        val_x_to_y=tuple(_record_from_json(r) for r in cohorts["val_x_to_y"]),
        test_y_to_x=tuple(_record_from_json(r) for r in cohorts["test_y_to_x"]),
        val_y_to_x=tuple(_record_from_json(r) for r in cohorts["val_y_to_x"]),
    )


def save_split(path, split, ds_x=None, ds_y=None):
    doc = split_to_json(split, ds_x, ds_y)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_split(path):
    return split_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def dataset_to_json(ds):
    return {
        "schema_version": DATASET_SCHEMA_VERSION,
        "domain_id": ds.domain_id,
        "user_ids": ds.user_ids,
        "item_ids": ds.item_ids,
        "pairs": [[int(u), int(i)] for u, i in ds.pairs],
    }


def dataset_from_json(doc):
    version = doc.get("schema_version")
    if version != DATASET_SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema_version {version!r}")
    return InteractionDataset(
        doc["domain_id"],
        doc["user_ids"],
        doc["item_ids"],
        np.array(doc["pairs"], dtype=np.int64).reshape(-1, 2),
    )


def save_dataset(path, ds):
    Path(path).write_text(
        json.dumps(dataset_to_json(ds), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_dataset(path):
    return dataset_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def write_interactions_tsv(path, ds):
    """Plain user_id<TAB>item_id rows, in (user, item) index order."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in ds.pairs:
            fh.write(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\n")


# ---------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SyntheticConfig:
    num_domains: int = 2
    users_per_domain: int = 1000
    items_per_domain: int = 500
    latent_dim: int = 16
    overlap_fraction: float = 0.5
    noise_std: float = 0.0
    positive_quantile: float = 0.02
    transform: str = "identity"  # or "rotation"
    domain_ids: tuple | None = None

    def __post_init__(self):
        if self.num_domains < 2:
            raise ValueError("num_domains must be >= 2")
        if not (0.0 < self.overlap_fraction <= 1.0):
            raise ValueError("overlap_fraction must be in (0, 1]")
        if not (0.0 < self.positive_quantile <= 0.5):
            raise ValueError("positive_quantile must be in (0, 0.5]")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")
        if self.transform not in ("identity", "rotation"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.domain_ids is not None and len(self.domain_ids) != self.num_domains:
            raise ValueError("domain_ids length must equal num_domains")

    def resolved_domain_ids(self):
        if self.domain_ids is not None:
            return tuple(self.domain_ids)
        if self.num_domains == 2:
            return ("X", "Y")
        return tuple(chr(ord("A") + k) for k in range(self.num_domains))


@dataclass(frozen=True)
class SyntheticGroundTruth:
    """Latents behind a synthetic corpus, aligned to each dataset's indices."""

    domain_ids: tuple
    shared_latents: np.ndarray  # (n_global, k), pre-transform
    user_latents: dict  # domain -> (users, k) realized representation
    item_latents: dict  # domain -> (items, k)
    transforms: dict  # domain -> (matrix, offset)
    user_ids: dict  # domain -> list of external ids (dataset order)
    item_ids: dict  # domain -> list of external ids


def generate_synthetic(cfg, seed=0):
    """Two-or-more domain corpus from shared user latents.

    A core of round(overlap_fraction * users_per_domain) users is shared by
    every domain; each domain adds its own block. A user's domain
    representation is an invertible affine transform of the shared latent plus
    Gaussian noise; interactions are the top positive_quantile items by dot
    product against per-domain item latents.
    """
    domain_ids = cfg.resolved_domain_ids()
    rng = np.random.default_rng(seed)
    k = cfg.latent_dim
    n_core = int(round(cfg.overlap_fraction * cfg.users_per_domain))
    n_own = cfg.users_per_domain - n_core
    n_global = n_core + n_own * cfg.num_domains
    shared = rng.normal(0.0, 1.0, size=(n_global, k))
    k_pos = max(1, int(round(cfg.positive_quantile * cfg.items_per_domain)))

    datasets = []
    user_latents, item_latents, transforms = {}, {}, {}
    gt_user_ids, gt_item_ids = {}, {}
    for d_idx, domain in enumerate(domain_ids):
        if cfg.transform == "identity":
            mat = np.eye(k)
            offset = np.zeros(k)
        else:
            q, _ = np.linalg.qr(rng.normal(size=(k, k)))
            mat = q
            offset = rng.normal(0.0, 0.1, size=k)
        cond = np.linalg.cond(mat)
        if not np.isfinite(cond) or cond > 1e6:
            raise ValueError(f"domain {domain}: transform condition number {cond:.3g} too large")
        own_start = n_core + d_idx * n_own
        global_idx = np.concatenate(
            [np.arange(n_core), np.arange(own_start, own_start + n_own)]
        ).astype(np.int64)
        reps = shared[global_idx] @ mat.T + offset
        if cfg.noise_std > 0.0:
            reps = reps + rng.normal(0.0, cfg.noise_std, size=reps.shape)
        items = rng.normal(0.0, 1.0, size=(cfg.items_per_domain, k))
        scores = reps @ items.T
        pairs = []
        for u in range(reps.shape[0]):
            top = np.argsort(-scores[u], kind="stable")[:k_pos]
            for it in np.sort(top):
                pairs.append((u, int(it)))
        uids = [f"u{g:06d}" for g in global_idx]
        iids = [f"{domain}_i{j:05d}" for j in range(cfg.items_per_domain)]
        datasets.append(InteractionDataset(domain, uids, iids, np.array(pairs, dtype=np.int64)))
        user_latents[domain] = reps
        item_latents[domain] = items
        transforms[domain] = (mat, offset)
        gt_user_ids[domain] = uids
        gt_item_ids[domain] = iids

    truth = SyntheticGroundTruth(
        domain_ids=domain_ids,
        shared_latents=shared,
        user_latents=user_latents,
        item_latents=item_latents,
        transforms=transforms,
        user_ids=gt_user_ids,
        item_ids=gt_item_ids,
    )
    return datasets, truth


def align_ground_truth(truth, ds):
    """Ground-truth (user, item) latent matrices reindexed to `ds`'s indices.

    Needed after a TSV round trip, where first-appearance indexing drops
    never-interacted items and may reorder ids.
    """
    domain = ds.domain_id
    u_pos = {uid: k for k, uid in enumerate(truth.user_ids[domain])}
    i_pos = {iid: k for k, iid in enumerate(truth.item_ids[domain])}
    users = np.array([u_pos[uid] for uid in ds.user_ids], dtype=np.int64)
    items = np.array([i_pos[iid] for iid in ds.item_ids], dtype=np.int64)
    return truth.user_latents[domain][users], truth.item_latents[domain][items]


def make_chain_splits(datasets, eta=1.0, coldstart_frac=0.2, seed=0, num_negatives=999):
    """Splits for a domain chain A-B-C: adapters train on adjacent overlaps,
    cold-start users are evaluated end-to-end (first domain to last).

    Returns (pair_splits, end_to_end_split). The end-to-end split carries the
    holdout cohort as its x_to_y direction; its target rows must be withheld
    from the last domain's backbone via `apply_split`. The holdout is excluded
    from every pairwise training overlap.
    """
    if len(datasets) < 3:
        raise ValueError("chain needs at least three domains")
    core = set(datasets[0].user_ids)
    for ds in datasets[1:]:
        core &= set(ds.user_ids)
    first, last = datasets[0], datasets[-1]
    core_ids = [uid for uid in first.user_ids if uid in core]
    if len(core_ids) < 2.0 / coldstart_frac:
        raise SplitInfeasibleError(
            f"chain core has {len(core_ids)} users; need at least "
            f"{2.0 / coldstart_frac:.0f} for coldstart_frac={coldstart_frac}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(core_ids))
    n_hold = int(len(core_ids) * coldstart_frac)
    holdout_ids = [core_ids[k] for k in perm[:n_hold]]
    holdout = set(holdout_ids)

    fi, li = first.user_index, last.user_index
    records = []
    for uid in holdout_ids:
        pos = _sample_positive(rng, last, li[uid])
        records.append(
            ColdStartRecord(
                user_id=uid,
                source_user=fi[uid],
                target_user=li[uid],
                positive_item=pos,
            )
        )
    end_split = CdrSplit(
        domain_x=first.domain_id,
        domain_y=last.domain_id,
        seed=seed,
        eta=eta,
        coldstart_frac=coldstart_frac,
        num_negatives=num_negatives,
        overlap=tuple((uid, fi[uid], li[uid]) for uid in core_ids),
        eligible=(),
        train_overlap=(),
        test_x_to_y=tuple(records),
        val_x_to_y=(),
        test_y_to_x=(),
        val_y_to_x=(),
    )

    pair_splits = []
    for ds_a, ds_b in zip(datasets[:-1], datasets[1:]):
        ai, bi = ds_a.user_index, ds_b.user_index
        shared = [uid for uid in ds_a.user_ids if uid in bi and uid not in holdout]
        rows = tuple((uid, ai[uid], bi[uid]) for uid in shared)
        shuffle = rng.permutation(len(rows))
        shuffled = tuple(rows[k] for k in shuffle)
        n_train = math.ceil(eta * len(shuffled))
        pair_splits.append(
            CdrSplit(
                domain_x=ds_a.domain_id,
                domain_y=ds_b.domain_id,
                seed=seed,
                eta=eta,
                coldstart_frac=coldstart_frac,
                num_negatives=num_negatives,
                overlap=rows,
                eligible=shuffled,
                train_overlap=shuffled[:n_train],
                test_x_to_y=(),
                val_x_to_y=(),
                test_y_to_x=(),
                val_y_to_x=(),
            )
        )
    return pair_splits, end_split
