"""Experiment stages: synth, prepare, pretrain, train, evaluate, sweep, analyze.

Each stage reads its inputs from the config's output directory, writes
versioned artifacts plus a manifest recording input/output hashes and the
seed, and is a pure function of (config, seed, inputs). Reruns regenerate
byte-identical artifacts; wall-clock lives only under the manifest's
"timings_sec" key, which determinism comparisons must ignore.

The split artifact is always built with the full eligible overlap (eta 1.0);
`train`, `sweep`, and `analyze` shrink it in memory, so one prepared split
serves every overlap fraction.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

from . import __version__, analysis, baseline, containers, data, evaluation, mf
from . import adapter as adapter_mod
from .errors import ConfigError, MissingArtifactError

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
METHODS = ("adapter", "emcdr")

_ANALYSIS_HEADER = (
    "reference backbones are trained on the full filtered datasets so held-out "
    "users have trained target rows; transfer models train on the same backbones",
    "kl_disentanglement: symmetrized diagonal-Gaussian KL; specific = frozen "
    "source-domain user embeddings of the training overlap, shared = the "
    "model's cross-domain view of the same users",
)


class Workspace:
    """Path layout under one output directory."""

    def __init__(self, root):
        self.root = Path(root)

    def raw_tsv(self, domain):
        return self.root / "data" / f"raw_{domain}.tsv"

    def truth_table(self, domain):
        return self.root / "data" / f"truth_{domain}.emb"

    def dataset(self, domain):
        return self.root / "data" / f"{domain}.json"

    def split(self):
        return self.root / "data" / "split.json"

    def backbone(self, domain):
        return self.root / "backbones" / f"{domain}.emb"

    def adapter_model(self):
        return self.root / "models" / "adapter.adp"

    def mapping(self, source, target):
        return self.root / "models" / f"mapping_{source}_to_{target}.map"

    def report(self, name):
        return self.root / "reports" / name

    def manifest(self, stage):
        return self.root / "manifests" / f"{stage}.json"


def derive_seed(seed, label):
    """Stable per-stage substream of the experiment seed."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") % (2**31)


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _require(path, hint):
    if not Path(path).exists():
        raise MissingArtifactError(path, hint)
    return Path(path)


def _hashes(ws, paths):
    out = {}
    for p in paths:
        p = Path(p)
        try:
            key = str(p.relative_to(ws.root))
        except ValueError:
            key = str(p)
        out[key] = _sha256_file(p)
    return out


def _finish(cfg, ws, stage, inputs, outputs, started):
    """Write the stage manifest; returns every artifact the stage produced."""
    ws.manifest(stage).parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "stage": stage,
        "tool_version": __version__,
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "inputs": _hashes(ws, inputs),
        "outputs": _hashes(ws, outputs),
        "timings_sec": {"total": round(time.perf_counter() - started, 6)},
    }
    _dump_json(ws.manifest(stage), manifest)
    return [str(p) for p in list(outputs) + [ws.manifest(stage)]]


# ---------------------------------------------------------------------------
# stages

def cmd_synth(cfg):
    """Generate synthetic interaction data plus its ground-truth latents."""
    if cfg.synthetic is None:
        raise ConfigError(["data.synthetic: required by the synth stage"])
    started = time.perf_counter()
    ws = Workspace(cfg.output_dir)
    (ws.root / "data").mkdir(parents=True, exist_ok=True)
    datasets, truth = data.generate_synthetic(cfg.synthetic,
                                              seed=derive_seed(cfg.seed, "synth"))
    outputs = []
    for ds in datasets:
        data.write_interactions_tsv(ws.raw_tsv(ds.domain_id), ds)
        outputs.append(ws.raw_tsv(ds.domain_id))
        table = mf.EmbeddingTable(ds.domain_id,
                                  truth.user_latents[ds.domain_id],
                                  truth.item_latents[ds.domain_id]).freeze()
        containers.save_embedding_table(
            ws.truth_table(ds.domain_id), table,
            meta={"kind": "ground-truth latents", "domain": ds.domain_id,
                  "seed": cfg.seed},
        )
        outputs += [ws.truth_table(ds.domain_id),
                    Path(str(ws.truth_table(ds.domain_id)) + ".json")]
    return _finish(cfg, ws, "synth", [], outputs, started)


def _input_tsvs(cfg, ws):
    if cfg.synthetic is not None:
        return [(d, _require(ws.raw_tsv(d), "crossrec synth"))
                for d in cfg.domain_ids]
    return [(d, _require(p, f"put the {d} interaction file at {p}"))
            for d, p in cfg.domain_paths]

def cmd_prepare(cfg):
    """Load, filter, and split the two domains; bake negatives into the split."""
    started = time.perf_counter()
    ws = Workspace(cfg.output_dir)
    (ws.root / "data").mkdir(parents=True, exist_ok=True)
    sources = _input_tsvs(cfg, ws)
    inputs = [p for _, p in sources]

    datasets = []
    for domain, path in sources:
        ds = data.load_interactions(path, domain)
        ds = data.filter_min_counts(ds, cfg.min_item_interactions,
                                    cfg.min_user_interactions)
        datasets.append(ds)
    ds_x, ds_y = datasets

    split = data.make_cdr_split(
        ds_x, ds_y, eta=1.0, coldstart_frac=cfg.coldstart_frac,
        seed=derive_seed(cfg.seed, "split"), num_negatives=cfg.num_negatives,
    )
    split = data.sample_negatives(split, ds_y,
                                  seed=derive_seed(cfg.seed, f"negatives:{ds_y.domain_id}"))
    split = data.sample_negatives(split, ds_x,
                                  seed=derive_seed(cfg.seed, f"negatives:{ds_x.domain_id}"))

    outputs = []
    for ds in datasets:
        data.save_dataset(ws.dataset(ds.domain_id), ds)
        outputs.append(ws.dataset(ds.domain_id))
    data.save_split(ws.split(), split, ds_x, ds_y)
    outputs.append(ws.split())
    return _finish(cfg, ws, "prepare", inputs, outputs, started)


def _load_prepared(cfg, ws):
    split = data.load_split(_require(ws.split(), "crossrec prepare"))
    datasets = {d: data.load_dataset(_require(ws.dataset(d), "crossrec prepare"))
                for d in (split.domain_x, split.domain_y)}
    return split, datasets


def _load_backbones(cfg, ws, split):
    tables = {}
    for domain in (split.domain_x, split.domain_y):
        tables[domain] = containers.load_embedding_table(
            _require(ws.backbone(domain), "crossrec pretrain"))
    return tables


def cmd_pretrain(cfg):
    """Train one frozen embedding backbone per domain.

    Held-out users' target-domain rows are stripped first so cold-start
    inference never sees them.
    """
    started = time.perf_counter()
    ws = Workspace(cfg.output_dir)
    split, datasets = _load_prepared(cfg, ws)
    inputs = [ws.split()] + [ws.dataset(d) for d in datasets]
    (ws.root / "backbones").mkdir(parents=True, exist_ok=True)

    stripped_x, stripped_y = data.apply_split(
        datasets[split.domain_x], datasets[split.domain_y], split)
    outputs = []
    for ds in (stripped_x, stripped_y):
        hyper = replace(cfg.backbone, seed=derive_seed(cfg.seed, f"bpr:{ds.domain_id}"))
        table = mf.train_bpr(ds, hyper).freeze()
        containers.save_embedding_table(
            ws.backbone(ds.domain_id), table,
            meta={"domain": ds.domain_id, "content_hash": table.content_hash(),
                  "interactions": ds.num_interactions, "seed": hyper.seed,
                  "hyper": {"dim": hyper.dim, "learning_rate": hyper.learning_rate,
                            "regularization": hyper.regularization,
                            "epochs": hyper.epochs,
                            "negatives_per_positive": hyper.negatives_per_positive}},
        )
        outputs += [ws.backbone(ds.domain_id),
                    Path(str(ws.backbone(ds.domain_id)) + ".json")]
        log.info("pretrained %s: %d users, %d items, dim %d",
                 ds.domain_id, table.num_users, table.num_items, table.dim)
    return _finish(cfg, ws, "pretrain", inputs, outputs, started)


def cmd_train(cfg, method):
    """Fit the transfer model on the training overlap at the configured eta."""
    if method not in METHODS:
        raise ConfigError([f"method: expected one of {list(METHODS)}, got {method!r}"])
    started = time.perf_counter()
    ws = Workspace(cfg.output_dir)
    split, _ = _load_prepared(cfg, ws)
    tables = _load_backbones(cfg, ws, split)
    inputs = [ws.split()] + [ws.backbone(d) for d in tables]
    (ws.root / "models").mkdir(parents=True, exist_ok=True)
    sub = data.with_eta(split, cfg.eta)

    outputs = []
    if method == "adapter":
        hyper = replace(cfg.adapter, seed=derive_seed(cfg.seed, "adapter"))
        params = adapter_mod.train_adapter(tables, sub, hyper)
        val_curve = [h["val_hr"] for h in params.history if h["val_hr"] is not None]
        containers.save_adapter(
            ws.adapter_model(), params,
            meta={"eta": cfg.eta, "seed": hyper.seed,
                  "epochs_run": len(params.history),
                  "final_loss": round(params.history[-1]["loss"].total, 10),
                  "best_val_hr10": max(val_curve) if val_curve else None},
        )
        outputs += [ws.adapter_model(), Path(str(ws.adapter_model()) + ".json")]
    else:
        for source, target in ((split.domain_x, split.domain_y),
                               (split.domain_y, split.domain_x)):
            hyper = replace(cfg.baseline,
                            seed=derive_seed(cfg.seed, f"emcdr:{source}->{target}"))
            params = baseline.train_emcdr(tables, sub, hyper, source, target)
            containers.save_mapping(
                ws.mapping(source, target), params,
                meta={"eta": cfg.eta, "seed": hyper.seed,
                      "final_loss": round(params.history[-1]["loss"], 10)},
            )
            outputs += [ws.mapping(source, target),
                        Path(str(ws.mapping(source, target)) + ".json")]
    return _finish(cfg, ws, f"train_{method}", inputs, outputs, started)


def _load_method(ws, split, tables, method):
    if method == "adapter":
        params = containers.load_adapter(
            _require(ws.adapter_model(), "crossrec train --method adapter"))
        return analysis.adapter_infer(params, tables)
    mappings = {}
    for source, target in ((split.domain_x, split.domain_y),
                           (split.domain_y, split.domain_x)):
        mappings[(source, target)] = containers.load_mapping(
            _require(ws.mapping(source, target), "crossrec train --method emcdr"))
    return analysis.emcdr_infer(mappings, tables)


def cmd_evaluate(cfg, method):
    """Leave-one-out ranking of the test cohort for one trained method."""
    if method not in METHODS:
        raise ConfigError([f"method: expected one of {list(METHODS)}, got {method!r}"])
    started = time.perf_counter()
    ws = Workspace(cfg.output_dir)
    split, _ = _load_prepared(cfg, ws)
    tables = _load_backbones(cfg, ws, split)
    inputs = [ws.split()] + [ws.backbone(d) for d in tables]
    if method == "adapter":
        model_paths = [_require(ws.adapter_model(), "crossrec train --method adapter")]
    else:
        model_paths = [
            _require(ws.mapping(split.domain_x, split.domain_y),
                     "crossrec train --method emcdr"),
            _require(ws.mapping(split.domain_y, split.domain_x),
                     "crossrec train --method emcdr"),
        ]
    inputs += model_paths
    infer = _load_method(ws, split, tables, method)
    (ws.root / "reports").mkdir(parents=True, exist_ok=True)

    # label rows with the eta the model was actually trained at
    sidecar = containers.read_sidecar(model_paths[0])
    eta = sidecar.get("eta", cfg.eta) if sidecar else cfg.eta
    result = evaluation.evaluate_cold_start(infer, tables, split, ks=cfg.ks)
    rows = [analysis.SweepRow(method, eta, direction, target,
                              result.directions[direction])
            for direction, _, target in split.directions()
            if direction in result.directions]
    rows.append(analysis.SweepRow(method, eta, analysis.MACRO, "all", result.macro))

    csv_path = ws.report(f"evaluate_{method}.csv")
    analysis.write_sweep_csv(csv_path, rows)
    summary = {
        "method": method,
        "eta": eta,
        "seed": cfg.seed,
        "ks": list(cfg.ks),
        "config": cfg.raw,
        "config_digest": cfg.digest(),
        "tool_version": __version__,
        "directions": {
            name: {
                "n_users": m.n_users,
                "hr": {str(k): m.hr[k] for k in cfg.ks},
                "ndcg": {str(k): m.ndcg[k] for k in cfg.ks},
                "mrr": m.mrr,
                "percent": analysis.percent_table(m, cfg.ks),
            }
            for name, m in {**result.directions, analysis.MACRO: result.macro}.items()
        },
    }
    json_path = ws.report(f"evaluate_{method}.json")
    _dump_json(json_path, summary)
    return _finish(cfg, ws, f"evaluate_{method}", inputs, [csv_path, json_path], started)


def cmd_sweep(cfg):
    """Retrain both methods across the configured overlap fractions."""
    started = time.perf_counter()
    ws = Workspace(cfg.output_dir)
    split, _ = _load_prepared(cfg, ws)
    tables = _load_backbones(cfg, ws, split)
    inputs = [ws.split()] + [ws.backbone(d) for d in tables]
    (ws.root / "reports").mkdir(parents=True, exist_ok=True)

    adapter_hyper = replace(cfg.adapter, seed=derive_seed(cfg.seed, "adapter"))
    emcdr_hyper = replace(cfg.baseline, seed=derive_seed(cfg.seed, "emcdr"))
    rows = analysis.overlap_sweep(tables, split, adapter_hyper, emcdr_hyper,
                                  etas=cfg.etas, ks=cfg.ks)
    csv_path = ws.report("sweep.csv")
    analysis.write_sweep_csv(csv_path, rows)
    summary = {
        "etas": list(cfg.etas),
        "ks": list(cfg.ks),
        "seed": cfg.seed,
        "config": cfg.raw,
        "config_digest": cfg.digest(),
        "tool_version": __version__,
        "rows": [
            {"method": r.method, "eta": r.eta, "direction": r.direction,
             "target_domain": r.target_domain, "n_users": r.metrics.n_users,
             "hr": {str(k): r.metrics.hr[k] for k in cfg.ks},
             "ndcg": {str(k): r.metrics.ndcg[k] for k in cfg.ks},
             "mrr": r.metrics.mrr}
            for r in rows
        ],
    }
    json_path = ws.report("sweep.json")
    _dump_json(json_path, summary)
    return _finish(cfg, ws, "sweep", inputs, [csv_path, json_path], started)


def cmd_analyze(cfg):
    """Latent-space diagnostics against full-data reference backbones."""
    started = time.perf_counter()
    ws = Workspace(cfg.output_dir)
    split, datasets = _load_prepared(cfg, ws)
    inputs = [ws.split()] + [ws.dataset(d) for d in datasets]
    (ws.root / "reports").mkdir(parents=True, exist_ok=True)

    tables = {}
    for domain, ds in datasets.items():
        hyper = replace(cfg.backbone, seed=derive_seed(cfg.seed, f"bpr-ref:{domain}"))
        tables[domain] = mf.train_bpr(ds, hyper).freeze()
    sub = data.with_eta(split, cfg.eta)
    adapter_hyper = replace(cfg.adapter, seed=derive_seed(cfg.seed, "analyze:adapter"))
    emcdr_hyper = replace(cfg.baseline, seed=derive_seed(cfg.seed, "analyze:emcdr"))
    params, mappings = analysis.train_methods(tables, sub, adapter_hyper, emcdr_hyper)
    report = analysis.latent_analysis(tables, sub, params, mappings)

    csv_path = ws.report("analysis.csv")
    analysis.write_analysis_csv(csv_path, report, header_lines=_ANALYSIS_HEADER)
    summary = {
        "protocol": list(_ANALYSIS_HEADER),
        "eta": cfg.eta,
        "seed": cfg.seed,
        "config": cfg.raw,
        "config_digest": cfg.digest(),
        "tool_version": __version__,
        "avg_latent_distance": report.avg_distance,
        "kl_disentanglement": report.kl_divergence,
    }
    json_path = ws.report("analysis.json")
    _dump_json(json_path, summary)
    return _finish(cfg, ws, "analyze", inputs, [csv_path, json_path], started)
