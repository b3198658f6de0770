"""Overlap-proportion sweep and latent-space diagnostics.

Everything here consumes frozen backbones plus a populated split and retrains
only the lightweight transfer models, so a sweep over training-overlap
fractions compares methods on identical embeddings and identical cohorts.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import adapter as adapter_mod
from . import baseline as baseline_mod
from . import data, evaluation

SWEEP_ETAS = (0.05, 0.2, 0.5, 1.0)
MACRO = "macro"


@dataclass(frozen=True)
class SweepRow:
    """One evaluated cell: a method at a training-overlap fraction.

    `direction` is "x_to_y", "y_to_x", or "macro"; the macro row carries the
    unweighted mean over directions and target_domain "all".
    """

    method: str
    eta: float
    direction: str
    target_domain: str
    metrics: evaluation.RankingMetrics


@dataclass(frozen=True)
class AnalysisReport:
    """Latent diagnostics per method, optionally alongside sweep rows.

    Both dicts map method -> {direction: value, ..., "macro": value}.
    """

    avg_distance: dict
    kl_divergence: dict
    rows: tuple = ()


def adapter_infer(params, tables):
    def infer(user, source, target):
        return adapter_mod.transfer(params, tables, user, source, target)

    return infer


def emcdr_infer(mappings, tables):
    def infer(user, source, target):
        return baseline_mod.emcdr_transfer(mappings[(source, target)], tables, user)

    return infer


def train_methods(tables, split, adapter_hyper, emcdr_hyper):
    """Adapter plus one mapping per direction, all on the same overlap rows."""
    params = adapter_mod.train_adapter(tables, split, adapter_hyper)
    mappings = {
        (split.domain_x, split.domain_y): baseline_mod.train_emcdr(
            tables, split, emcdr_hyper, split.domain_x, split.domain_y
        ),
        (split.domain_y, split.domain_x): baseline_mod.train_emcdr(
            tables, split, emcdr_hyper, split.domain_y, split.domain_x
        ),
    }
    return params, mappings


def overlap_sweep(tables, split, adapter_hyper, emcdr_hyper, etas=SWEEP_ETAS,
                  ks=(10, 20), cohort="test"):
    """Retrain both methods at each eta and evaluate on fixed cohorts.

    Backbones are reused untouched across cells and the cold-start cohorts do
    not depend on eta, so rows are directly comparable; `with_eta` keeps the
    training subsets nested. Rows come back ordered by eta ascending, then
    method, then direction (macro last).
    """
    rows = []
    for eta in sorted({float(e) for e in etas}):
        sub = data.with_eta(split, eta)
        params, mappings = train_methods(tables, sub, adapter_hyper, emcdr_hyper)
        for method, infer in (
            ("adapter", adapter_infer(params, tables)),
            ("emcdr", emcdr_infer(mappings, tables)),
        ):
            result = evaluation.evaluate_cold_start(infer, tables, sub, ks=ks, cohort=cohort)
            for direction, _, target in sub.directions():
                if direction in result.directions:
                    rows.append(SweepRow(method, eta, direction, target,
                                         result.directions[direction]))
            rows.append(SweepRow(method, eta, MACRO, "all", result.macro))
    return rows


def relative_drop(rows, method, eta_high=1.0, eta_low=0.05, k=10, direction=MACRO):
    """(HR@k at eta_high - HR@k at eta_low) / HR@k at eta_high."""

    def cell(eta):
        for row in rows:
            if (row.method == method and row.direction == direction
                    and math.isclose(row.eta, eta)):
                return row.metrics
        raise ValueError(f"no sweep row for {method!r} at eta={eta} ({direction})")

    high = cell(eta_high).hr[k]
    low = cell(eta_low).hr[k]
    if high <= 0.0:
        raise ValueError(f"{method!r}: HR@{k} at eta={eta_high} is zero; drop undefined")
    return (high - low) / high


def _macro(per_direction):
    out = dict(per_direction)
    out[MACRO] = float(np.mean(list(per_direction.values())))
    return out


def latent_analysis(tables, split, adapter_params, mappings, rows=()):
    """Inferred-vs-reference distances and disentanglement KLs per method.

    Distances compare each held-out user's inferred target embedding against
    the row the target backbone holds for that user, so the tables passed here
    should be reference backbones trained on the full datasets; backbones
    trained with the holdout withheld leave those rows at initialization.

    The KL treats the frozen source embeddings of the training-overlap users
    as the domain-specific set and the model's cross-domain view of the same
    users (adapter: aligned prior outputs; mapping baseline: mapped
    embeddings) as the shared set, averaged over the two directions.
    """
    if isinstance(tables, dict):
        by_id = dict(tables)
    else:
        by_id = {t.domain_id: t for t in tables}
    infers = {
        "adapter": adapter_infer(adapter_params, by_id),
        "emcdr": emcdr_infer(mappings, by_id),
    }

    distances = {}
    for method, infer in infers.items():
        per_direction = {}
        for direction, source, target in split.directions():
            records = split.records(direction, "test") + split.records(direction, "val")
            if not records:
                continue
            inferred = np.stack([infer(r.source_user, source, target) for r in records])
            reference = by_id[target].user_embeddings[[r.target_user for r in records]]
            per_direction[direction] = evaluation.avg_latent_distance(inferred, reference)
        if not per_direction:
            raise ValueError("split has no holdout records to measure distances on")
        distances[method] = _macro(per_direction)

    xs, ys = split.train_pairs()
    if xs.size < 2:
        raise ValueError("need at least 2 training-overlap users to fit KL Gaussians")
    ux = by_id[split.domain_x].user_embeddings[xs]
    uy = by_id[split.domain_y].user_embeddings[ys]
    shared = {
        "adapter": {
            "x_to_y": adapter_params.priors[split.domain_x].apply(ux),
            "y_to_x": adapter_params.priors[split.domain_y].apply(uy),
        },
        "emcdr": {
            "x_to_y": mappings[(split.domain_x, split.domain_y)].net.apply(ux),
            "y_to_x": mappings[(split.domain_y, split.domain_x)].net.apply(uy),
        },
    }
    kls = {}
    for method, views in shared.items():
        kls[method] = _macro({
            "x_to_y": evaluation.kl_disentanglement(ux, views["x_to_y"]),
            "y_to_x": evaluation.kl_disentanglement(uy, views["y_to_x"]),
        })

    report = AnalysisReport(avg_distance=distances, kl_divergence=kls, rows=tuple(rows))
    for method in distances:
        assert all(v >= 0.0 for v in distances[method].values())
        assert all(v >= -1e-9 for v in kls[method].values())
    return report


# ---------------------------------------------------------------------------
# report rendering

def format_percent(value):
    """Ratio in [0, 1] rendered as a two-decimal percentage string."""
    return f"{100.0 * value:.2f}"


def percent_table(metrics, ks):
    """{"hr@10": "25.22", ...} view of a RankingMetrics row."""
    out = {}
    for k in ks:
        out[f"hr@{k}"] = format_percent(metrics.hr[k])
    for k in ks:
        out[f"ndcg@{k}"] = format_percent(metrics.ndcg[k])
    out["mrr"] = format_percent(metrics.mrr)
    return out


def metrics_columns(ks):
    return [f"hr@{k}" for k in ks] + [f"ndcg@{k}" for k in ks] + ["mrr"]


def metrics_values(metrics, ks):
    return ([metrics.hr[k] for k in ks] + [metrics.ndcg[k] for k in ks]
            + [metrics.mrr])


def write_sweep_csv(path, rows, header_lines=()):
    """One CSV row per method x direction x eta, ratios to six decimals."""
    if not rows:
        raise ValueError("no sweep rows to write")
    ks = sorted(rows[0].metrics.hr)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "eta", "direction", "target_domain", "n_users"]
                        + metrics_columns(ks))
        for row in rows:
            writer.writerow(
                [row.method, str(row.eta), row.direction, row.target_domain,
                 row.metrics.n_users]
                + [f"{v:.6f}" for v in metrics_values(row.metrics, ks)]
            )


def write_analysis_csv(path, report, header_lines=()):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "direction", "avg_latent_distance", "kl_disentanglement"])
        for method in sorted(report.avg_distance):
            for direction in ("x_to_y", "y_to_x", MACRO):
                if direction not in report.avg_distance[method]:
                    continue
                writer.writerow([
                    method, direction,
                    f"{report.avg_distance[method][direction]:.6f}",
                    f"{report.kl_divergence[method][direction]:.6f}",
                ])


def read_report_csv(path):
    """(comment header lines, list of row dicts) for either report flavor."""
    comments = []
    with open(path, encoding="utf-8", newline="") as fh:
        body = []
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            else:
                body.append(line)
    return comments, list(csv.DictReader(body))
