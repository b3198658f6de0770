"""Experiment configuration: a JSON file with a strict, versioned schema.

Unknown keys anywhere in the document are rejected and every violation is
reported in one pass. Command-line overrides (seed, output dir, eta) are
merged into the document before validation so they face the same checks.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import adapter as adapter_mod
from . import baseline as baseline_mod
from . import data, mf
from .analysis import SWEEP_ETAS
from .errors import ConfigError

CONFIG_SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "seed", "output_dir", "data", "backbone",
             "adapter", "baseline", "evaluation", "sweep"}
_DATA_KEYS = {"synthetic", "domains", "min_item_interactions",
              "min_user_interactions", "coldstart_frac", "num_negatives", "eta"}
_SYNTH_KEYS = {"num_domains", "users_per_domain", "items_per_domain",
               "latent_dim", "overlap_fraction", "noise_std",
               "positive_quantile", "transform", "domain_ids"}
_BACKBONE_KEYS = {"dim", "learning_rate", "regularization", "epochs",
                  "negatives_per_positive"}
_ADAPTER_KEYS = {"hidden", "tau", "lambdas", "learning_rate", "batch_size",
                 "max_epochs", "patience", "scale_mode"}
_BASELINE_KEYS = {"hidden", "learning_rate", "batch_size", "epochs"}
_EVAL_KEYS = {"ks"}
_SWEEP_KEYS = {"etas"}

_DATA_DEFAULTS = {
    "min_item_interactions": 10,
    "min_user_interactions": 5,
    "coldstart_frac": 0.2,
    "num_negatives": 999,
    "eta": 1.0,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; hyper objects carry seed 0 and the
    pipeline reseeds them per stage from `seed`."""

    seed: int
    output_dir: str
    synthetic: data.SyntheticConfig | None
    domain_paths: tuple
    min_item_interactions: int
    min_user_interactions: int
    coldstart_frac: float
    num_negatives: int
    eta: float
    backbone: mf.BprHyper
    adapter: adapter_mod.AdapterHyper
    baseline: baseline_mod.EmcdrHyper
    ks: tuple
    etas: tuple
    raw: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def domain_ids(self):
        if self.synthetic is not None:
            return self.synthetic.resolved_domain_ids()
        return tuple(d for d, _ in self.domain_paths)

    def digest(self):
        """Hash of the experiment identity; `raw` deliberately omits the
        output directory so relocated runs stay byte-identical."""
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


class _Checker:
    def __init__(self):
        self.violations = []

    def fail(self, path, message):
        self.violations.append(f"{path}: {message}")

    @staticmethod
    def _label(path, key):
        return f"{path}.{key}" if path else key

    def unknown(self, path, doc, known):
        for key in sorted(set(doc) - known):
            self.fail(self._label(path, key), "unknown key")

    def section(self, doc, name, known, required=False):
        if name not in doc:
            if required:
                self.fail(name, "required section is missing")
            return {}
        sec = doc[name]
        if not isinstance(sec, dict):
            self.fail(name, f"expected an object, got {type(sec).__name__}")
            return {}
        self.unknown(name, sec, known)
        return sec

    def get_int(self, sec, path, key, default=None, lo=None, hi=None):
        if key not in sec:
            return default
        v = sec[key]
        if not _is_int(v):
            self.fail(self._label(path, key), f"expected an integer, got {v!r}")
            return default
        if lo is not None and v < lo:
            self.fail(self._label(path, key), f"must be >= {lo}, got {v}")
            return default
        if hi is not None and v > hi:
            self.fail(self._label(path, key), f"must be <= {hi}, got {v}")
            return default
        return v

    def get_num(self, sec, path, key, default=None, lo=None, hi=None,
                lo_open=False, hi_open=False):
        if key not in sec:
            return default
        v = sec[key]
        if not _is_num(v):
            self.fail(self._label(path, key), f"expected a number, got {v!r}")
            return default
        v = float(v)
        if lo is not None and (v < lo or (lo_open and v == lo)):
            self.fail(self._label(path, key), f"must be {'>' if lo_open else '>='} {lo}, got {v}")
            return default
        if hi is not None and (v > hi or (hi_open and v == hi)):
            self.fail(self._label(path, key), f"must be {'<' if hi_open else '<='} {hi}, got {v}")
            return default
        return v

    def get_str(self, sec, path, key, default=None, choices=None):
        if key not in sec:
            return default
        v = sec[key]
        if not isinstance(v, str) or not v:
            self.fail(self._label(path, key), f"expected a non-empty string, got {v!r}")
            return default
        if choices is not None and v not in choices:
            self.fail(self._label(path, key), f"expected one of {sorted(choices)}, got {v!r}")
            return default
        return v


def _build_hyper(check, name, factory, kwargs):
    try:
        return factory(**kwargs)
    except (ValueError, TypeError) as err:
        check.fail(name, str(err))
        return None


def config_from_dict(doc, base_dir=".", seed=None, output_dir=None, eta=None):
    """Validate a parsed document and build an ExperimentConfig.

    `seed`, `output_dir`, and `eta` are flag overrides layered onto the
    document before validation. All violations are collected and raised
    together as one ConfigError.
    """
    if not isinstance(doc, dict):
        raise ConfigError(["top level: expected a JSON object"])
    doc = json.loads(json.dumps(doc))  # private copy, JSON types only
    if seed is not None:
        doc["seed"] = seed
    if output_dir is not None:
        doc["output_dir"] = str(output_dir)
    if eta is not None:
        doc.setdefault("data", {})
        if isinstance(doc["data"], dict):
            doc["data"]["eta"] = eta

    check = _Checker()
    check.unknown("", doc, _TOP_KEYS)

    version = doc.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        check.fail("schema_version", f"expected {CONFIG_SCHEMA_VERSION}, got {version!r}")

    out_seed = check.get_int(doc, "", "seed", default=0, lo=0)
    out_dir = check.get_str(doc, "", "output_dir", default="out")

    sec = check.section(doc, "data", _DATA_KEYS, required=True)
    synthetic = None
    domain_paths = ()
    has_synth = "synthetic" in sec
    has_domains = "domains" in sec
    if has_synth == has_domains:
        check.fail("data", "exactly one of 'synthetic' or 'domains' must be given")
    if has_synth:
        synth_sec = sec["synthetic"]
        if not isinstance(synth_sec, dict):
            check.fail("data.synthetic", "expected an object")
        else:
            check.unknown("data.synthetic", synth_sec, _SYNTH_KEYS)
            kwargs = {k: v for k, v in synth_sec.items() if k in _SYNTH_KEYS}
            if "domain_ids" in kwargs:
                ids = kwargs["domain_ids"]
                if (not isinstance(ids, list)
                        or not all(isinstance(d, str) and d for d in ids)):
                    check.fail("data.synthetic.domain_ids",
                               "expected a list of non-empty strings")
                    kwargs.pop("domain_ids")
                else:
                    kwargs["domain_ids"] = tuple(ids)
            synthetic = _build_hyper(check, "data.synthetic", data.SyntheticConfig, kwargs)
            if synthetic is not None and synthetic.num_domains != 2:
                check.fail("data.synthetic.num_domains",
                           "the pipeline drives exactly two domains "
                           "(multi-domain chains go through the library API)")
                synthetic = None
    if has_domains:
        entries = sec["domains"]
        if not isinstance(entries, list) or len(entries) != 2:
            check.fail("data.domains", "expected a list of exactly two "
                       "{domain_id, path} objects")
        else:
            resolved = []
            for i, entry in enumerate(entries):
                if not isinstance(entry, dict) or set(entry) != {"domain_id", "path"}:
                    check.fail(f"data.domains[{i}]",
                               "expected an object with keys 'domain_id' and 'path'")
                    continue
                did, path = entry["domain_id"], entry["path"]
                if not isinstance(did, str) or not did:
                    check.fail(f"data.domains[{i}].domain_id", "expected a non-empty string")
                    continue
                if not isinstance(path, str) or not path:
                    check.fail(f"data.domains[{i}].path", "expected a non-empty string")
                    continue
                resolved.append((did, str((Path(base_dir) / path).resolve())))
            if len(resolved) == 2:
                if resolved[0][0] == resolved[1][0]:
                    check.fail("data.domains", "domain ids must differ")
                domain_paths = tuple(resolved)

    min_item = check.get_int(sec, "data", "min_item_interactions",
                             default=_DATA_DEFAULTS["min_item_interactions"], lo=1)
    min_user = check.get_int(sec, "data", "min_user_interactions",
                             default=_DATA_DEFAULTS["min_user_interactions"], lo=1)
    coldstart = check.get_num(sec, "data", "coldstart_frac",
                              default=_DATA_DEFAULTS["coldstart_frac"],
                              lo=0.0, hi=1.0, lo_open=True, hi_open=True)
    negatives = check.get_int(sec, "data", "num_negatives",
                              default=_DATA_DEFAULTS["num_negatives"], lo=1)
    out_eta = check.get_num(sec, "data", "eta", default=_DATA_DEFAULTS["eta"],
                            lo=0.0, hi=1.0, lo_open=True)

    sec = check.section(doc, "backbone", _BACKBONE_KEYS)
    backbone = _build_hyper(check, "backbone", mf.BprHyper, {
        "dim": check.get_int(sec, "backbone", "dim", default=64, lo=1),
        "learning_rate": check.get_num(sec, "backbone", "learning_rate",
                                       default=0.05, lo=0.0, lo_open=True),
        "regularization": check.get_num(sec, "backbone", "regularization",
                                        default=1e-4, lo=0.0),
        "epochs": check.get_int(sec, "backbone", "epochs", default=50, lo=1),
        "negatives_per_positive": check.get_int(
            sec, "backbone", "negatives_per_positive", default=1, lo=1),
    })

    sec = check.section(doc, "adapter", _ADAPTER_KEYS)
    lambdas = sec.get("lambdas", [1.0, 1.0, 1.0])
    if (not isinstance(lambdas, list) or len(lambdas) != 3
            or not all(_is_num(v) for v in lambdas)):
        check.fail("adapter.lambdas", f"expected a list of three numbers, got {lambdas!r}")
        lambdas = [1.0, 1.0, 1.0]
    hidden = sec.get("hidden")
    if hidden is not None and not _is_int(hidden):
        check.fail("adapter.hidden", f"expected null or an integer, got {hidden!r}")
        hidden = None
    adapter_hyper = _build_hyper(check, "adapter", adapter_mod.AdapterHyper, {
        "hidden": hidden,
        "tau": check.get_num(sec, "adapter", "tau", default=0.2, lo=0.0, lo_open=True),
        "lambdas": tuple(float(v) for v in lambdas),
        "learning_rate": check.get_num(sec, "adapter", "learning_rate",
                                       default=1e-3, lo=0.0, lo_open=True),
        "batch_size": check.get_int(sec, "adapter", "batch_size", default=128, lo=2),
        "max_epochs": check.get_int(sec, "adapter", "max_epochs", default=200, lo=1),
        "patience": check.get_int(sec, "adapter", "patience", default=10, lo=0),
        "scale_mode": check.get_str(sec, "adapter", "scale_mode", default="full",
                                    choices={"full", "diagonal"}),
    })

    sec = check.section(doc, "baseline", _BASELINE_KEYS)
    bhidden = sec.get("hidden")
    if bhidden is not None and not _is_int(bhidden):
        check.fail("baseline.hidden", f"expected null or an integer, got {bhidden!r}")
        bhidden = None
    baseline_hyper = _build_hyper(check, "baseline", baseline_mod.EmcdrHyper, {
        "hidden": bhidden,
        "learning_rate": check.get_num(sec, "baseline", "learning_rate",
                                       default=1e-3, lo=0.0, lo_open=True),
        "batch_size": check.get_int(sec, "baseline", "batch_size", default=128, lo=1),
        "epochs": check.get_int(sec, "baseline", "epochs", default=200, lo=1),
    })

    sec = check.section(doc, "evaluation", _EVAL_KEYS)
    ks = sec.get("ks", [10, 20])
    if (not isinstance(ks, list) or not ks
            or not all(_is_int(k) and k >= 1 for k in ks)):
        check.fail("evaluation.ks", f"expected a non-empty list of integers >= 1, got {ks!r}")
        ks = [10, 20]
    ks = tuple(sorted(set(ks)))
    if negatives is not None and max(ks) > negatives + 1:
        check.fail("evaluation.ks",
                   f"K={max(ks)} exceeds the candidate list size "
                   f"(num_negatives + 1 = {negatives + 1})")

    sec = check.section(doc, "sweep", _SWEEP_KEYS)
    etas = sec.get("etas", list(SWEEP_ETAS))
    if (not isinstance(etas, list) or not etas
            or not all(_is_num(v) and 0.0 < float(v) <= 1.0 for v in etas)):
        check.fail("sweep.etas", f"expected a non-empty list of numbers in (0, 1], got {etas!r}")
        etas = list(SWEEP_ETAS)
    etas = tuple(sorted({float(v) for v in etas}))

    if check.violations:
        raise ConfigError(check.violations)

    raw = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "seed": out_seed,
        "data": {
            "min_item_interactions": min_item,
            "min_user_interactions": min_user,
            "coldstart_frac": coldstart,
            "num_negatives": negatives,
            "eta": out_eta,
        },
        "backbone": {k: getattr(backbone, k) for k in sorted(_BACKBONE_KEYS)},
        "adapter": {
            **{k: getattr(adapter_hyper, k) for k in sorted(_ADAPTER_KEYS - {"lambdas"})},
            "lambdas": list(adapter_hyper.lambdas),
        },
        "baseline": {k: getattr(baseline_hyper, k) for k in sorted(_BASELINE_KEYS)},
        "evaluation": {"ks": list(ks)},
        "sweep": {"etas": list(etas)},
    }
    if synthetic is not None:
        raw["data"]["synthetic"] = {
            "num_domains": synthetic.num_domains,
            "users_per_domain": synthetic.users_per_domain,
            "items_per_domain": synthetic.items_per_domain,
            "latent_dim": synthetic.latent_dim,
            "overlap_fraction": synthetic.overlap_fraction,
            "noise_std": synthetic.noise_std,
            "positive_quantile": synthetic.positive_quantile,
            "transform": synthetic.transform,
            "domain_ids": list(synthetic.resolved_domain_ids()),
        }
    else:
        raw["data"]["domains"] = [{"domain_id": d, "path": p} for d, p in domain_paths]

    return ExperimentConfig(
        seed=out_seed,
        output_dir=out_dir,
        synthetic=synthetic,
        domain_paths=domain_paths,
        min_item_interactions=min_item,
        min_user_interactions=min_user,
        coldstart_frac=coldstart,
        num_negatives=negatives,
        eta=out_eta,
        backbone=backbone,
        adapter=adapter_hyper,
        baseline=baseline_hyper,
        ks=ks,
        etas=etas,
        raw=raw,
    )


def load_config(path, seed=None, output_dir=None, eta=None):
    """Read, validate, and return the experiment config at `path`."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError([f"{path}: cannot read config: {err}"]) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError([f"{path}: not valid JSON: {err}"]) from None
    return config_from_dict(doc, base_dir=p.parent, seed=seed,
                            output_dir=output_dir, eta=eta)
