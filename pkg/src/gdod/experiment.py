"""Experiment harness: configs, seeded training runs, reports and comparison tables.

A run trains one shared-bottom model per seed and records test metrics after
every epoch (epoch 0 is the untrained model). Reports are plain JSON and CSV
whose bytes depend only on the config and the seeds; wall-clock timings go to
a separate file so they never disturb that.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .combiners import COMBINERS, CombinerConfig
from .data import SyntheticSpec, generate_synthetic, load_csv, split
from .errors import ConfigError, InvalidInputError
from .metrics import aggregate_diagnostics, evaluate
from .model import PROFILES, LossWeights, OptimizerState, SharedBottomModel, TrainState, train_step

DEFAULTS = {
    "dataset": {"synthetic": {"N": 10_000, "F": 16, "K": 2, "rho": 0.2, "alpha": 0.5}},
    "test_fraction": 0.2,
    "profile": "desk",
    "combiner": {"name": "gdod"},
    "loss_weights": {"mode": "fixed"},
    "optimizer": {"kind": "adam", "lr": 1e-3, "batch_size": 256},
    "epochs": 10,
    "seeds": [1, 2, 3, 4, 5],
    "output_dir": "runs",
}

_TOP_KEYS = set(DEFAULTS)
_COMBINER_KEYS = {"name", "label", "basis", "mask_rule", "groups", "cagrad_c", "task_weights"}
_OPTIMIZER_KEYS = {"kind", "lr", "batch_size"}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "dataset":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class CombinerEntry:
    label: str
    config: CombinerConfig
    task_weights: tuple | None = None


@dataclass
class ExperimentConfig:
    dataset: dict
    test_fraction: float
    profile: str
    combiners: list  # list[CombinerEntry]
    loss_weights: dict
    optimizer: dict
    epochs: int
    seeds: list
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = _merge(DEFAULTS, data)
        try:
            return cls._validated(merged)
        except ConfigError:
            raise
        except (InvalidInputError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def _validated(cls, d):
        dataset = d["dataset"]
        if not isinstance(dataset, dict) or len(dataset) != 1 or next(iter(dataset)) not in ("synthetic", "csv"):
            raise ConfigError("dataset must be {'synthetic': {...}} or {'csv': {'path': ..., 'F': ..., 'K': ...}}")
        if "synthetic" in dataset:
            SyntheticSpec(**{k: v for k, v in dataset["synthetic"].items()})
        else:
            src = dataset["csv"]
            if not {"path", "F", "K"} <= set(src):
                raise ConfigError("csv dataset needs 'path', 'F' and 'K'")
        if d["profile"] not in PROFILES:
            raise ConfigError(f"unknown profile {d['profile']!r}; expected one of {sorted(PROFILES)}")

        raw_combiners = d["combiner"] if isinstance(d["combiner"], list) else [d["combiner"]]
        if not raw_combiners:
            raise ConfigError("at least one combiner is required")
        entries = []
        for c in raw_combiners:
            c = {"name": c} if isinstance(c, str) else dict(c)
            unknown = set(c) - _COMBINER_KEYS
            if unknown:
                raise ConfigError(f"unknown combiner keys: {sorted(unknown)}")
            if c.get("name") not in COMBINERS:
                raise ConfigError(f"unknown combiner {c.get('name')!r}; expected one of {COMBINERS}")
            label = c.pop("label", None) or c["name"]
            weights = c.pop("task_weights", None)
            entries.append(CombinerEntry(label, CombinerConfig(**c), None if weights is None else tuple(float(w) for w in weights)))
        labels = [e.label for e in entries]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"combiner labels must be unique, got {labels}")

        opt = d["optimizer"]
        unknown = set(opt) - _OPTIMIZER_KEYS
        if unknown:
            raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
        OptimizerState(opt["kind"], float(opt["lr"]))
        if int(opt["batch_size"]) < 1:
            raise ConfigError("batch_size must be >= 1")
        LossWeights(**d["loss_weights"])

        seeds = d["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")
        if not isinstance(d["epochs"], int) or d["epochs"] < 0:
            raise ConfigError("epochs must be a non-negative integer")
        if not 0.0 < float(d["test_fraction"]) < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")

        return cls(
            dataset=dataset,
            test_fraction=float(d["test_fraction"]),
            profile=d["profile"],
            combiners=entries,
            loss_weights=d["loss_weights"],
            optimizer={"kind": opt["kind"], "lr": float(opt["lr"]), "batch_size": int(opt["batch_size"])},
            epochs=d["epochs"],
            seeds=list(seeds),
            output_dir=str(d["output_dir"]),
            raw=d,
        )

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """A copy with top-level keys replaced (``None`` values are ignored)."""
        raw = copy.deepcopy(self.raw)
        for key, value in overrides.items():
            if value is not None:
                raw[key] = value
        return ExperimentConfig.from_dict(raw)


# -- seeding --------------------------------------------------------------------


def seed_streams(seed: int):
    """Independent generators for data, split, init, batch order and combiner.

    Batch order and the combiner use separate streams, so every combiner sees
    the same batches for a given seed.
    """
    children = np.random.SeedSequence(int(seed)).spawn(5)
    names = ("data", "split", "init", "batches", "combiner")
    return {n: np.random.Generator(np.random.PCG64(c)) for n, c in zip(names, children)}


def load_dataset(dataset: dict, seed: int):
    if "synthetic" in dataset:
        params = dict(dataset["synthetic"])
        params.setdefault("seed", seed)
        return generate_synthetic(SyntheticSpec(**params))
    src = dataset["csv"]
    return load_csv(src["path"], int(src["F"]), int(src["K"]))


# -- training -------------------------------------------------------------------


def _test_metrics(model, test):
    P = model.forward(test.X)
    per_task = evaluate(test.Y, P)
    return [t.auc for t in per_task], [t.logloss for t in per_task]


def run_seed(config: ExperimentConfig, entry: CombinerEntry, seed: int) -> dict:
    """Train one model; returns the per-epoch record for this seed."""
    streams = seed_streams(seed)
    ds = load_dataset(config.dataset, int(streams["data"].integers(2**32)))
    train, test = split(ds, config.test_fraction, int(streams["split"].integers(2**32)))
    model = SharedBottomModel.from_profile(config.profile, ds.F, ds.K, streams["init"])
    template = OptimizerState(config.optimizer["kind"], config.optimizer["lr"])
    state = TrainState.create(template, ds.K)
    lw = config.loss_weights
    loss_weights = LossWeights(
        mode=lw.get("mode", "fixed"),
        weights=entry.task_weights if entry.task_weights is not None else lw.get("weights"),
        s=lw.get("s"),
    )
    batch = config.optimizer["batch_size"]

    auc, ll = _test_metrics(model, test)
    epochs = [{"epoch": 0, "test_auc": auc, "test_logloss": ll, **aggregate_diagnostics([])}]
    for epoch in range(1, config.epochs + 1):
        order = streams["batches"].permutation(train.N)
        diags = []
        for start in range(0, train.N, batch):
            idx = order[start:start + batch]
            diag = train_step(model, train.X[idx], train.Y[idx], entry.config, state, streams["combiner"], loss_weights)
            if not np.all(np.isfinite(diag.task_losses)) or not math.isfinite(diag.update_norm):
                raise FloatingPointError(f"non-finite loss or update at epoch {epoch}")
            diags.append(diag)
        auc, ll = _test_metrics(model, test)
        epochs.append({"epoch": epoch, "test_auc": auc, "test_logloss": ll, **aggregate_diagnostics(diags)})
    record = {"seed": seed, "status": "ok", "epochs": epochs}
    if loss_weights.mode == "uncertainty":
        record["final_log_variance"] = loss_weights.s.tolist()
    return record


def _sample_std(values):
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def _summarize(runs, n_tasks):
    ok = [r for r in runs if r["status"] == "ok"]
    summary = {"seeds_ok": len(ok), "seeds_failed": len(runs) - len(ok)}
    if not ok:
        return summary
    curves = {}
    for key in ("test_auc", "test_logloss"):
        per_seed = np.array([[e[key] for e in r["epochs"]] for r in ok])  # seeds x epochs x tasks
        curves[key + "_mean"] = per_seed.mean(axis=0).tolist()
        curves[key + "_std"] = (per_seed.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(per_seed.shape[1:])).tolist()
        final = per_seed[:, -1, :]
        summary[f"final_{key}_mean"] = final.mean(axis=0).tolist()
        summary[f"final_{key}_std"] = [_sample_std(final[:, k]) for k in range(n_tasks)]
        summary[f"final_{key}_per_seed"] = final.T.tolist()
    summary["curves"] = curves
    return summary


def run_single(config: ExperimentConfig, entry: CombinerEntry, progress=None) -> dict:
    """All seeds for one combiner; a failing seed is recorded, not raised."""
    runs = []
    n_tasks = None
    for seed in config.seeds:
        try:
            record = run_seed(config, entry, seed)
            n_tasks = len(record["epochs"][0]["test_auc"])
        except (InvalidInputError, ValueError, FloatingPointError, OSError) as exc:
            record = {"seed": seed, "status": "failed", "reason": f"{type(exc).__name__}: {exc}"}
        runs.append(record)
        if progress:
            progress(entry.label, seed, record["status"])
    return {
        "label": entry.label,
        "combiner": _combiner_dict(entry),
        "config": _config_dict(config),
        "n_tasks": n_tasks,
        "runs": runs,
        "summary": _summarize(runs, n_tasks),
    }


def run(config: ExperimentConfig, progress=None) -> list:
    """One report per configured combiner, in configured order."""
    return [run_single(config, entry, progress) for entry in config.combiners]


def _combiner_dict(entry):
    c = entry.config
    out = {"name": c.name, "groups": c.groups, "mask_rule": c.mask_rule.value, "cagrad_c": c.cagrad_c}
    b = c.basis
    out["basis"] = {"kind": b.kind, "r": b.r, "target_r": b.target_r, "oversample": b.oversample, "rel_cutoff": b.rel_cutoff}
    out["task_weights"] = None if entry.task_weights is None else list(entry.task_weights)
    return out


def _config_dict(config):
    return {
        "dataset": config.dataset,
        "test_fraction": config.test_fraction,
        "profile": config.profile,
        "loss_weights": config.loss_weights,
        "optimizer": config.optimizer,
        "epochs": config.epochs,
        "seeds": config.seeds,
    }


# -- serialization ----------------------------------------------------------------


def _clean(obj):
    """Replace NaN/inf by ``None`` so the JSON is strict."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


CURVE_COLUMNS = [
    "label", "seed", "epoch", "task", "train_loss", "test_auc", "test_logloss",
    "shared_mass_fraction", "mean_rank", "mean_update_norm", "empty_mask_steps",
]


def curves_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for r in report["runs"]:
        if r["status"] != "ok":
            continue
        for e in r["epochs"]:
            for k in range(len(e["test_auc"])):
                writer.writerow([
                    report["label"], r["seed"], e["epoch"], k,
                    _fmt(None if e["train_loss"] is None else e["train_loss"][k]),
                    _fmt(e["test_auc"][k]), _fmt(e["test_logloss"][k]),
                    _fmt(e["shared_mass_fraction"]), _fmt(e["mean_rank"]), _fmt(e["mean_update_norm"]),
                    e["empty_mask_steps"],
                ])
    return buf.getvalue()


def _fmt(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return repr(float(v))


def write_report(report: dict, out_dir) -> Path:
    """``<out_dir>/<label>/report.json`` plus ``curves.csv``; returns the report path."""
    d = Path(out_dir) / report["label"]
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(report_json(report), encoding="utf-8")
    (d / "curves.csv").write_text(curves_csv(report), encoding="utf-8")
    return d / "report.json"


def load_report(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read report {path}: {exc}") from exc
    if "label" not in report or "summary" not in report:
        raise InvalidInputError(f"{path} is not a run report")
    return report


# -- comparison ---------------------------------------------------------------------


def compare(reports: list, baseline: str = "sum") -> list:
    """Rows ``{method, task{k}_auc, task{k}_gain}`` in input order; gain is AUC minus the baseline's."""
    by_label = {r["label"]: r for r in reports}
    if baseline not in by_label:
        raise InvalidInputError(f"baseline {baseline!r} not among reports {list(by_label)}")
    base = by_label[baseline]["summary"].get("final_test_auc_mean")
    if base is None:
        raise InvalidInputError(f"baseline {baseline!r} has no successful seeds")
    rows = []
    for r in reports:
        auc = r["summary"].get("final_test_auc_mean")
        row = {"method": r["label"]}
        for k, b in enumerate(base):
            a = None if auc is None else auc[k]
            row[f"task{k}_auc"] = a
            row[f"task{k}_gain"] = None if a is None else a - b
        rows.append(row)
    return rows


def compare_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(rows[0])
    writer.writerow(header)
    for row in rows:
        writer.writerow([row["method"]] + [_fmt(row[h]) for h in header[1:]])
    return buf.getvalue()
