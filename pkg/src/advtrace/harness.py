"""Experiment orchestration: config parsing, the five-stage pipeline
(train classifier -> train tracers -> attack -> trace -> report), and
deterministic report emission.

Every stage reads only declared artifacts and writes only its own outputs,
so stages can be re-run independently. The whole pipeline is a pure function
of the config file; wall-clock timings go to a separate timings.json that is
not part of the report.
"""

from __future__ import annotations

import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from . import _kernels, attacks, separation, tracing
from .datax import Dataset, NoiseSpec, gen_blobs, gen_rings, load_csv, tracer_subset
from .errors import ConfigError, DatasetExhaustedError, StageInputError
from .separation import (HardLabelOracle, ParallelModel, classifier_accuracy,
                         load_bundle, load_checkpoint, random_tracer,
                         save_bundle, save_checkpoint, train_classifier,
                         train_tracer)

TRACER_MODES = ("noise_sensitive", "random_untrained")

DEFAULT_CONFIG_TOML = """\
# advtrace experiment configuration (all seeds are explicit on purpose)

[dataset]
kind = "blobs"        # blobs | rings | csv
k = 10
dim = 16
n_train = 5000
n_test = 1000
seed = 101

[classifier]
hidden = [64, 64]
epochs = 200
batch_size = 8
learning_rate = 1e-4
augment_noise = 0.03
seed = 202

[tracers]
count = 2
mode = "noise_sensitive"   # noise_sensitive | random_untrained
epochs = 3000
batch_size = 64
learning_rate = 1e-3
noise_hi = 0.03
subset_size = 1000
subset_seed = 303
seeds = [404, 505]
converge_threshold = 0.1
max_retrains = 5

[attack]
alphas = [0.05, 0.1, 0.15]
attacks = ["boundary", "hsja", "surfree"]
records_per_cell = 100
query_budget = 5000
source_copy = 0
seed = 606

[trace]
trials = 10000
max_copies = 10
seed = 707

[output]
dir = "out"
"""


@dataclass
class ExperimentConfig:
    dataset: dict
    classifier: dict
    tracers: dict
    attack: dict
    trace: dict
    output: dict
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def out_dir(self) -> str:
        return self.output["dir"]


def _require(section: dict, name: str, field_: str, types) -> object:
    if field_ not in section:
        raise ConfigError(f"missing field [{name}].{field_}")
    value = section[field_]
    if not isinstance(value, types):
        raise ConfigError(f"[{name}].{field_} has wrong type {type(value).__name__}")
    return value


def parse_config(data: dict) -> ExperimentConfig:
    for sec in ("dataset", "classifier", "tracers", "attack", "output"):
        if sec not in data:
            raise ConfigError(f"missing section [{sec}]")
    ds = dict(data["dataset"])
    kind = _require(ds, "dataset", "kind", str)
    if kind not in ("blobs", "rings", "csv"):
        raise ConfigError(f"[dataset].kind must be blobs|rings|csv, got {kind!r}")
    if kind == "csv":
        _require(ds, "dataset", "path", str)
        ds.setdefault("n_test", 0)
        ds.setdefault("seed", 0)
    else:
        for f_ in ("k", "dim", "n_train", "n_test", "seed"):
            _require(ds, "dataset", f_, int)
    clf = dict(data["classifier"])
    _require(clf, "classifier", "seed", int)
    clf.setdefault("hidden", [64, 64])
    clf.setdefault("epochs", 200)
    clf.setdefault("batch_size", 8)
    clf.setdefault("learning_rate", 1e-4)
    clf.setdefault("augment_noise", 0.03)
    tr = dict(data["tracers"])
    count = _require(tr, "tracers", "count", int)
    if count < 2:
        raise ConfigError("[tracers].count must be >= 2 for tracing runs")
    seeds = _require(tr, "tracers", "seeds", list)
    if len(seeds) != count:
        raise ConfigError(f"[tracers].seeds must list exactly count={count} seeds")
    mode = tr.setdefault("mode", "noise_sensitive")
    if mode not in TRACER_MODES:
        raise ConfigError(f"[tracers].mode must be one of {TRACER_MODES}")
    _require(tr, "tracers", "subset_seed", int)
    tr.setdefault("epochs", 3000)
    tr.setdefault("batch_size", 64)
    tr.setdefault("learning_rate", 1e-3)
    tr.setdefault("noise_hi", 0.03)
    tr.setdefault("subset_size", 1000)
    tr.setdefault("converge_threshold", 0.1)
    tr.setdefault("max_retrains", 5)
    at = dict(data["attack"])
    alphas = _require(at, "attack", "alphas", list)
    if any(a < 0 for a in alphas):
        raise ConfigError("[attack].alphas must be non-negative")
    names = _require(at, "attack", "attacks", list)
    for n in names:
        if n not in attacks.ATTACK_NAMES:
            raise ConfigError(f"[attack].attacks contains unknown attack {n!r}")
    _require(at, "attack", "seed", int)
    at.setdefault("records_per_cell", 100)
    at.setdefault("query_budget", 5000)
    at.setdefault("source_copy", 0)
    trc = dict(data.get("trace", {}))
    trc.setdefault("trials", 10000)
    trc.setdefault("max_copies", 10)
    trc.setdefault("seed", 707)
    out = dict(data["output"])
    _require(out, "output", "dir", str)
    return ExperimentConfig(dataset=ds, classifier=clf, tracers=tr, attack=at,
                            trace=trc, output=out, raw=data)


def load_config(path: str, out_override: str | None = None,
                master_seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config parse error in {path}: {e}") from None
    if out_override:
        data.setdefault("output", {})["dir"] = out_override
    if master_seed is not None:
        data = _reseed(data, master_seed)
    return parse_config(data)


def _reseed(data: dict, master: int) -> dict:
    """Derive every stage seed from one master seed (CLI --seed override)."""
    ss = np.random.SeedSequence(master)
    derived = [int(s.generate_state(1)[0]) % (2**31) for s in ss.spawn(6)]
    data = json.loads(json.dumps(data))  # deep copy
    data["dataset"]["seed"] = derived[0]
    data["classifier"]["seed"] = derived[1]
    data["tracers"]["subset_seed"] = derived[2]
    count = data["tracers"].get("count", 2)
    data["tracers"]["seeds"] = [derived[3] + 7 * i for i in range(count)]
    data["attack"]["seed"] = derived[4]
    data.setdefault("trace", {})["seed"] = derived[5]
    return data


def build_dataset(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, test) split, regenerated deterministically from the config."""
    ds = cfg.dataset
    if ds["kind"] == "csv":
        full = load_csv(ds["path"])
        n_test = ds.get("n_test", 0)
        if n_test <= 0:
            return full, full
        return full.split(len(full) - n_test)
    n_total = ds["n_train"] + ds["n_test"]
    n_per_class = -(-n_total // ds["k"])  # ceil
    if ds["kind"] == "blobs":
        kwargs = {k: ds[k] for k in ("spread", "level_gap", "lane_sep", "elongation")
                  if k in ds}
        full = gen_blobs(k=ds["k"], d=ds["dim"], n_per_class=n_per_class,
                         seed=ds["seed"], **kwargs)
    else:
        kwargs = {k: ds[k] for k in ("width",) if k in ds}
        full = gen_rings(k=ds["k"], d=ds["dim"], n_per_class=n_per_class,
                         seed=ds["seed"], **kwargs)
    return full.split(ds["n_train"])


# ---------------------------------------------------------------------------
# pipeline stages


def _classifier_path(out: str) -> str:
    return os.path.join(out, "classifier.dnet")


def _copy_dir(out: str, i: int) -> str:
    return os.path.join(out, "copies", f"copy{i:02d}")


def _cell_key(attack_name: str, alpha: float) -> str:
    return f"{attack_name}_a{alpha:g}"


def cmd_train_classifier(cfg: ExperimentConfig) -> str:
    """Train C, checkpoint it, and log its held-out accuracy."""
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    train, test = build_dataset(cfg)
    c = cfg.classifier
    net = train_classifier(train, epochs=c["epochs"], seed=c["seed"],
                           hidden=tuple(c["hidden"]), lr=c["learning_rate"],
                           batch_size=c["batch_size"],
                           augment_noise=c["augment_noise"])
    path = _classifier_path(out)
    save_checkpoint(net, path)
    metrics = {
        "train_accuracy": classifier_accuracy(net, train),
        "test_accuracy": classifier_accuracy(net, test),
        "epochs": c["epochs"],
        "seed": c["seed"],
    }
    with open(os.path.join(out, "classifier_metrics.json"), "w") as f:
        json.dump(metrics, f, indent=1, sort_keys=True)
    return path


def cmd_train_tracers(cfg: ExperimentConfig) -> list[str]:
    """Train m tracers (or draw untrained ones) and write copy bundles,
    plus the alpha-vs-accuracy table for the copies."""
    out = cfg.out_dir
    clf_path = _classifier_path(out)
    if not os.path.exists(clf_path):
        raise StageInputError(f"classifier checkpoint missing: {clf_path}")
    clf = load_checkpoint(clf_path)
    train, test = build_dataset(cfg)
    t = cfg.tracers
    noise = NoiseSpec(hi=t["noise_hi"])
    subset = tracer_subset(train, n=min(t["subset_size"], len(train)),
                           seed=t["subset_seed"])
    dirs = []
    tracers = []
    for i, seed in enumerate(t["seeds"]):
        if t["mode"] == "random_untrained":
            tracer = random_tracer(train.dim, train.k, seed)
        else:
            tracer = train_tracer(subset, seed=seed, epochs=t["epochs"],
                                  noise=noise, lr=t["learning_rate"],
                                  batch_size=t["batch_size"],
                                  converge_threshold=t["converge_threshold"],
                                  max_retrains=t["max_retrains"])
        tracers.append(tracer)
        model = ParallelModel(copy_id=i, classifier=clf, tracer=tracer,
                              alpha=max(cfg.attack["alphas"], default=0.15) or 0.15)
        d = _copy_dir(out, i)
        save_bundle(model, d, extra={"mode": t["mode"]})
        dirs.append(d)
    alphas = sorted({0.0, *[float(a) for a in cfg.attack["alphas"]]})
    table = {}
    for alpha in alphas:
        per_copy = []
        for i, tracer in enumerate(tracers):
            model = ParallelModel(copy_id=i, classifier=clf, tracer=tracer,
                                  alpha=alpha)
            preds = model.predict_batch(test.x)
            per_copy.append(float((preds == test.y).mean()))
        table[f"{alpha:g}"] = {"per_copy": per_copy, "min": min(per_copy)}
    with open(os.path.join(out, "alpha_accuracy.json"), "w") as f:
        json.dump({"mode": t["mode"], "alphas": table}, f, indent=1, sort_keys=True)
    return dirs


def _load_copies(cfg: ExperimentConfig, alpha: float) -> list[ParallelModel]:
    out = cfg.out_dir
    models = []
    for i in range(cfg.tracers["count"]):
        d = _copy_dir(out, i)
        if not os.path.exists(os.path.join(d, separation.BUNDLE_MANIFEST)):
            raise StageInputError(f"copy bundle missing: {d}")
        models.append(load_bundle(d, alpha=alpha))
    return models


def _attack_cell(cfg: ExperimentConfig, attack_name: str, alpha: float) -> dict:
    out = cfg.out_dir
    a = cfg.attack
    _, test = build_dataset(cfg)
    models = _load_copies(cfg, alpha)
    source = models[a["source_copy"]]
    oracle = HardLabelOracle(source)
    cell_seed = int(np.random.SeedSequence(
        [a["seed"], attacks.ATTACK_NAMES.index(attack_name),
         int(round(alpha * 1000))]).generate_state(1)[0])
    acfg = attacks.AttackConfig(attack=attack_name, query_budget=a["query_budget"],
                                seed=cell_seed)
    cell = _cell_key(attack_name, alpha)
    cell_dir = os.path.join(out, "attacks", cell)
    os.makedirs(cell_dir, exist_ok=True)
    status = {"cell": cell, "attack": attack_name, "alpha": alpha}
    try:
        records = attacks.run_attack_batch(oracle, test, acfg,
                                           a["records_per_cell"])
    except DatasetExhaustedError as e:
        status.update(ok=False, error=str(e))
    else:
        attacks.save_records(records, acfg, alpha,
                             os.path.join(cell_dir, "results.csv"))
        status.update(ok=True, records=len(records),
                      queries_total=int(sum(r.queries for r in records)),
                      mean_l2=float(np.mean([r.l2 for r in records])))
    with open(os.path.join(cell_dir, "status.json"), "w") as f:
        json.dump(status, f, indent=1, sort_keys=True)
    return status


def _attack_cell_worker(args) -> dict:
    raw, attack_name, alpha = args
    return _attack_cell(parse_config(raw), attack_name, alpha)


def cmd_attack(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    """Generate the per-(alpha, attack) record cells. alpha=0 cells are
    skipped with a note: the tracer has no influence there."""
    out = cfg.out_dir
    if not os.path.exists(_copy_dir(out, 0)):
        raise StageInputError("copy bundles missing; run train-tracers first")
    cells = []
    skipped = []
    for alpha in cfg.attack["alphas"]:
        for attack_name in cfg.attack["attacks"]:
            if alpha == 0:
                skipped.append(_cell_key(attack_name, alpha))
                continue
            cells.append((attack_name, float(alpha)))
    if skipped:
        os.makedirs(os.path.join(out, "attacks"), exist_ok=True)
        with open(os.path.join(out, "attacks", "skipped.json"), "w") as f:
            json.dump({"skipped_alpha_zero": sorted(skipped)}, f, indent=1,
                      sort_keys=True)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            statuses = list(pool.map(_attack_cell_worker,
                                     [(cfg.raw, n, a) for n, a in cells]))
    else:
        statuses = [_attack_cell(cfg, n, a) for n, a in cells]
    if any(not s["ok"] for s in statuses):
        raise DatasetExhaustedError(
            "; ".join(f"{s['cell']}: {s.get('error')}" for s in statuses
                      if not s["ok"]))
    return statuses


def cmd_trace(cfg: ExperimentConfig) -> dict:
    """Verdicts, tracing accuracy, DOL exports, transferability, and the
    multi-copy curve for every attack cell."""
    out = cfg.out_dir
    t = cfg.trace
    source_id = cfg.attack["source_copy"]
    summary: dict = {"cells": {}, "notes": []}
    for alpha in cfg.attack["alphas"]:
        if alpha == 0:
            summary["notes"].append(
                "alpha=0 skipped: O^F equals normalized classifier output, "
                "tracers have no influence")
            continue
        models = _load_copies(cfg, float(alpha))
        tracers = [m.tracer for m in models]
        for attack_name in cfg.attack["attacks"]:
            cell = _cell_key(attack_name, float(alpha))
            cell_dir = os.path.join(out, "attacks", cell)
            results_csv = os.path.join(cell_dir, "results.csv")
            if not os.path.exists(results_csv):
                raise StageInputError(f"attack results missing: {results_csv}")
            rows, originals, advs = attacks.load_records(results_csv)
            records = []
            verdicts = []
            for i, row in enumerate(rows):
                rec = attacks.AdversarialRecord(
                    x=originals[i], x_att=advs[i],
                    true_label=int(row["true_label"]),
                    attacked_label=int(row["attacked_label"]),
                    source_copy_id=int(row["source_copy"]),
                    queries=int(row["queries"]), l2=float(row["l2"]),
                    sample_id=int(row["sample_id"]))
                records.append(rec)
                verdicts.append(tracing.trace_source(
                    tracers, rec.x_att, rec.attacked_label, rec.true_label))
            accuracy = tracing.tracing_accuracy(
                verdicts, [r.source_copy_id for r in records])
            victim_id = next(i for i in range(len(models)) if i != source_id)
            d_s, d_v = tracing.collect_distributions(
                records, tracers[source_id], tracers[victim_id])
            transfer = tracing.transferability_report(records, models, verdicts)
            trace_dir = os.path.join(out, "trace", cell)
            os.makedirs(trace_dir, exist_ok=True)
            dol_rows = []
            for i, rec in enumerate(records):
                dol_rows.append((i, source_id, "source", d_s.samples[i],
                                 alpha, attack_name))
                dol_rows.append((i, victim_id, "victim", d_v.samples[i],
                                 alpha, attack_name))
            tracing.export_dol_csv(os.path.join(trace_dir, "dol.csv"), dol_rows)
            rng = np.random.default_rng(
                np.random.SeedSequence([t["seed"], cfg.attack["attacks"].index(attack_name),
                                        int(round(alpha * 1000))]))
            curve = {}
            for n in range(2, t["max_copies"] + 1):
                curve[str(n)] = tracing.estimate_multicopy_accuracy(
                    d_s, d_v, n, trials=t["trials"], rng=rng)
            cell_summary = {
                "attack": attack_name,
                "alpha": float(alpha),
                "records": len(records),
                "tracing_accuracy": accuracy,
                "dol_source_mean": float(d_s.samples.mean()),
                "dol_source_median": float(np.median(d_s.samples)),
                "dol_victim_mean": float(d_v.samples.mean()),
                "dol_victim_median": float(np.median(d_v.samples)),
                "multicopy_estimate": curve,
                "measured_2copy": accuracy,
                "transferability": transfer.as_dict(),
                "queries_total": int(sum(r.queries for r in records)),
            }
            with open(os.path.join(trace_dir, "summary.json"), "w") as f:
                json.dump(cell_summary, f, indent=1, sort_keys=True)
            summary["cells"][cell] = cell_summary
    with open(os.path.join(out, "trace", "summary.json"), "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    return summary


def _hist_rows(cell: str, role: str, samples: np.ndarray, width: float = 0.05):
    lo = np.floor(samples.min() / width) * width
    hi = np.ceil(samples.max() / width) * width
    edges = np.arange(lo, hi + width, width)
    if len(edges) < 2:
        edges = np.array([lo, lo + width])
    counts, edges = np.histogram(samples, bins=edges)
    return [(cell, role, repr(float(e)), int(c))
            for e, c in zip(edges[:-1], counts)]


def cmd_report(cfg: ExperimentConfig) -> str:
    """One machine-readable consolidated report plus plot-ready CSV tables."""
    out = cfg.out_dir
    report: dict = {
        "backend": _kernels.BACKEND,
        "tracer_mode": cfg.tracers["mode"],
        "gaps": [],
    }
    clf_metrics = os.path.join(out, "classifier_metrics.json")
    if os.path.exists(clf_metrics):
        with open(clf_metrics) as f:
            report["classifier"] = json.load(f)
    else:
        report["gaps"].append("classifier_metrics.json")
    alpha_acc = os.path.join(out, "alpha_accuracy.json")
    if os.path.exists(alpha_acc):
        with open(alpha_acc) as f:
            report["alpha_accuracy"] = json.load(f)
    else:
        report["gaps"].append("alpha_accuracy.json")
    trace_summary_path = os.path.join(out, "trace", "summary.json")
    if os.path.exists(trace_summary_path):
        with open(trace_summary_path) as f:
            trace_summary = json.load(f)
        report["cells"] = trace_summary["cells"]
        report["notes"] = trace_summary.get("notes", [])
    else:
        report["gaps"].append("trace/summary.json")
        trace_summary = {"cells": {}}
    report["query_total"] = int(sum(c.get("queries_total", 0)
                                    for c in trace_summary["cells"].values()))
    with open(os.path.join(out, "report.json"), "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)

    # Table analogs as CSV
    if "alpha_accuracy" in report:
        with open(os.path.join(out, "table1_alpha_accuracy.csv"), "w",
                  newline="") as f:
            w = csv.writer(f)
            w.writerow(["alpha", "min_copy_accuracy", "per_copy"])
            for alpha, row in sorted(report["alpha_accuracy"]["alphas"].items(),
                                     key=lambda kv: float(kv[0])):
                w.writerow([alpha, repr(row["min"]),
                            ";".join(repr(v) for v in row["per_copy"])])
    cells = trace_summary["cells"]
    with open(os.path.join(out, "table2_tracing.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["attack", "alpha", "tracing_accuracy", "records"])
        for key in sorted(cells):
            c = cells[key]
            w.writerow([c["attack"], repr(c["alpha"]),
                        repr(c["tracing_accuracy"]), c["records"]])
    with open(os.path.join(out, "table3_modes.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tracer_mode", "attack", "alpha", "tracing_accuracy"])
        for key in sorted(cells):
            c = cells[key]
            w.writerow([cfg.tracers["mode"], c["attack"], repr(c["alpha"]),
                        repr(c["tracing_accuracy"])])
    with open(os.path.join(out, "table4_transferability.csv"), "w",
              newline="") as f:
        w = csv.writer(f)
        w.writerow(["attack", "alpha", "NTr", "NTr+", "Tr", "Tr+",
                    "tr_rate", "total_rate"])
        for key in sorted(cells):
            c = cells[key]
            tr = c["transferability"]
            w.writerow([c["attack"], repr(c["alpha"]), tr["NTr"], tr["NTr+"],
                        tr["Tr"], tr["Tr+"], repr(tr["tr_rate"]),
                        repr(tr["total_rate"])])
    with open(os.path.join(out, "fig5_multicopy.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["attack", "alpha", "n_copies", "estimated_accuracy",
                    "measured_2copy"])
        for key in sorted(cells):
            c = cells[key]
            for n, v in sorted(c["multicopy_estimate"].items(),
                               key=lambda kv: int(kv[0])):
                w.writerow([c["attack"], repr(c["alpha"]), n, repr(v),
                            repr(c["measured_2copy"]) if n == "2" else ""])
    hist_rows = []
    for key in sorted(cells):
        dol_csv = os.path.join(out, "trace", key, "dol.csv")
        if not os.path.exists(dol_csv):
            continue
        source_vals, victim_vals = [], []
        with open(dol_csv, newline="") as f:
            for row in csv.DictReader(f):
                (source_vals if row["role"] == "source" else victim_vals).append(
                    float(row["dol"]))
        hist_rows += _hist_rows(key, "source", np.asarray(source_vals))
        hist_rows += _hist_rows(key, "victim", np.asarray(victim_vals))
    with open(os.path.join(out, "dol_histogram.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell", "role", "bin_lo", "count"])
        for row in hist_rows:
            w.writerow(row)
    return os.path.join(out, "report.json")


def cmd_all(cfg: ExperimentConfig, jobs: int = 1) -> str:
    timings = {}
    for name, fn in (("train_classifier", lambda: cmd_train_classifier(cfg)),
                     ("train_tracers", lambda: cmd_train_tracers(cfg)),
                     ("attack", lambda: cmd_attack(cfg, jobs=jobs)),
                     ("trace", lambda: cmd_trace(cfg)),
                     ("report", lambda: cmd_report(cfg))):
        start = time.perf_counter()
        fn()
        timings[name] = time.perf_counter() - start
    with open(os.path.join(cfg.out_dir, "timings.json"), "w") as f:
        json.dump(timings, f, indent=1, sort_keys=True)
    return os.path.join(cfg.out_dir, "report.json")
