"""Variant × dataset experiment grids.

Every (variant, dataset) cell is trained and evaluated independently. The
baseline variant is repeated over several seeds so relative improvements can
carry an uncertainty; other variants run once. Force MAEs of the variants
are then rank-correlated between datasets and the datasets clustered on
``1 - tau``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datasets.subsets import split_same_vs_separate_trajectory, subset_by_elements, subset_by_size, subset_random
from ..errors import ConfigError, ContractViolation
from ..model.config import ModelConfig
from ..training.config import TrainConfig
from .cluster import format_dendrogram, hierarchical_cluster
from .stats import improvement_interval, kendall_tau, relative_improvement

BASELINE = "baseline"
RECORD_COLUMNS = ("variant", "dataset", "seed", "force_mae", "energy_mae", "throughput", "wall_time", "status")
SUBSET_KINDS = ("full", "elements", "size", "random", "same_trajectory")


@dataclass
class RunRecord:
    variant: str
    dataset: str
    seed: int
    force_mae: float = float("nan")
    energy_mae: float = float("nan")
    throughput: float = float("nan")
    wall_time: float = 0.0
    status: str = "ok"

    def __post_init__(self):
        if self.status == "ok" and not all(math.isfinite(v) for v in (self.force_mae, self.energy_mae)):
            raise ContractViolation("records with status ok need finite metrics")


@dataclass(frozen=True)
class Variant:
    id: str
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    correlate: bool = True


@dataclass(frozen=True)
class DatasetSpec:
    id: str
    subset: dict = field(default_factory=dict)
    val_split: str = "val_id"


@dataclass(frozen=True)
class GridSpec:
    variants: tuple
    datasets: tuple
    baseline_seeds: int = 5
    budget: int = 1

    def __post_init__(self):
        if not self.variants or not self.datasets:
            raise ConfigError("grid needs at least one variant and one dataset")
        ids = [v.id for v in self.variants]
        if len(set(ids)) != len(ids):
            raise ConfigError("variant ids must be unique")
        if len({d.id for d in self.datasets}) != len(self.datasets):
            raise ConfigError("dataset ids must be unique")
        if self.baseline_seeds < 1 or self.budget < 1:
            raise ConfigError("baseline_seeds and budget must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        data = dict(data)
        _strict(data, {"variants", "datasets", "baseline_seeds", "budget"}, "grid")
        variants = []
        for v in data.get("variants", []):
            _strict(v, {"id", "model", "train", "correlate"}, "grid.variants")
            TrainConfig.from_dict(v.get("train", {}))
            variants.append(Variant(str(v["id"]), dict(v.get("model", {})), dict(v.get("train", {})),
                                    bool(v.get("correlate", True))))
        datasets = []
        for d in data.get("datasets", []):
            _strict(d, {"id", "subset", "val_split"}, "grid.datasets")
            subset = dict(d.get("subset", {}) or {})
            if subset.get("kind", "full") not in SUBSET_KINDS:
                raise ConfigError(f"grid.datasets: subset kind must be one of {SUBSET_KINDS}")
            datasets.append(DatasetSpec(str(d["id"]), subset, str(d.get("val_split", "val_id"))))
        return cls(tuple(variants), tuple(datasets), int(data.get("baseline_seeds", 5)), int(data.get("budget", 1)))


def _strict(data, known, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    if "id" in known and "id" not in data and where != "grid":
        raise ConfigError(f"{where}: every entry needs an id")
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


def apply_subset(dataset, spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", "full")
    if kind == "full":
        _strict(spec, set(), "subset")
        return dataset
    if kind == "elements":
        _strict(spec, {"allowed", "mode"}, "subset")
        return subset_by_elements(dataset, spec["allowed"], spec.get("mode", "catalyst"))
    if kind == "size":
        _strict(spec, {"max_atoms"}, "subset")
        return subset_by_size(dataset, int(spec["max_atoms"]))
    if kind == "random":
        _strict(spec, {"n", "seed"}, "subset")
        return subset_random(dataset, int(spec["n"]), int(spec.get("seed", 0)))
    if kind == "same_trajectory":
        _strict(spec, {"fraction", "seed"}, "subset")
        return split_same_vs_separate_trajectory(dataset, float(spec["fraction"]), int(spec.get("seed", 0)))
    raise ConfigError(f"unknown subset kind {kind!r}")


def run_cell(job: dict) -> RunRecord:
    """Train and evaluate one cell; failures become records with a failure status."""
    import torch

    from ..model.network import GemNetOC
    from ..training.metrics import evaluate
    from ..training.trainer import train

    start = time.perf_counter()
    if job.get("error"):
        return RunRecord(job["variant"], job["dataset"], job["seed"], status=f"failed: {job['error']}")
    try:
        if job.get("threads"):
            torch.set_num_threads(job["threads"])
        model_cfg = ModelConfig.from_dict(job["model"])
        train_cfg = TrainConfig.from_dict(job["train"])
        model = GemNetOC(model_cfg, seed=job["seed"])
        result = train(model, job["train_systems"], job["val_systems"], train_cfg)
        metrics = evaluate(result.model, job["val_systems"], result.normalizer, train_cfg.energy_threshold,
                           train_cfg.force_threshold, train_cfg.eval_batch_size)
        return RunRecord(job["variant"], job["dataset"], job["seed"], metrics.force_mae, metrics.energy_mae,
                         float(result.throughput["samples_per_sec"]), time.perf_counter() - start)
    except Exception as exc:  # a failed cell must not stop the grid
        detail = traceback.format_exception_only(type(exc), exc)[-1].strip()
        return RunRecord(job["variant"], job["dataset"], job["seed"], wall_time=time.perf_counter() - start,
                         status=f"failed: {detail}")


def plan_jobs(spec: GridSpec, dataset, base_model: dict, base_train: dict, threads: int | None = None) -> list:
    jobs = []
    for dspec in spec.datasets:
        error = None
        try:
            ds = apply_subset(dataset, dspec.subset)
            train_systems = ds.split("train")
            val_systems = ds.split(dspec.val_split)
        except ConfigError:
            raise
        except Exception as exc:  # recorded per cell; the rest of the grid still runs
            error = traceback.format_exception_only(type(exc), exc)[-1].strip()
            train_systems = val_systems = []
        for variant in spec.variants:
            seeds = range(spec.baseline_seeds) if variant.id == BASELINE else range(1)
            for seed in seeds:
                train_cfg = {**base_train, **variant.train, "seed": seed}
                jobs.append({
                    "variant": variant.id,
                    "dataset": dspec.id,
                    "seed": seed,
                    "model": ModelConfig.from_dict({**base_model, **variant.model}).to_dict(),
                    "train": TrainConfig.from_dict(train_cfg).to_dict(),
                    "train_systems": train_systems,
                    "val_systems": val_systems,
                    "threads": threads,
                    "error": error,
                })
    return jobs


@dataclass
class GridResult:
    records: list
    datasets: list
    variants: list
    mae_table: dict
    tau: np.ndarray
    merges: list
    improvements: list
    throughput: dict


def _sort_key(record: RunRecord):
    return (record.dataset, record.variant, record.seed)


def cell_mae(records, variant: str, dataset: str) -> float:
    vals = [r.force_mae for r in records if r.variant == variant and r.dataset == dataset and r.status == "ok"]
    return float(np.mean(vals)) if vals else float("nan")


def summarize(records, spec: GridSpec) -> GridResult:
    """Correlation, clustering, improvements and throughput from finished records.

    Records are sorted first, so the summary does not depend on the order in
    which cells finished.
    """
    records = sorted(records, key=_sort_key)
    datasets = [d.id for d in spec.datasets]
    variants = [v.id for v in spec.variants]
    correlated = [v.id for v in spec.variants if v.correlate]
    table = {(v, d): cell_mae(records, v, d) for v in variants for d in datasets}
    n = len(datasets)
    tau = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            x = [table[(v, datasets[i])] for v in correlated]
            y = [table[(v, datasets[j])] for v in correlated]
            ok = [k for k in range(len(x)) if math.isfinite(x[k]) and math.isfinite(y[k])]
            value = kendall_tau([x[k] for k in ok], [y[k] for k in ok]) if len(ok) >= 2 else float("nan")
            tau[i, j] = tau[j, i] = value
    distance = np.where(np.isfinite(tau), 1.0 - tau, 2.0)
    np.fill_diagonal(distance, 0.0)
    merges = hierarchical_cluster(distance)

    improvements = []
    ratios = {}
    for d in datasets:
        base = [r for r in records if r.variant == BASELINE and r.dataset == d and r.status == "ok"]
        base_tp = float(np.median([r.throughput for r in base])) if base else float("nan")
        for v in variants:
            if v == BASELINE:
                continue
            mae = table[(v, d)]
            row = {"variant": v, "dataset": d, "improvement": float("nan"), "low": float("nan"),
                   "high": float("nan")}
            if base and math.isfinite(mae) and mae > 0:
                maes = [r.force_mae for r in base]
                if len(maes) >= 2:
                    point, (lo, hi) = improvement_interval(maes, mae)
                    row.update(improvement=point, low=lo, high=hi)
                else:
                    row["improvement"] = relative_improvement(maes[0], mae)
            improvements.append(row)
            tps = [r.throughput for r in records if r.variant == v and r.dataset == d and r.status == "ok"]
            if tps and base_tp > 0 and math.isfinite(base_tp):
                ratios.setdefault(v, []).append(float(np.median(tps)) / base_tp - 1.0)
    throughput = {v: float(np.median(r)) for v, r in sorted(ratios.items())}
    return GridResult(records, datasets, variants, table, tau, merges, improvements, throughput)


def run_grid(spec: GridSpec, dataset, base_model: dict | None = None, base_train: dict | None = None,
             threads: int | None = None, log=None) -> GridResult:
    log = log or (lambda msg: None)
    jobs = plan_jobs(spec, dataset, base_model or {}, base_train or {}, threads)
    log(f"{len(jobs)} cells, budget {spec.budget}")
    if spec.budget == 1:
        records = []
        for job in jobs:
            records.append(run_cell(job))
            r = records[-1]
            log(f"{r.variant} / {r.dataset} / seed {r.seed}: {r.status} force MAE {r.force_mae:.5g}")
    else:
        with ProcessPoolExecutor(max_workers=spec.budget) as pool:
            records = list(pool.map(run_cell, jobs))
    return summarize(records, spec)


def _fmt(v):
    return repr(v) if isinstance(v, float) else v  # shortest text that reads back to the same float


def write_grid_outputs(result: GridResult, out_dir) -> dict:
    """records.csv, tau_matrix.csv, dendrogram.txt, improvements.csv, throughput.csv and long.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["records"] = out / "records.csv"
    with open(paths["records"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in result.records:
            w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])
    paths["tau"] = out / "tau_matrix.csv"
    with open(paths["tau"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", *result.datasets])
        for name, row in zip(result.datasets, result.tau):
            w.writerow([name, *(_fmt(float(x)) for x in row)])
    paths["dendrogram"] = out / "dendrogram.txt"
    paths["dendrogram"].write_text(format_dendrogram(result.merges, result.datasets), encoding="utf-8")
    paths["improvements"] = out / "improvements.csv"
    with open(paths["improvements"], "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["variant", "dataset", "improvement", "low", "high"], lineterminator="\n")
        w.writeheader()
        for row in result.improvements:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    paths["throughput"] = out / "throughput.csv"
    with open(paths["throughput"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "median_relative_throughput"])
        for v, x in result.throughput.items():
            w.writerow([v, _fmt(x)])
    paths["long"] = out / "long.csv"
    with open(paths["long"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "dataset", "seed", "metric", "value"])
        for r in result.records:
            for metric in ("force_mae", "energy_mae", "throughput"):
                w.writerow([r.variant, r.dataset, r.seed, metric, _fmt(getattr(r, metric))])
    return paths


def read_records(path) -> list:
    """Records from a ``records.csv`` written by :func:`write_grid_outputs`."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(RECORD_COLUMNS):
            raise ContractViolation(f"{path}: expected columns {', '.join(RECORD_COLUMNS)}")
        for row in reader:
            out.append(RunRecord(row["variant"], row["dataset"], int(row["seed"]), float(row["force_mae"]),
                                 float(row["energy_mae"]), float(row["throughput"]), float(row["wall_time"]),
                                 row["status"]))
    return out


def spec_from_records(records) -> GridSpec:
    """Minimal grid description (all variants correlated) recovered from records."""
    variants = sorted({r.variant for r in records}, key=lambda v: (v != BASELINE, v))
    datasets = sorted({r.dataset for r in records})
    return GridSpec(tuple(Variant(v) for v in variants), tuple(DatasetSpec(d) for d in datasets))


def grid_spec_to_dict(spec: GridSpec) -> dict:
    return dataclasses.asdict(spec)
