"""Experiment orchestration: configs, a resumable result store, deterministic parallel scheduling."""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from functools import lru_cache
from pathlib import Path
from typing import Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import analysis
from .circuits import SUPPORTED_DIMS, QccnnCircuitSpec, count_parameters, is_untrainable_diagonal, sample_random_qnn
from .classical import CnnArchitecture, sample_random_dense
from .datasets import (
    CapacityError,
    DataSetVersion,
    FormatError,
    ImageCorpus,
    fit_pca,
    load_mnist_binary,
    load_pgm_corpus,
    load_version,
    make_versions,
    save_version,
)
from .models import BaselineArchitecture, default_train_config, load_architecture, train_model
from .seeding import derive_seed
from .training import RunRecord

SCHEMA_VERSION = 1
DATA_ROOT_ENV = "QNNBENCH_DATA_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DEPENDENCY = 4
EXIT_PARTIAL = 5
EXIT_EMPTY_REPORT = 6


class ExperimentError(Exception):
    exit_code = 1


class ConfigError(ExperimentError):
    exit_code = EXIT_CONFIG


class DataError(ExperimentError):
    exit_code = EXIT_DATA


class DependencyError(ExperimentError):
    exit_code = EXIT_DEPENDENCY


class EmptyReportError(ExperimentError):
    exit_code = EXIT_EMPTY_REPORT


# ---------------------------------------------------------------------- config

# Fields describing where and how a run executes, not what it computes.
_EXECUTION_FIELDS = {"workers", "out", "resume", "data_root", "timing_log"}


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int = SCHEMA_VERSION
    kind: Literal["random_suite", "conv_suite", "cross_dataset", "analyze"] = "random_suite"
    source: Literal["hypercube", "mnist", "image_corpus"] = "hypercube"
    corpus: str = "image_corpus"
    sizes: list[int] = Field(default_factory=lambda: [200, 500])
    dims: list[int] = Field(default_factory=lambda: [2])
    family: Literal["dense", "qnn"] = "dense"
    n_models: int = Field(50, ge=1)
    n_seeds: int = Field(10, ge=1)
    max_epochs: int = Field(100, ge=1)
    master_seed: int = 0
    data_seed: int = 0
    learning_rate: float | None = None
    batch_size: int | None = None
    full_batch: bool = False
    # convolutional grid
    filter_sizes: list[int] = Field(default_factory=lambda: [2, 3])
    qccnn_layers: list[int] = Field(default_factory=lambda: [1, 2, 3])
    entanglements: list[Literal["none", "circular", "all_to_all"]] = Field(
        default_factory=lambda: ["none", "circular", "all_to_all"])
    n_dconv: list[int] = Field(default_factory=lambda: [0, 1, 2])
    biases: list[bool] = Field(default_factory=lambda: [False, True])
    include_baseline: bool = True
    # cross-dataset transfer
    suites: list[str] = Field(default_factory=list)
    top_k: int = Field(3, ge=1)
    # execution
    workers: int = Field(1, ge=1)
    out: str = "results"
    resume: bool = False
    data_root: str | None = None
    timing_log: str | None = None

    @field_validator("sizes")
    @classmethod
    def _even_sizes(cls, v):
        if not v or any(n <= 0 or n % 2 for n in v):
            raise ValueError("sizes must be positive even numbers")
        return v

    @field_validator("dims")
    @classmethod
    def _dims(cls, v):
        if not v or any(d not in SUPPORTED_DIMS for d in v):
            raise ValueError(f"dims must be drawn from {SUPPORTED_DIMS}")
        return v

    @field_validator("filter_sizes")
    @classmethod
    def _filters(cls, v):
        if any(k < 1 for k in v):
            raise ValueError("filter sizes must be positive")
        return v

    def semantic_dict(self) -> dict:
        return self.model_dump(mode="json", exclude=_EXECUTION_FIELDS)

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path=None, **overrides) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------------- store


def _dump(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class ResultStore:
    """Directory of run records indexed by a checksummed manifest.

    Attaching a config with the same hash continues the store: completed cells
    are skipped. ``resume=True`` additionally insists that the store exists.
    Only the scheduling process writes. Every record is written atomically
    before its checksum enters the manifest, so a killed run leaves at worst an
    orphan record that is recomputed and overwritten on resume.
    """

    def __init__(self, root, config: ExperimentConfig | None = None):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text())
        else:
            self.manifest = None
        if config is not None:
            self._attach(config)

    def _attach(self, config: ExperimentConfig) -> None:
        h = config.config_hash()
        if self.manifest is None:
            if config.resume:
                raise DependencyError(f"nothing to resume: {self.root} is not a result store")
            self.manifest = {"schema_version": SCHEMA_VERSION, "config_hash": h,
                             "config": config.semantic_dict(), "cells": {}}
            self._save_manifest()
            return
        if self.manifest["config_hash"] != h:
            raise ConfigError(f"{self.root} holds results for a different config "
                              f"({self.manifest['config_hash'][:12]} != {h[:12]})")

    @property
    def config(self) -> dict:
        if self.manifest is None:
            raise DependencyError(f"{self.root} is not a result store (no manifest.json)")
        return self.manifest["config"]

    def _save_manifest(self) -> None:
        self.manifest["cells"] = dict(sorted(self.manifest["cells"].items()))
        _atomic_write(self.manifest_path, _dump(self.manifest))

    def record_path(self, key: str) -> Path:
        return self.root / "records" / f"{key}.json"

    def has(self, key: str) -> bool:
        """True when the record exists and matches its manifest checksum."""
        digest = self.manifest["cells"].get(key)
        path = self.record_path(key)
        if digest is None or not path.exists():
            return False
        return hashlib.sha256(path.read_bytes()).hexdigest() == digest

    def put(self, key: str, record: dict) -> None:
        data = _dump(record)
        _atomic_write(self.record_path(key), data)
        self.manifest["cells"][key] = hashlib.sha256(data).hexdigest()
        self._save_manifest()

    def records(self, prefix: str = "") -> list[RunRecord]:
        out = []
        for key in sorted(self.manifest["cells"]):
            if key.startswith(prefix):
                out.append(RunRecord.from_dict(json.loads(self.record_path(key).read_text())))
        return out

    def write_json(self, relpath: str, obj) -> Path:
        path = self.root / relpath
        _atomic_write(path, _dump(obj))
        return path

    def write_text(self, relpath: str, text: str) -> Path:
        path = self.root / relpath
        _atomic_write(path, text.encode())
        return path

    def read_json(self, relpath: str):
        path = self.root / relpath
        if not path.exists():
            raise DependencyError(f"missing {path}")
        return json.loads(path.read_text())

    def data_dir(self, name: str) -> Path:
        return self.root / "data" / name


# ------------------------------------------------------------------------ data


def data_root(config: ExperimentConfig) -> Path:
    root = config.data_root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise DataError(f"no data root: set {DATA_ROOT_ENV} or data_root in the config")
    return Path(root)


def _find_idx(directory: Path, kind: str) -> list[Path]:
    return sorted(p for p in directory.glob(f"*{kind}-idx*-ubyte*") if not p.name.endswith(".tmp"))


def load_image_source(config: ExperimentConfig) -> ImageCorpus:
    root = data_root(config)
    try:
        if config.source == "mnist":
            directory = root / "mnist" if (root / "mnist").is_dir() else root
            images, labels = _find_idx(directory, "images"), _find_idx(directory, "labels")
            if not images or len(images) != len(labels):
                raise DataError(f"no matching IDX image/label files under {directory}")
            parts = [load_mnist_binary(i, l) for i, l in zip(images, labels)]
            return ImageCorpus(np.concatenate([p.images for p in parts]),
                               np.concatenate([p.labels for p in parts]), "mnist")
        directory = root / config.corpus
        if not directory.is_dir():
            raise DataError(f"image corpus directory {directory} does not exist")
        return load_pgm_corpus(directory)
    except (FormatError, OSError) as exc:
        raise DataError(str(exc)) from exc


def build_versions(config: ExperimentConfig, reduced: bool = True) -> list[DataSetVersion]:
    """All data set versions a config asks for (PCA-reduced per ``dims`` or full-resolution images)."""
    try:
        if config.source == "hypercube":
            if not reduced:
                raise ConfigError("the hypercube source has no image form")
            return [v for d in config.dims for v in make_versions("hypercube", config.sizes, config.data_seed, d=d)]
        corpus = load_image_source(config)
        if not reduced:
            return make_versions(corpus, config.sizes, config.data_seed)
        out = []
        for d in config.dims:
            pca = fit_pca(corpus.flattened(), d)
            out += make_versions(corpus, config.sizes, config.data_seed, pca=pca)
        return out
    except CapacityError as exc:
        raise DataError(str(exc)) from exc


def persist_versions(store: ResultStore, versions: list[DataSetVersion]) -> list[str]:
    names = []
    for v in versions:
        target = store.data_dir(v.name)
        if not (target / "manifest.json").exists():
            save_version(v, target)
        names.append(v.name)
    return names


# ------------------------------------------------------------------ scheduling


@lru_cache(maxsize=16)
def _cached_version(path: str) -> DataSetVersion:
    return load_version(path)


def run_cell(task: dict) -> dict:
    """Train one (architecture, data, seed) cell. Runs in worker processes; never touches the store."""
    arch = load_architecture(task["architecture"])
    data = _cached_version(task["data_dir"])
    overrides = {k: v for k, v in task["train"].items() if k != "seed"}
    config = default_train_config(task["family"], task["train"]["seed"], **overrides)
    try:
        record = train_model(task["family"], arch, data, config, model_id=task["model_id"])
    except Exception as exc:  # recorded and reported; the suite continues
        record = RunRecord(task["model_id"], task["family"], arch.to_dict(), task["train"]["seed"], [], [], [],
                           [], 0.0, status="failed", diagnostic=f"{type(exc).__name__}: {exc}")
    record.metadata.update(task.get("metadata", {}))
    return {"key": task["key"], "record": record.to_dict(), "duration_s": record.duration_s}


def execute(store: ResultStore, tasks: list[dict], workers: int = 1,
            progress: Callable[[int, int], None] | None = None, timing_log: str | None = None) -> dict:
    """Run every task whose record is not already stored. Returns execution counts."""
    pending = [t for t in tasks if not store.has(t["key"])]
    done = 0
    log = open(timing_log, "a") if timing_log else None

    def finish(result):
        nonlocal done
        store.put(result["key"], result["record"])
        done += 1
        if log:
            log.write(json.dumps({"key": result["key"], "duration_s": result["duration_s"]}) + "\n")
        if progress:
            progress(done, len(pending))

    try:
        if workers <= 1 or len(pending) <= 1:
            for t in pending:
                finish(run_cell(t))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(run_cell, t) for t in pending]
                for fut in as_completed(futures):
                    finish(fut.result())
    finally:
        if log:
            log.close()
    return {"total": len(tasks), "executed": len(pending), "skipped": len(tasks) - len(pending)}


def _train_overrides(config: ExperimentConfig) -> dict:
    out = {"max_epochs": config.max_epochs}
    if config.learning_rate is not None:
        out["learning_rate"] = config.learning_rate
    if config.full_batch:
        out["batch_size"] = None
    elif config.batch_size is not None:
        out["batch_size"] = config.batch_size
    return out


def _task(key, family, arch, data_dir, seed, overrides, model_id, metadata=None) -> dict:
    return {"key": key, "family": family, "architecture": arch.to_dict(), "data_dir": str(data_dir),
            "train": {**overrides, "seed": int(seed)}, "model_id": model_id, "metadata": metadata or {}}


# ---------------------------------------------------------------------- suites


class SuiteResult(dict):
    """Mapping of data-version name to :class:`analysis.SuiteSummary`, plus execution counts."""

    counts: dict
    n_failed: int = 0


def _summaries(store: ResultStore, versions: list[str], excluded: dict[str, list[str]],
               counts: dict) -> SuiteResult:
    result = SuiteResult()
    result.counts = counts
    failed = 0
    for name in versions:
        records = store.records(f"{name}__")
        if not any(r.status == "ok" for r in records):
            failed += len(records)  # nothing to summarize; reported through the failure count
            continue
        summary = analysis.summarize(records, excluded.get(name, []))
        failed += summary.n_failed
        store.write_json(f"summaries/{name}.json", {**summary.to_dict(), "data": name})
        store.write_text(f"tables/summary_{name}.csv", analysis.to_csv([m.row() for m in summary.models]))
        result[name] = summary
    result.n_failed = failed
    return result


def sample_architecture(family: str, d: int, master_seed: int, index: int):
    seed = derive_seed(master_seed, "model", index)
    return sample_random_qnn(d, seed) if family == "qnn" else sample_random_dense(d, seed)


def run_random_suite(config: ExperimentConfig, progress=None) -> SuiteResult:
    """Sample ``n_models`` architectures and train each with ``n_seeds`` initialisations on every version."""
    if config.kind != "random_suite":
        raise ConfigError(f"expected a random_suite config, got {config.kind}")
    store = ResultStore(config.out, config)
    versions = build_versions(config)
    names = persist_versions(store, versions)
    overrides = _train_overrides(config)
    tasks, excluded = [], {}
    for v, name in zip(versions, names):
        for m in range(config.n_models):
            arch = sample_architecture(config.family, v.d, config.master_seed, m)
            model_id = f"{config.family}-d{v.d}-m{m:03d}"
            store.write_json(f"architectures/{model_id}.json", arch.to_dict())
            if config.family == "qnn" and is_untrainable_diagonal(arch):
                excluded.setdefault(name, []).append(model_id)
            for s in range(config.n_seeds):
                seed = derive_seed(config.master_seed, "init", m, s)
                tasks.append(_task(f"{name}__{model_id}__s{s:02d}", config.family, arch, store.data_dir(name),
                                   seed, overrides, model_id))
    counts = execute(store, tasks, config.workers, progress, config.timing_log)
    return _summaries(store, names, excluded, counts)


def conv_grid(config: ExperimentConfig) -> list[tuple[str, str, object]]:
    """``(model_id, family, architecture)`` for the enumerated convolutional comparison."""
    grid = []
    for k in config.filter_sizes:
        for ent in config.entanglements:
            for layers in config.qccnn_layers:
                grid.append((f"qccnn-k{k}-{ent}-l{layers}", "qccnn", QccnnCircuitSpec(k, k, layers, ent)))
        for nd in config.n_dconv:
            for bias in config.biases:
                grid.append((f"cnn-k{k}-d{nd}-b{int(bias)}", "cnn", CnnArchitecture(k, nd, bias)))
    if config.include_baseline:
        grid.append(("baseline", "baseline", BaselineArchitecture()))
    return grid


def run_conv_suite(config: ExperimentConfig, progress=None) -> SuiteResult:
    if config.kind != "conv_suite":
        raise ConfigError(f"expected a conv_suite config, got {config.kind}")
    if config.source == "hypercube":
        raise ConfigError("the convolutional suite needs an image source")
    store = ResultStore(config.out, config)
    versions = build_versions(config, reduced=False)
    names = persist_versions(store, versions)
    overrides = _train_overrides(config)
    grid = conv_grid(config)
    tasks = []
    for m, (model_id, family, arch) in enumerate(grid):
        store.write_json(f"architectures/{model_id}.json", arch.to_dict())
        for name in names:
            for s in range(config.n_seeds):
                seed = derive_seed(config.master_seed, "init", m, s)
                tasks.append(_task(f"{name}__{model_id}__s{s:02d}", family, arch, store.data_dir(name), seed,
                                   overrides, model_id))
    counts = execute(store, tasks, config.workers, progress, config.timing_log)
    result = _summaries(store, names, {}, counts)
    rows = []
    for name, v in zip(names, versions):
        for ms in (result[name].models if name in result else []):
            rows.append({"model_id": ms.model_id, "N": v.N, "mean": ms.mean, "variance": ms.variance})
    rows.sort(key=lambda r: (r["model_id"], r["N"]))
    store.write_text("tables/accuracy_vs_n.csv", analysis.to_csv(rows))
    return result


# -------------------------------------------------------------- cross-dataset


def _open_suite(path: str) -> tuple[ResultStore, dict[str, analysis.SuiteSummary], dict]:
    store = ResultStore(path)
    if store.manifest is None:
        raise DependencyError(f"suite {path} has not been run")
    cfg = store.config
    if cfg["kind"] != "random_suite":
        raise DependencyError(f"{path} is a {cfg['kind']} store, not a random suite")
    summaries = {}
    summary_dir = store.root / "summaries"
    files = sorted(summary_dir.glob("*.json")) if summary_dir.is_dir() else []
    if not files:
        raise DependencyError(f"suite {path} has no summaries; run it to completion first")
    for f in files:
        d = json.loads(f.read_text())
        models = [analysis.ModelSummary(r["model_id"], [], bool(r["excluded"])) for r in d["models"]]
        recs = store.records(f"{d['data']}__")
        by_model: dict[str, list[float]] = {}
        for r in recs:
            if r.status == "ok":
                by_model.setdefault(r.model_id, []).append(r.final_val_accuracy)
        for ms in models:
            ms.accuracies = by_model[ms.model_id]
        summaries[d["data"]] = analysis.SuiteSummary(models, d["excluded"], d["n_failed"])
    return store, summaries, cfg


def run_cross_dataset(config: ExperimentConfig, progress=None) -> dict:
    """Retrain each suite's best models on every other participating version and score the transfer."""
    if config.kind != "cross_dataset":
        raise ConfigError(f"expected a cross_dataset config, got {config.kind}")
    if not config.suites:
        raise ConfigError("cross_dataset needs at least one suite directory in 'suites'")
    opened = [_open_suite(p) for p in config.suites]
    dims = set()
    targets: dict[str, tuple[ResultStore, analysis.SuiteSummary]] = {}
    for st, summaries, cfg in opened:
        for name, summary in summaries.items():
            dims.add(load_version(st.data_dir(name)).d)
            targets[name] = (st, summary)
    if len(dims) != 1:
        raise ConfigError(f"transfer needs a shared input dimension, found {sorted(dims)}")
    store = ResultStore(config.out, config)
    overrides = _train_overrides(config)
    tasks, cells = [], []
    for si, (st, summaries, cfg) in enumerate(opened):
        family = cfg["family"]
        for source_name, summary in sorted(summaries.items()):
            eligible = [m for m in summary.ranked() if not m.excluded][:config.top_k]
            for ms in eligible:
                arch = load_architecture(st.read_json(f"architectures/{ms.model_id}.json"))
                source_id = f"s{si}-{ms.model_id}"
                for target_name, (tst, _) in sorted(targets.items()):
                    cells.append((source_name, source_id, target_name))
                    for s in range(config.n_seeds):
                        seed = derive_seed(config.master_seed, "transfer", source_name, source_id, target_name, s)
                        key = f"{target_name}__{source_name}__{source_id}__s{s:02d}"
                        tasks.append(_task(key, family, arch, tst.data_dir(target_name), seed, overrides,
                                           f"{source_name}__{source_id}", {"source": source_name}))
    counts = execute(store, tasks, config.workers, progress, config.timing_log)
    rows = []
    for source_name, source_id, target_name in cells:
        recs = [r for r in store.records(f"{target_name}__{source_name}__{source_id}__") if r.status == "ok"]
        summary = targets[target_name][1]
        acc = float(np.mean([r.final_val_accuracy for r in recs])) if recs else float("nan")
        score = analysis.transfer_score(acc, summary.best, summary.average, summary.worst) if recs \
            else analysis.UNDEFINED
        rows.append({"source": source_name, "model": source_id, "target": target_name,
                     "retrained_accuracy": acc, "score": score})
    averages = {}
    for r in rows:
        if r["score"] != analysis.UNDEFINED:
            averages.setdefault(f"{r['source']}->{r['target']}", []).append(r["score"])
    matrix = {"schema_version": SCHEMA_VERSION, "cells": rows,
              "averages": {k: float(np.mean(v)) for k, v in sorted(averages.items())},
              "counts": counts,
              "n_failed": sum(1 for r in store.records() if r.status != "ok")}
    store.write_json("transfer.json", matrix)
    store.write_text("tables/transfer.csv", analysis.to_csv(rows))
    return matrix


# -------------------------------------------------------------------- analysis


def _layers(arch) -> int:
    if isinstance(arch, CnnArchitecture):
        return arch.n_conv_layers
    if isinstance(arch, BaselineArchitecture):
        return 1
    if hasattr(arch, "n_layers"):
        return arch.n_layers
    return len(arch.hidden)


def _n_entangling(arch) -> int:
    return getattr(arch, "n_entangling_gates", 0)


def analyze(store_dir) -> dict:
    """Correlation tables (size, depth, entanglement vs accuracy) and trend fits for one suite store."""
    store = ResultStore(store_dir)
    if store.manifest is None or not store.manifest["cells"]:
        raise DependencyError(f"{store_dir} holds no results to analyze")
    out = {"schema_version": SCHEMA_VERSION, "versions": {}}
    by_version: dict[str, list[RunRecord]] = {}
    for r in store.records():
        by_version.setdefault(r.model_id and r.metadata.get("data", ""), []).append(r)
    for name in sorted(by_version):
        per_model: dict[str, list[RunRecord]] = {}
        for r in by_version[name]:
            if r.status == "ok":
                per_model.setdefault(r.model_id, []).append(r)
        rows = []
        for model_id, recs in sorted(per_model.items()):
            arch = load_architecture(recs[0].architecture)
            accs = [r.final_val_accuracy for r in recs]
            flagged = bool(recs[0].metadata.get("untrainable_diagonal", False))
            row = {"model_id": model_id, "family": recs[0].family, "n_params": len(recs[0].final_params),
                   "n_layers": _layers(arch), "n_entangling": _n_entangling(arch),
                   "mean_accuracy": float(np.mean(accs)), "variance": float(np.var(accs)),
                   "mean_concurrence": "", "mean_concurrence_change": "", "excluded": int(flagged)}
            if row["n_entangling"] > 0:
                reps = [analysis.entanglement_report(arch, r.initial_params, r.final_params) for r in recs]
                row["mean_concurrence"] = float(np.mean([e.mean_concurrence for e in reps]))
                row["mean_concurrence_change"] = float(np.mean([e.mean_change for e in reps]))
            rows.append(row)
        trends = {}
        for metric in ("n_params", "n_layers", "n_entangling", "mean_concurrence", "mean_concurrence_change"):
            pts = [(r[metric], r["mean_accuracy"]) for r in rows if not r["excluded"] and r[metric] != ""]
            try:
                slope, intercept = analysis.trend_line(pts)
                trends[metric] = {"slope": slope, "intercept": intercept, "n_points": len(pts)}
            except analysis.FitError as exc:
                trends[metric] = {"error": str(exc)}
        hyper = [(r["n_entangling"], r["mean_concurrence"]) for r in rows if r["n_entangling"] > 0]
        try:
            a, b, rms = analysis.fit_hyperbola(hyper)
            hyperbola = {"a": a, "b": b, "rms": rms, "n_points": len(hyper)}
        except analysis.FitError as exc:
            hyperbola = {"error": str(exc)}
        out["versions"][name] = {"trends": trends, "hyperbola": hyperbola,
                                 "excluded": sorted(r["model_id"] for r in rows if r["excluded"])}
        store.write_text(f"tables/correlation_{name}.csv", analysis.to_csv(rows))
    store.write_json("analysis.json", out)
    return out


# ---------------------------------------------------------------------- report

REPORT_KINDS = ("summary", "runs", "correlation", "transfer")


def report(store_dir, kind: str = "summary", out_dir=None) -> list[Path]:
    """Materialize CSV/JSON artifacts; raises :class:`EmptyReportError` when nothing matches."""
    if kind not in REPORT_KINDS:
        raise ConfigError(f"unknown report kind {kind!r}; expected one of {REPORT_KINDS}")
    store = ResultStore(store_dir)
    if store.manifest is None:
        raise DependencyError(f"{store_dir} is not a result store")
    target = Path(out_dir) if out_dir else store.root / "reports"
    written = []

    def emit(name, text):
        path = target / name
        _atomic_write(path, text.encode())
        written.append(path)

    records = store.records()
    if kind == "runs":
        if records:
            emit("runs.csv", analysis.to_csv([{**r.csv_row(), "data": r.metadata.get("data", "")}
                                              for r in records]))
    elif kind == "summary":
        for f in sorted((store.root / "summaries").glob("*.json")) if (store.root / "summaries").is_dir() else []:
            d = json.loads(f.read_text())
            emit(f"summary_{d['data']}.csv", analysis.to_csv(d["models"], analysis.SUMMARY_COLUMNS))
            emit(f"summary_{d['data']}.json", _dump(d).decode())
    elif kind == "correlation":
        if records:
            result = analyze(store.root)
            for name in result["versions"]:
                emit(f"correlation_{name}.csv", (store.root / f"tables/correlation_{name}.csv").read_text())
            emit("analysis.json", _dump(result).decode())
    elif kind == "transfer":
        if (store.root / "transfer.json").exists():
            emit("transfer.csv", (store.root / "tables/transfer.csv").read_text())
            emit("transfer.json", (store.root / "transfer.json").read_text())
    if not written or all(p.stat().st_size == 0 for p in written):
        raise EmptyReportError(f"no {kind} data in {store_dir}")
    return written


def generate_data(config: ExperimentConfig) -> list[str]:
    """Write every requested data set version to ``<out>/data``."""
    out = Path(config.out)
    reduced = config.kind != "conv_suite"
    names = []
    for v in build_versions(config, reduced=reduced):
        save_version(v, out / "data" / v.name)
        names.append(v.name)
    return names


def run(config: ExperimentConfig, progress=None):
    if config.kind == "random_suite":
        return run_random_suite(config, progress)
    if config.kind == "conv_suite":
        return run_conv_suite(config, progress)
    if config.kind == "cross_dataset":
        return run_cross_dataset(config, progress)
    return analyze(config.out)
