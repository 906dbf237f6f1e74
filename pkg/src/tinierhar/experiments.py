"""Ablation and scaling studies over folds and seeds, with aggregation."""

from __future__ import annotations

import csv
import io
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .costs import cost_report
from .data import WindowedDataset, split_loso, split_louo, standardize
from .errors import ConfigurationError
from .metrics import F1_CONVENTION, evaluate_predictions, relative_variation
from .models import ModelSpec, ablate, legal_components
from .training import TrainConfig, predict, train, validation_split

logger = logging.getLogger(__name__)

DEFAULT_MS = (1, 2, 4, 8)
DEFAULT_NS = (8, 16, 32, 64)
BASELINE = "baseline"
OK, FAILED = "ok", "failed"


@dataclass
class ConfigEntry:
    config_id: str
    spec: ModelSpec
    params: int
    macs: int

    def to_dict(self) -> dict:
        return {"config_id": self.config_id, "spec": self.spec.to_dict(), "params": self.params, "macs": self.macs}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigEntry":
        return cls(d["config_id"], ModelSpec.from_dict(d["spec"]), d["params"], d["macs"])


@dataclass
class Cell:
    config_id: str
    fold: str
    seed: int
    status: str
    f1: Optional[float] = None
    metrics: Optional[dict] = None
    best_epoch: int = 0
    epochs_run: int = 0
    error: Optional[str] = None

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.config_id, self.fold, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Cell":
        return cls(**d)


@dataclass
class AggregateRow:
    config_id: str
    f1_mean: Optional[float]
    f1_std: Optional[float]
    n_ok: int
    n_failed: int
    params: int
    macs: int
    variation: Optional[float] = None

    @property
    def missing(self) -> bool:
        return self.n_ok == 0


@dataclass
class StudyResult:
    kind: str
    dataset: str
    architecture: str
    configs: List[ConfigEntry]
    folds: List[str]
    seeds: List[int]
    cells: List[Cell] = field(default_factory=list)

    def config(self, config_id: str) -> ConfigEntry:
        for c in self.configs:
            if c.config_id == config_id:
                return c
        raise KeyError(config_id)

    def declared_keys(self) -> List[Tuple[str, str, int]]:
        return [(c.config_id, f, s) for c in self.configs for f in self.folds for s in self.seeds]

    def complete(self) -> bool:
        have = {c.key for c in self.cells}
        return all(k in have for k in self.declared_keys())

    def aggregate(self) -> List[AggregateRow]:
        rows = [aggregate_config(entry, [c for c in self.cells if c.config_id == entry.config_id]) for entry in self.configs]
        if self.kind == "ablation" and rows and rows[0].config_id == BASELINE and not rows[0].missing:
            for row in rows[1:]:
                if not row.missing:
                    row.variation = relative_variation(row.f1_mean, rows[0].f1_mean)
        return rows

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dataset": self.dataset,
            "architecture": self.architecture,
            "convention": F1_CONVENTION,
            "configs": [c.to_dict() for c in self.configs],
            "folds": self.folds,
            "seeds": self.seeds,
            "cells": [c.to_dict() for c in sorted(self.cells, key=lambda c: (c.config_id, c.fold, c.seed))],
            "aggregate": [asdict(r) for r in self.aggregate()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "StudyResult":
        return cls(
            d["kind"],
            d["dataset"],
            d["architecture"],
            [ConfigEntry.from_dict(c) for c in d["configs"]],
            list(d["folds"]),
            list(d["seeds"]),
            [Cell.from_dict(c) for c in d["cells"]],
        )

    @classmethod
    def from_json(cls, text: str) -> "StudyResult":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        """Flat per-cell rows."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "arch", "config", "fold", "seed", "f1", "params", "macs", "status"])
        for c in sorted(self.cells, key=lambda c: (c.config_id, c.fold, c.seed)):
            entry = self.config(c.config_id)
            w.writerow([self.dataset, self.architecture, c.config_id, c.fold, c.seed,
                        "" if c.f1 is None else repr(c.f1), entry.params, entry.macs, c.status])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "f1_mean", "f1_std", "variation", "params", "macs", "ok", "failed"])
        for r in self.aggregate():
            w.writerow([r.config_id, _fmt(r.f1_mean), _fmt(r.f1_std), _fmt(r.variation), r.params, r.macs, r.n_ok, r.n_failed])
        return buf.getvalue()

    def plot_data(self) -> Dict[str, str]:
        """CSV tables shaped for external plotting, keyed by file name."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.kind == "ablation":
            w.writerow(["dataset", "arch", "component", "f1_mean", "relative_change"])
            for r in self.aggregate():
                w.writerow([self.dataset, self.architecture, r.config_id, _fmt(r.f1_mean), _fmt(r.variation)])
            return {f"ablation_{self.architecture}.csv": buf.getvalue()}
        w.writerow(["dataset", "config", "M", "N", "f1_mean", "params", "macs"])
        for r in self.aggregate():
            spec = self.config(r.config_id).spec
            w.writerow([self.dataset, r.config_id, spec.blocks, spec.hidden, _fmt(r.f1_mean), r.params, r.macs])
        return {"scaling.csv": buf.getvalue()}


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


def aggregate_config(entry: ConfigEntry, cells: Iterable[Cell]) -> AggregateRow:
    """Mean over seeds within each fold, then mean over folds.

    The reported spread is the per-fold standard deviation over seeds,
    averaged over folds. Failed cells are excluded and counted.
    """
    cells = list(cells)
    ok = [c for c in cells if c.status == OK]
    failed = len(cells) - len(ok)
    if not ok:
        return AggregateRow(entry.config_id, None, None, 0, failed, entry.params, entry.macs)
    by_fold: Dict[str, List[float]] = {}
    for c in ok:
        by_fold.setdefault(c.fold, []).append(c.f1)
    folds = sorted(by_fold)
    means = [float(np.mean(sorted(by_fold[f]))) for f in folds]
    stds = [float(np.std(sorted(by_fold[f]))) for f in folds]
    return AggregateRow(entry.config_id, float(np.mean(means)), float(np.mean(stds)), len(ok), failed, entry.params, entry.macs)


def aggregate(study: StudyResult) -> List[AggregateRow]:
    return study.aggregate()


# folds and cells --------------------------------------------------------------------

def make_folds(ds: WindowedDataset, protocol: str = "louo", max_folds: Optional[int] = None) -> List[str]:
    if protocol == "louo":
        ids = ds.subjects()
    elif protocol == "loso":
        ids = ds.sessions()
    else:
        raise ConfigurationError(f"unknown protocol {protocol!r}; expected louo or loso")
    if len(ids) < 2:
        raise ConfigurationError(f"{protocol} needs at least two groups, dataset has {ids}")
    return ids[:max_folds] if max_folds else ids


def fold_data(ds: WindowedDataset, fold: str, seed: int, protocol: str = "louo"):
    """Standardised ``(train, val, test)`` for one held-out group and seed."""
    split = split_louo if protocol == "louo" else split_loso
    train_ds, test_ds = split(ds, fold)
    train_ds, val_ds = validation_split(train_ds, seed)
    train_ds, val_ds, test_ds, _ = standardize(train_ds, val_ds, test_ds)
    return train_ds, val_ds, test_ds


def run_cell(config_id: str, spec: ModelSpec, ds: WindowedDataset, fold: str, seed: int,
             cfg: TrainConfig, protocol: str = "louo") -> Cell:
    """Train and test one (config, fold, seed); failures become a failed cell."""
    try:
        train_ds, val_ds, test_ds = fold_data(ds, fold, seed, protocol)
        ckpt, history = train(spec, (train_ds, val_ds, None), cfg, seed)
        if history.diverged:
            return Cell(config_id, fold, seed, FAILED, epochs_run=len(history.rows), error=history.diverged)
        preds = predict(ckpt.to_model(), test_ds.windows).argmax(axis=1)
        report = evaluate_predictions(preds, test_ds.labels, test_ds.num_classes)
        return Cell(config_id, fold, seed, OK, report.macro_f1, report.to_dict(), history.best_epoch, len(history.rows))
    except Exception as exc:  # recorded, the study continues
        logger.debug("cell failed: %s", traceback.format_exc())
        return Cell(config_id, fold, seed, FAILED, error=f"{type(exc).__name__}: {exc}")


def _run_cell_args(args):
    return run_cell(*args)


class CellStore:
    """One JSON file per finished cell, so interrupted studies can resume."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key) -> Path:
        config_id, fold, seed = key
        return self.directory / f"{config_id}__{fold}__{seed}.json"

    def load(self) -> Dict[Tuple[str, str, int], Cell]:
        out = {}
        for p in sorted(self.directory.glob("*.json")):
            try:
                cell = Cell.from_dict(json.loads(p.read_text()))
            except (ValueError, TypeError, KeyError):
                logger.warning("ignoring unreadable cell file %s", p)
                continue
            out[cell.key] = cell
        return out

    def save(self, cell: Cell) -> None:
        path = self._path(cell.key)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(cell.to_dict()))
        tmp.replace(path)


def run_study(
    study: StudyResult,
    ds: WindowedDataset,
    cfg: TrainConfig,
    protocol: str = "louo",
    jobs: int = 1,
    store: Optional[CellStore] = None,
    on_cell: Optional[Callable[[Cell, int, int], None]] = None,
) -> StudyResult:
    """Fill in every declared cell not already present (from ``study`` or ``store``)."""
    done = {c.key: c for c in study.cells}
    if store is not None:
        for key, cell in store.load().items():
            done.setdefault(key, cell)
    declared = study.declared_keys()
    todo = [k for k in declared if k not in done]
    specs = {c.config_id: c.spec for c in study.configs}
    args = [(cid, specs[cid], ds, fold, seed, cfg, protocol) for cid, fold, seed in todo]
    finished = len(declared) - len(todo)

    def collect(cell: Cell):
        nonlocal finished
        done[cell.key] = cell
        finished += 1
        if store is not None:
            store.save(cell)
        if on_cell:
            on_cell(cell, finished, len(declared))

    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for cell in pool.map(_run_cell_args, args):
                collect(cell)
    else:
        for a in args:
            collect(run_cell(*a))
    study.cells = [done[k] for k in declared]
    return study


def _entry(config_id: str, spec: ModelSpec) -> ConfigEntry:
    report = cost_report(spec)
    return ConfigEntry(config_id, spec, report.total_params, report.total_macs)


def ablation_configs(spec: ModelSpec) -> List[ConfigEntry]:
    """The baseline plus one single-component ablation per legal component."""
    return [_entry(BASELINE, spec)] + [_entry(comp, ablate(spec, comp)) for comp in legal_components(spec.architecture)]


def run_ablation(
    spec: ModelSpec,
    dataset: WindowedDataset,
    cfg: TrainConfig,
    folds: Optional[Sequence[str]] = None,
    protocol: str = "louo",
    **kwargs,
) -> StudyResult:
    spec = spec.with_input(dataset.channels, dataset.window, dataset.num_classes)
    study = StudyResult(
        "ablation",
        dataset.name,
        spec.architecture,
        ablation_configs(spec),
        list(folds or make_folds(dataset, protocol)),
        list(cfg.seeds),
    )
    return run_study(study, dataset, cfg, protocol, **kwargs)


def scaling_configs(base: ModelSpec, ms: Sequence[int], ns: Sequence[int]) -> List[ConfigEntry]:
    """TinierHAR grid with the filter count bound to M."""
    if not ms or not ns:
        raise ConfigurationError("scaling grid needs at least one M and one N")
    if any(m < 1 for m in ms) or any(n < 1 for n in ns):
        raise ConfigurationError("grid values must be positive")
    return [
        _entry(f"M{m}_N{n}", ModelSpec("tinierhar", base.channels, base.window, base.classes, blocks=m, filters=m, hidden=n))
        for m in ms
        for n in ns
    ]


def run_scaling_sweep(
    dataset: WindowedDataset,
    ms: Sequence[int],
    ns: Sequence[int],
    cfg: TrainConfig,
    folds: Optional[Sequence[str]] = None,
    protocol: str = "louo",
    **kwargs,
) -> StudyResult:
    base = ModelSpec("tinierhar", dataset.channels, dataset.window, dataset.num_classes)
    study = StudyResult(
        "scaling",
        dataset.name,
        "tinierhar",
        scaling_configs(base, ms, ns),
        list(folds or make_folds(dataset, protocol)),
        list(cfg.seeds),
    )
    return run_study(study, dataset, cfg, protocol, **kwargs)
