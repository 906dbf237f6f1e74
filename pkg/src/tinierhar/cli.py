"""Command-line interface: train, eval, count, ablate, scale, synth.

Every failure prints one JSON line on stderr, for example
``{"error": "data", "code": 3, "message": "..."}``, and exits with
0 success, 2 usage/configuration, 3 data/integrity, 4 divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence


from . import __version__
from .costs import MAC_CONVENTION, cost_report
from .data import (
    CATALOG,
    DatasetConfig,
    WindowedDataset,
    apply_stats,
    build_dataset,
    group_subjects,
    load_cache,
    load_csv,
    lookup_dataset,
    save_cache,
    sidecar_path,
    synth_dataset,
)
from .errors import ConfigurationError, DataError, DivergenceError, UsageError
from .experiments import (
    DEFAULT_MS,
    DEFAULT_NS,
    CellStore,
    fold_data,
    make_folds,
    run_ablation,
    run_scaling_sweep,
)
from .metrics import F1_CONVENTION, evaluate_predictions
from .models import ARCHITECTURES, ModelSpec, normalize_architecture
from .training import TrainConfig, load_checkpoint, predict, save_checkpoint, train

logger = logging.getLogger("tinierhar")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
ENV_JOBS = "HAR_ENGINE_THREADS"

# overlayable settings and their defaults; flags beat the --config file, which beats these
DEFAULTS: Dict[str, Any] = {
    "arch": "tinierhar",
    "data": None,
    "data_seed": 0,
    "seed": 1,
    "seeds": None,
    "protocol": "louo",
    "fold": None,
    "max_folds": None,
    "blocks": 4,
    "filters": 16,
    "hidden": 16,
    "ablation": [],
    "epochs": 150,
    "batch_size": 64,
    "lr": 1e-3,
    "weight_decay": 0.01,
    "early_stop_patience": 15,
    "lr_patience": 7,
    "grid": None,
    "drop_labels": [],
    "grouping": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# data -------------------------------------------------------------------------

def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def load_data(source: str, data_seed: int = 0, drop_labels=(), grouping=None) -> WindowedDataset:
    """``synth:<kind>[:k=v,...]``, a CSV file with a sidecar JSON, or a dataset cache."""
    if source.startswith("synth:"):
        parts = source.split(":", 2)
        params = {}
        if len(parts) == 3 and parts[2]:
            for item in parts[2].split(","):
                if "=" not in item:
                    raise UsageError(f"synthetic parameter {item!r} must look like key=value")
                k, v = item.split("=", 1)
                params[k.strip()] = _coerce(v.strip())
        try:
            ds = synth_dataset(parts[1], data_seed, **params)
        except TypeError as exc:
            raise ConfigurationError(f"bad synthetic parameters: {exc}") from None
    else:
        path = Path(source)
        if not path.exists():
            raise DataError(f"data file {source!r} does not exist")
        if path.suffix.lower() == ".csv":
            config = DatasetConfig.load(sidecar_path(path))
            n_classes = len(config.class_names) or None
            ds = build_dataset(load_csv(path, config), n_classes, drop_labels=drop_labels, name=config.name)
        else:
            ds = load_cache(path)
    if grouping:
        ds = group_subjects(ds, grouping)
    return ds


# config overlay -----------------------------------------------------------------

def effective_config(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            overlay = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file {args.config!r} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {args.config!r} is not valid JSON: {exc}") from None
        unknown = sorted(set(overlay) - set(DEFAULTS))
        if unknown:
            raise ConfigurationError(f"unknown config key(s) {unknown}")
        cfg.update(overlay)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None and value != []:
            cfg[key] = value
    return cfg


def train_config(cfg: Dict[str, Any]) -> TrainConfig:
    seeds = cfg["seeds"] if cfg["seeds"] is not None else [1, 2, 3, 4, 5]
    return TrainConfig(
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        weight_decay=float(cfg["weight_decay"]),
        early_stop_patience=int(cfg["early_stop_patience"]),
        lr_patience=int(cfg["lr_patience"]),
        seeds=[int(s) for s in seeds],
    )


def model_spec(cfg: Dict[str, Any], ds: WindowedDataset) -> ModelSpec:
    return ModelSpec(
        cfg["arch"],
        ds.channels,
        ds.window,
        ds.num_classes,
        blocks=int(cfg["blocks"]),
        filters=int(cfg["filters"]),
        hidden=int(cfg["hidden"]),
        ablation=frozenset(cfg["ablation"]),
    )


def resolve_jobs(flag: Optional[int]) -> int:
    if flag is not None:
        jobs = flag
    else:
        raw = os.environ.get(ENV_JOBS, "1")
        try:
            jobs = int(raw)
        except ValueError:
            raise ConfigurationError(f"{ENV_JOBS}={raw!r} is not an integer") from None
    if jobs < 1:
        raise ConfigurationError(f"jobs must be at least 1, got {jobs}")
    return jobs


def _require(cfg: Dict[str, Any], *keys: str) -> None:
    for key in keys:
        if cfg.get(key) in (None, ""):
            raise UsageError(f"missing required option --{key.replace('_', '-')}")


def _out_dir(path: Optional[str]) -> Path:
    if not path:
        raise UsageError("missing required option --out")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: Dict[str, Any]) -> None:
    (out / "effective_config.json").write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True))
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[str(p.relative_to(out))] = {
                "bytes": p.stat().st_size,
                "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
            }
    manifest = {"command": command, "version": __version__, "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# subcommands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = effective_config(args)
    _require(cfg, "data")
    out = _out_dir(args.out)
    ds = load_data(cfg["data"], cfg["data_seed"], cfg["drop_labels"], cfg["grouping"])
    folds = make_folds(ds, cfg["protocol"])
    fold = str(cfg["fold"]) if cfg["fold"] is not None else folds[0]
    cfg["fold"] = fold
    train_ds, val_ds, test_ds = fold_data(ds, fold, cfg["seed"], cfg["protocol"])
    spec = model_spec(cfg, ds)
    tcfg = train_config(cfg)

    def progress(rec):
        if not args.quiet:
            print(f"epoch {rec.epoch} train_loss={rec.train_loss:.6f} val_f1={rec.val_f1:.6f} lr={rec.lr:g}", file=sys.stderr)

    ckpt, history = train(spec, (train_ds, val_ds, test_ds), tcfg, int(cfg["seed"]), progress)
    (out / "history.csv").write_text(history.to_csv())
    if history.diverged:
        write_manifest(out, "train", cfg)
        raise DivergenceError(history.diverged)
    ckpt.metadata.update(data=cfg["data"], data_seed=cfg["data_seed"], protocol=cfg["protocol"], fold=fold,
                         drop_labels=cfg["drop_labels"], grouping=cfg["grouping"])
    save_checkpoint(ckpt, out / "checkpoint.bin")
    summary = {
        "best_epoch": history.best_epoch,
        "best_val_f1": history.best_val_f1,
        "test_f1": ckpt.metadata.get("test_f1"),
        "epochs_run": len(history.rows),
        "stopped_early": history.stopped_early,
        "convention": F1_CONVENTION,
    }
    (out / "metrics.json").write_text(json.dumps(summary, indent=2))
    write_manifest(out, "train", cfg)
    _emit(json.dumps(summary) if args.json else
          f"best epoch {history.best_epoch}: val macro-F1 {history.best_val_f1:.4f}, "
          f"test macro-F1 {summary['test_f1']:.4f}; checkpoint {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    meta = ckpt.metadata
    source = args.data or meta.get("data")
    if not source:
        raise UsageError("missing required option --data (checkpoint records no data source)")
    data_seed = args.data_seed if args.data_seed is not None else meta.get("data_seed", 0)
    ds = load_data(source, data_seed, meta.get("drop_labels") or (), meta.get("grouping"))
    if args.split == "all":
        train_ds, _, _ = fold_data(ds, meta["fold"], ckpt.seed, meta.get("protocol", "louo")) if "fold" in meta else (ds, None, None)
        target = apply_stats(ds, train_ds.stats) if train_ds.stats is not None else ds
    else:
        if "fold" not in meta:
            raise UsageError("checkpoint records no fold; use --split all")
        parts = fold_data(ds, meta["fold"], ckpt.seed, meta.get("protocol", "louo"))
        target = parts[("train", "val", "test").index(args.split)]
    if target.num_classes != ckpt.spec.classes or target.channels != ckpt.spec.channels:
        raise ConfigurationError("data shape does not match the checkpoint's model")
    preds = predict(ckpt.to_model(), target.windows).argmax(axis=1)
    report = evaluate_predictions(preds, target.labels, target.num_classes)
    if args.json:
        _emit(json.dumps({"split": args.split, "n": len(target), **report.to_dict()}))
    else:
        lines = [f"# {F1_CONVENTION}", f"split={args.split} n={len(target)} macro_f1={report.macro_f1:.6f}",
                 "class,precision,recall,f1,support"]
        for k in range(report.n_classes):
            lines.append(f"{k},{report.precision[k]:.6f},{report.recall[k]:.6f},{report.f1[k]:.6f},{report.support[k]}")
        _emit("\n".join(lines))
    return EXIT_OK


def _count_shape(args):
    if args.dataset_name:
        info = lookup_dataset(args.dataset_name)
        return info.channels, info.window, args.classes or info.classes, info.name
    if args.shape:
        try:
            c, t = (int(v) for v in args.shape.lower().replace("x", ",").split(","))
        except ValueError:
            raise UsageError(f"--shape must look like C,T (got {args.shape!r})") from None
        return c, t, args.classes or 6, f"{c}x{t}"
    return None


def _comparison(c: int, t: int, classes: int, archs: Sequence[str]):
    reports = [cost_report(ModelSpec(a, c, t, classes)) for a in archs]
    ref = reports[0]
    return [(r, r.total_params / ref.total_params, r.total_macs / ref.total_macs) for r in reports]


def cmd_count(args) -> int:
    archs = list(ARCHITECTURES) if args.arch == "all" else [normalize_architecture(args.arch)]
    shape = _count_shape(args)
    if shape is None:
        if args.arch != "all":
            raise UsageError("count needs --shape or --dataset-name (or --arch all for the catalog sweep)")
        rows = []
        for info in CATALOG.values():
            comp = _comparison(info.channels, info.window, info.classes, archs)
            p = [r.total_params for r, _, _ in comp]
            m = [r.total_macs for r, _, _ in comp]
            rows.append({"dataset": info.name, "shape": [info.channels, info.window],
                         "params": dict(zip(archs, p)), "macs": dict(zip(archs, m)),
                         "params_ordered": p[0] < p[1] < p[2], "macs_ordered": m[0] < m[1] < m[2]})
        if args.json:
            _emit(json.dumps({"convention": MAC_CONVENTION, "datasets": rows}))
            return EXIT_OK
        lines = [f"# {MAC_CONVENTION}", "dataset,C,T," + ",".join(f"params_{a}" for a in archs)
                 + "," + ",".join(f"macs_{a}" for a in archs) + ",ordering"]
        for r in rows:
            ok = "TinierHAR<TinyHAR<DeepConvLSTM" if r["params_ordered"] and r["macs_ordered"] else "VIOLATED"
            lines.append(",".join([r["dataset"], *map(str, r["shape"]), *(str(r["params"][a]) for a in archs),
                                   *(str(r["macs"][a]) for a in archs), ok]))
        _emit("\n".join(lines))
        return EXIT_OK
    c, t, classes, label = shape
    comp = _comparison(c, t, classes, archs)
    if args.json:
        _emit(json.dumps({"input": label, "shape": [c, t], "classes": classes,
                          "reports": [{**r.to_dict(), "params_ratio": pr, "macs_ratio": mr} for r, pr, mr in comp]}))
        return EXIT_OK
    chunks = []
    for r, _, _ in comp:
        chunks.append(f"## {r.architecture} on {label} (C={c}, T={t}, classes={classes})\n{r.to_csv()}")
    if len(comp) > 1:
        lines = ["## comparison (ratios relative to the first architecture)", "arch,params,macs,params_ratio,macs_ratio"]
        lines += [f"{r.architecture},{r.total_params},{r.total_macs},{pr:.3f},{mr:.3f}" for r, pr, mr in comp]
        chunks.append("\n".join(lines) + "\n")
    _emit("\n".join(chunks))
    return EXIT_OK


def _study_output(out: Path, study, args, cfg, command: str) -> None:
    (out / "study.json").write_text(study.to_json())
    (out / "study.csv").write_text(study.to_csv())
    (out / "summary.csv").write_text(study.summary_csv())
    if args.plot_data:
        plot_dir = out / "plot-data"
        plot_dir.mkdir(exist_ok=True)
        for name, text in study.plot_data().items():
            (plot_dir / name).write_text(text)
    write_manifest(out, command, cfg)
    if args.json:
        _emit(json.dumps({"aggregate": study.to_dict()["aggregate"]}))
    else:
        _emit(f"# {F1_CONVENTION}\n" + study.summary_csv())


def _study_setup(args):
    cfg = effective_config(args)
    _require(cfg, "data")
    out = _out_dir(args.out)
    cells = out / "cells"
    if cells.exists() and any(cells.iterdir()) and not args.resume:
        raise UsageError(f"{cells} already holds results; pass --resume or choose another --out")
    ds = load_data(cfg["data"], cfg["data_seed"], cfg["drop_labels"], cfg["grouping"])
    folds = make_folds(ds, cfg["protocol"], cfg["max_folds"])
    jobs = resolve_jobs(args.jobs)

    def progress(cell, done, total):
        if not args.quiet:
            f1 = "" if cell.f1 is None else f" f1={cell.f1:.4f}"
            print(f"[{done}/{total}] config={cell.config_id} fold={cell.fold} seed={cell.seed} status={cell.status}{f1}",
                  file=sys.stderr, flush=True)

    return cfg, out, ds, folds, dict(jobs=jobs, store=CellStore(cells), on_cell=progress)


def cmd_ablate(args) -> int:
    cfg, out, ds, folds, kw = _study_setup(args)
    study = run_ablation(model_spec(cfg, ds), ds, train_config(cfg), folds, cfg["protocol"], **kw)
    _study_output(out, study, args, cfg, "ablate")
    return EXIT_OK


def parse_grid(text: Optional[str]):
    if not text:
        return list(DEFAULT_MS), list(DEFAULT_NS)
    try:
        ms, ns = text.lower().split("x")
        return [int(v) for v in ms.split(",")], [int(v) for v in ns.split(",")]
    except ValueError:
        raise UsageError(f"--grid must look like 2,4x8,16 (got {text!r})") from None


def cmd_scale(args) -> int:
    cfg, out, ds, folds, kw = _study_setup(args)
    ms, ns = parse_grid(cfg["grid"])
    cfg["grid"] = f"{','.join(map(str, ms))}x{','.join(map(str, ns))}"
    study = run_scaling_sweep(ds, ms, ns, train_config(cfg), folds, cfg["protocol"], **kw)
    _study_output(out, study, args, cfg, "scale")
    return EXIT_OK


def cmd_synth(args) -> int:
    params = {}
    for item in args.param or ():
        if "=" not in item:
            raise UsageError(f"--param {item!r} must look like key=value")
        k, v = item.split("=", 1)
        params[k] = _coerce(v)
    try:
        ds = synth_dataset(args.kind, args.seed, **params)
    except TypeError as exc:
        raise ConfigurationError(f"bad synthetic parameters: {exc}") from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_cache(ds, args.out)
    _emit(f"wrote {len(ds)} windows of shape ({ds.channels}, {ds.window}) to {args.out}")
    return EXIT_OK


# parser -----------------------------------------------------------------------

def _add_common(p, data=True):
    p.add_argument("--config", help="JSON file of settings; flags take precedence")
    p.add_argument("--out", help="output directory")
    p.add_argument("--json", action="store_true", help="print machine-readable JSON")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    if data:
        p.add_argument("--data", help="CSV file, dataset cache, or synth:<kind>[:key=value,...]")
        p.add_argument("--data-seed", type=int, help="seed for synthetic data (default 0)")
        p.add_argument("--protocol", choices=["louo", "loso"], help="leave one user / session out")


def _add_training(p):
    p.add_argument("--arch", help=f"one of {', '.join(ARCHITECTURES)}")
    p.add_argument("--blocks", type=int, help="M, separable blocks after the pooling blocks")
    p.add_argument("--filters", type=int, help="F, TinierHAR conv filters")
    p.add_argument("--hidden", type=int, help="N, GRU hidden size per direction")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--early-stop-patience", type=int)
    p.add_argument("--lr-patience", type=int)


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tinierhar", description="Lightweight HAR models: training, evaluation and cost studies.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model on one fold")
    _add_common(p)
    _add_training(p)
    p.add_argument("--seed", type=int, help="initialisation and shuffle seed (default 1)")
    p.add_argument("--fold", help="held-out subject or session (default: first)")
    p.add_argument("--ablate", dest="ablation", action="append", help="remove a component (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="defaults to the data recorded in the checkpoint")
    p.add_argument("--data-seed", type=int)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count", help="parameter and MAC accounting")
    p.add_argument("--arch", default="all", help=f"one of {', '.join(ARCHITECTURES)} or all")
    p.add_argument("--shape", help="input shape C,T")
    p.add_argument("--dataset-name", help="catalog dataset whose shape to use")
    p.add_argument("--classes", type=int, help="class count (default: catalog value, or 6 with --shape)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_count)

    for name, func, help_text in (("ablate", cmd_ablate, "single-component ablation study"),
                                  ("scale", cmd_scale, "TinierHAR M x N scaling sweep")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        _add_training(p)
        p.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default 1,2,3,4,5)")
        p.add_argument("--max-folds", type=int, help="use only the first N folds")
        p.add_argument("--jobs", type=int, help=f"parallel cells (default ${ENV_JOBS} or 1)")
        p.add_argument("--resume", action="store_true", help="reuse finished cells under --out")
        p.add_argument("--plot-data", action="store_true", help="also write CSVs for external plotting")
        if name == "scale":
            p.add_argument("--grid", help="M values x N values, e.g. 2,4x8,16")
        else:
            p.add_argument("--ablate", dest="ablation", action="append", help=argparse.SUPPRESS)
        p.set_defaults(func=func)

    p = sub.add_parser("synth", help="write a synthetic dataset cache")
    p.add_argument("--kind", required=True, help="separable, order_sensitive or shape_fuzz")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", help="generator option key=value (repeatable)")
    p.add_argument("--out", required=True, help="cache file to write")
    p.set_defaults(func=cmd_synth)
    return parser


def _fail(kind: str, code: int, message: str) -> int:
    print(json.dumps({"error": kind, "code": code, "message": message}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        return _fail("usage", EXIT_USAGE, str(exc))
    except DataError as exc:
        return _fail("data", EXIT_DATA, str(exc))
    except OSError as exc:
        return _fail("data", EXIT_DATA, f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc))
    except DivergenceError as exc:
        return _fail("divergence", EXIT_DIVERGED, str(exc))


if __name__ == "__main__":
    sys.exit(main())
