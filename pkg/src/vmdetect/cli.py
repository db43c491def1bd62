"""Command-line harness: train, attack, plan, score, roc, sweep, run.

Every subcommand reads one TOML config and writes under its ``[output] dir``.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys

import numpy as np

from . import __version__
from .attacks import load_adversarial, run_attack, save_adversarial
from .config import RunConfig, load_config
from .data import Dataset, load_dataset, make_moons
from .errors import (
    ConfigError,
    DataFormatError,
    NonConvergenceError,
    NumericError,
    ShapeError,
    SolverError,
    TrainingDivergenceError,
)
from .evaluation import EvalSet, build_eval_set, read_scores, roc_and_auc, score_all, sweep, write_scores
from .nn import accuracy, forward_full, load_network, save_network, train_sgd
from .plots import emit_plots
from .sampling import build_plan

log = logging.getLogger("vmdetect")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def load_data(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if d.source == "moons":
        return make_moons(d.n_samples, d.noise, d.seed)
    return load_dataset(d.path, d.source, labels_path=d.labels_path, seed=d.seed)


def write_manifest(cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config_sha256": cfg.digest,
        "seeds": {"data": cfg.data.seed, "train": cfg.train.seed, "detect": cfg.detect.seed},
        "versions": {"vmdetect": __version__, "numpy": np.__version__, "python": platform.python_version()},
        **(extra or {}),
    }
    (cfg.out_dir / f"manifest-{command}.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def _network(cfg):
    path = cfg.out_dir / "network.json"
    if not path.exists():
        raise DataFormatError(f"{path} not found; run 'train' first")
    return load_network(path)


def cmd_train(cfg: RunConfig, args) -> None:
    ds = load_data(cfg)
    X, y = ds.subset("train")
    net = train_sgd(X, y, cfg.sizes, cfg.train, hidden=cfg.hidden)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_network(net, cfg.out_dir / "network.json")
    Xt, yt = ds.subset("test")
    accs = {"train": accuracy(net, X, y), "test": accuracy(net, Xt, yt)}
    print(f"train accuracy {accs['train']:.4f}  test accuracy {accs['test']:.4f}")
    write_manifest(cfg, "train", {"accuracy": accs})


def cmd_attack(cfg: RunConfig, args) -> None:
    net = _network(cfg)
    X, y = load_data(cfg).subset("test")
    summary = {}
    for name, acfg in cfg.attacks.items():
        pair = run_attack(net, X, y, acfg)
        save_adversarial(pair, cfg.out_dir / "attacks" / name, acfg)
        summary[name] = {"clean_accuracy": float(np.mean(pair.clean_pred == y)), "adv_accuracy": float(np.mean(pair.adv_pred == y))}
        print(f"{name}: clean acc {summary[name]['clean_accuracy']:.4f} -> adversarial acc {summary[name]['adv_accuracy']:.4f}")
    write_manifest(cfg, "attack", {"attacks": summary})


def _eval_sets(cfg, net) -> dict[str, EvalSet]:
    sets = {}
    for name in cfg.attacks:
        pair, _ = load_adversarial(cfg.out_dir / "attacks" / name)
        sets[name] = build_eval_set(net, pair, name)
    return sets


def cmd_plan(cfg: RunConfig, args) -> None:
    net = _network(cfg)
    X, _ = load_data(cfg).subset(args.split)
    if not 0 <= args.index < len(X):
        raise DataFormatError(f"index {args.index} outside the {args.split} split of size {len(X)}")
    plan = build_plan(forward_full(net, X[args.index]), cfg.detect)
    doc = {
        "method": cfg.detect.method,
        "skipped": list(plan.skipped),
        "units": [
            {"block": e.block, "C": e.C, "p": None if e.p is None else e.p.tolist(), "pi": e.pi.tolist()}
            for e in plan.entries
        ],
    }
    print(json.dumps(doc, indent=1))


def cmd_score(cfg: RunConfig, args) -> None:
    net = _network(cfg)
    sets = _eval_sets(cfg, net)
    if len(sets) > 1:
        sets["combination"] = EvalSet.union(sets.values())
    out = cfg.out_dir / "scores"
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, es in sets.items():
        counts[name] = len(es)
        if not len(es):
            continue
        write_scores(score_all(net, es, cfg.detect), out / f"{name}.csv")
        print(f"{name}: scored {len(es)} clean/adversarial pairs")
    write_manifest(cfg, "score", {"eval_set_sizes": counts, "detect": cfg.detect.as_dict()})


def cmd_roc(cfg: RunConfig, args) -> None:
    files = sorted((cfg.out_dir / "scores").glob("*.csv"))
    if not files:
        raise DataFormatError("no score files; run 'score' first")
    curves = {f.stem: roc_and_auc(read_scores(f), cfg.statistic) for f in files}
    out = cfg.out_dir / "roc"
    emit_plots(curves, None, out)
    with open(out / "auc.csv", "w") as fh:
        fh.write("attack,auc\n")
        for name, c in curves.items():
            fh.write(f"{name},{c.auc!r}\n")
            print(f"{name}: AUC {c.auc:.4f}")
    write_manifest(cfg, "roc", {"auc": {k: c.auc for k, c in curves.items()}})


def cmd_sweep(cfg: RunConfig, args) -> None:
    net = _network(cfg)
    sw = cfg.sweep
    result = sweep(
        net,
        _eval_sets(cfg, net),
        methods=sw.methods,
        blocks=sw.blocks,
        f_grid=sw.f,
        keep_grid=sw.dropout_keep,
        base=cfg.detect,
        combination=sw.combination,
        statistic=cfg.statistic,
        workers=sw.workers,
    )
    emit_plots({}, result, cfg.out_dir / "sweep")
    for c in result.best_cells():
        print(f"{c.attack:>14s} {c.method:>16s}  B={c.block}  param={c.param:g}  AUC={c.auc:.4f}")
    write_manifest(cfg, "sweep", {"cells": len(result.cells)})


def cmd_run(cfg: RunConfig, args) -> None:
    for step in (cmd_train, cmd_attack, cmd_score, cmd_roc):
        step(cfg, args)


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "plan": cmd_plan,
    "score": cmd_score,
    "roc": cmd_roc,
    "sweep": cmd_sweep,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vmdetect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", required=True, help="TOML run configuration")
        if name == "plan":
            p.add_argument("--index", type=int, default=0, help="input index within the split")
            p.add_argument("--split", default="test", choices=("train", "val", "test"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, ShapeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, SolverError, NonConvergenceError, TrainingDivergenceError) as exc:
        where = getattr(exc, "input_id", None)
        print(f"numeric error{f' on {where}' if where else ''}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
