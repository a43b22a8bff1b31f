"""Command line: ``ids4nr {prepare,train,evaluate,sweep,report}``.

Each run directory (``--out``) holds the split manifest, checkpoint, history,
run metadata and metrics report.  Errors end the process with exit code 1 and
one ``error: <category>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .config import SWEEPABLE, ExperimentConfig, load_config
from .dataset import (build_dataset, load_interactions, load_split_manifest,
                      save_split_manifest, select_cold_items, split_train_test)
from .errors import ConfigError, IDS4NRError, MissingFile
from .evaluation import TABLE_COLUMNS, MetricsReport, evaluate, popularity_histogram
from .trainer import init_model, train

log = logging.getLogger("ids4nr")

SPLIT_FILE = "split.tsv"
SUMMARY_FILE = "summary.txt"
CHECKPOINT_FILE = "model.ckpt"
HISTORY_FILE = "history.tsv"
RUN_FILE = "run.txt"
REPORT_FILE = "report.txt"
POPULARITY_FILE = "popularity.tsv"
SWEEP_FILE = "sweep.tsv"
TABLE_FILE = "table.tsv"


def _limits(cfg):
    return threadpool_limits(1) if cfg.deterministic else contextlib.nullcontext()


def load_dataset(cfg: ExperimentConfig):
    cfg.check_paths()
    inter = load_interactions(cfg.path("interactions"), cfg.format)
    return build_dataset(inter, cfg.path("user_attrs"), cfg.path("item_attrs"),
                         k_core=cfg.k_core, format=cfg.format, name=cfg.dataset)


def obtain_split(cfg, dataset, out: Path):
    """Reuse ``out/split.tsv`` when present, else carve and save a new split."""
    manifest = out / SPLIT_FILE
    if manifest.is_file():
        return load_split_manifest(manifest, dataset)
    cold = select_cold_items(dataset, fraction=cfg.cold_fraction)
    split = split_train_test(dataset, cold, cfg.holdout, cfg.effective_split_seed)
    out.mkdir(parents=True, exist_ok=True)
    save_split_manifest(split, dataset, manifest)
    return split


def cmd_prepare(cfg: ExperimentConfig):
    out = Path(cfg.out)
    dataset = load_dataset(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / SPLIT_FILE).unlink(missing_ok=True)
    split = obtain_split(cfg, dataset, out)
    summary = dict(dataset.summary(), cold_items=len(split.cold_items),
                   train=len(split.train), test=len(split.test))
    text = "".join(f"{k}={v}\n" for k, v in summary.items())
    (out / SUMMARY_FILE).write_text(text, encoding="utf-8")
    print(text, end="")
    return out / SPLIT_FILE


def cmd_train(cfg: ExperimentConfig):
    out = Path(cfg.out)
    dataset = load_dataset(cfg)
    split = obtain_split(cfg, dataset, out)
    tcfg = cfg.train_config()
    start = time.perf_counter()
    with _limits(cfg):
        model = init_model(dataset, tcfg, split.cold_items)
        model, history = train(model, split, tcfg)
    elapsed = time.perf_counter() - start
    save_checkpoint(model, out / CHECKPOINT_FILE, extra={"dataset": dataset.name})
    (out / HISTORY_FILE).write_text(history.to_tsv(), encoding="utf-8")
    meta = cfg.to_text() + f"backend = {kernels.BACKEND}\nwall_clock_seconds = {elapsed:.3f}\n"
    (out / RUN_FILE).write_text(meta, encoding="utf-8")
    log.info("trained %s in %.1fs", out, elapsed)
    return out / CHECKPOINT_FILE


def report_metadata(cfg: ExperimentConfig, model):
    c = model.config
    return {"dataset": cfg.dataset, "backbone": c.backbone.kind, "ablation": c.ablation,
            "seed": str(c.seed), "gamma": repr(c.gamma), "dim": str(c.dim),
            "epochs": str(c.num_epochs), "fusion": c.fusion}


def cmd_evaluate(cfg: ExperimentConfig, checkpoint=None):
    out = Path(cfg.out)
    model = load_checkpoint(checkpoint or out / CHECKPOINT_FILE)
    if cfg.fusion != model.config.fusion:
        model = model.with_config(fusion=cfg.fusion)
    dataset = load_dataset(cfg)
    split = obtain_split(cfg, dataset, out)
    with _limits(cfg):
        report = evaluate(model, split, cfg.eval_ns, report_metadata(cfg, model))
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_FILE).write_text(report.to_text(), encoding="utf-8")
    rows = ["train_degree_lo\ttrain_degree_hi\titems"]
    rows += [f"{lo}\t{hi}\t{n}" for lo, hi, n in popularity_histogram(split)]
    (out / POPULARITY_FILE).write_text("\n".join(rows) + "\n", encoding="utf-8")
    print("\t".join(TABLE_COLUMNS))
    print(report.table_row())
    return report


def _sort_key(value):
    try:
        return (0, float(value), "")
    except ValueError:
        return (1, 0.0, value)


def _sweep_one(cfg: ExperimentConfig):
    try:
        cmd_train(cfg)
        return cmd_evaluate(cfg).to_text(), None
    except IDS4NRError as exc:
        return None, f"{exc.category}: {exc}"


def cmd_sweep(cfg: ExperimentConfig, jobs=1):
    if not cfg.sweep_param or not cfg.sweep_values:
        raise_config("sweep needs sweep_param and sweep_values")
    out = Path(cfg.out)
    dataset = load_dataset(cfg)
    obtain_split(cfg, dataset, out)
    runs = []
    for value in cfg.sweep_values:
        sub = out / f"{cfg.sweep_param}-{value}"
        sub.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(out / SPLIT_FILE, sub / SPLIT_FILE)
        runs.append((value, cfg.override(**{cfg.sweep_param: value}, out=str(sub),
                                          sweep_param="", sweep_values=())))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_sweep_one, [c for _, c in runs]))
    else:
        results = [_sweep_one(c) for _, c in runs]
    lines = ["\t".join((cfg.sweep_param, *TABLE_COLUMNS))]
    failed = 0
    for (value, _), (text, err) in sorted(zip(runs, results), key=lambda r: _sort_key(r[0][0])):
        if err is not None:
            failed += 1
            log.error("sweep %s=%s failed: %s", cfg.sweep_param, value, err)
            lines.append(f"{value}\terror: {err}")
        else:
            lines.append(f"{value}\t{MetricsReport.from_text(text).table_row()}")
    table = "\n".join(lines) + "\n"
    (out / SWEEP_FILE).write_text(table, encoding="utf-8")
    print(table, end="")
    return failed


def raise_config(message):
    raise ConfigError(message)


def cmd_report(cfg: ExperimentConfig, paths):
    """Collect report files (or run directories) into one Table-2 shaped table."""
    lines = ["\t".join(("run", "backbone", "ablation", "seed", *TABLE_COLUMNS))]
    for p in paths:
        p = Path(p)
        f = p / REPORT_FILE if p.is_dir() else p
        if not f.is_file():
            raise MissingFile(f)
        r = MetricsReport.from_text(f.read_text(encoding="utf-8"), str(f))
        m = r.metadata
        lines.append("\t".join((str(p), m.get("backbone", "?"), m.get("ablation", "?"),
                                m.get("seed", "?"), r.table_row())))
    table = "\n".join(lines) + "\n"
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / TABLE_FILE).write_text(table, encoding="utf-8")
    print(table, end="")
    return table


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--backbone", choices=("lfm", "ncf", "cml"))
    common.add_argument("--ablation", choices=("full", "no_ss", "no_ss_exp", "no_ss_id"))
    common.add_argument("--gamma", type=float)
    common.add_argument("--dim", type=int)
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="single-threaded BLAS for bit-reproducible runs")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ids4nr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="filter, split and summarize a dataset")
    sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    ev = sub.add_parser("evaluate", parents=[common], help="score a checkpoint")
    ev.add_argument("--checkpoint", metavar="PATH")
    sw = sub.add_parser("sweep", parents=[common], help="train+evaluate over one parameter")
    sw.add_argument("--param", choices=SWEEPABLE)
    sw.add_argument("--values", help="comma separated")
    sw.add_argument("--jobs", type=int, default=1)
    rp = sub.add_parser("report", parents=[common], help="tabulate metrics reports")
    rp.add_argument("paths", nargs="+")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    extra = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise_config(f"--set expects KEY=VALUE, got {item!r}")
        extra[key.strip()] = val
    if getattr(args, "param", None):
        extra["sweep_param"] = args.param
    if getattr(args, "values", None):
        extra["sweep_values"] = args.values
    cfg = cfg.override(**extra)
    return cfg.override(seed=args.seed, backbone=args.backbone, ablation=args.ablation,
                        gamma=args.gamma, dim=args.dim, out=args.out,
                        deterministic=args.deterministic)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.checkpoint)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.jobs)
        else:
            cmd_report(cfg, args.paths)
    except IDS4NRError as exc:
        print(f"error: {exc.category}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
