"""``lcfm`` command line.

Exit codes: 0 ok, 2 input error, 3 numeric failure, 4 config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, dataio, genlab, inference, report
from .config import RunConfig, help_text
from .encoding import EncodingConfig
from .errors import (BadConfig, ConfigError, EmptyFile, InputError, LCFMError, NoReferences,
                     NumericError)
from .finetune import FinetuneConfig, finetune, finetune_history_csv
from .model import ModelConfig
from .simulator import ANOMALY_CLASSES, MOTION_CLASSES, MotionFamily, simulate_corpus, simulate_labeled
from .ssl import TrainConfig, history_csv, pretrain

log = logging.getLogger("lcfm")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4
TASK_CLASSES = {"motion": MOTION_CLASSES, "anomaly": ANOMALY_CLASSES, "smooth": ANOMALY_CLASSES}
TRACK_SUFFIXES = (".txt", ".dat", ".trk")


# -- helpers -------------------------------------------------------------------------------

def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_echo(out: Path, cfg: RunConfig) -> None:
    dataio.atomic_write_text(out / "config.txt", cfg.echo())


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def model_config(cfg: RunConfig) -> ModelConfig:
    preset = cfg["model.preset"]
    if preset not in ("small", "default"):
        raise BadConfig(f"model.preset must be small or default, got {preset!r}")
    base = ModelConfig.small() if preset == "small" else ModelConfig()
    sizes = {k: v for k, v in cfg.group("model").items() if k != "preset"}
    return dataclasses.replace(base, **sizes)


def enc_config(cfg: RunConfig) -> EncodingConfig:
    return EncodingConfig(**cfg.group("enc"))


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(**cfg.group("pretrain"))


def classes_for(cfg: RunConfig, fallback=None) -> list[str] | None:
    if cfg["data.classes"]:
        return [c.strip() for c in cfg["data.classes"].split(",") if c.strip()]
    return list(fallback) if fallback is not None else None


def _read(path, classes=None):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such data file: {path}")
    return dataio.read_curves(p, classes)


def _load(path, cfg: RunConfig):
    if not Path(path).is_file():
        raise InputError(f"no such checkpoint: {path}")
    return checkpoint.load_checkpoint(path, expect=model_config(cfg))


# -- commands ------------------------------------------------------------------------------

def cmd_ingest(args, cfg: RunConfig) -> int:
    files = []
    for p in map(Path, args.paths):
        if p.is_dir():
            files += sorted(f for f in p.rglob("*") if f.is_file() and f.suffix in TRACK_SUFFIXES)
        elif p.is_file():
            files.append(p)
        else:
            raise InputError(f"no such input: {p}")
    if not files:
        raise EmptyFile("no track files found in the given paths")
    classes = classes_for(cfg)
    curves, summary = [], {"files": 0, "records": 0, "skipped": 0, "tracks": 0, "warnings": []}
    for f in files:
        rep = dataio.scan_tracks(f.read_text(), source=f.name)
        summary["files"] += 1
        for key in ("records", "skipped", "tracks"):
            summary[key] += getattr(rep, key)
        summary["warnings"] += rep.warnings
        curves += [dataio.to_light_curve(c, classes) for c in rep.curves]
    if not curves:
        raise EmptyFile("no usable tracks in the given files")
    summary["curves"] = len(curves)
    out = _out(args)
    dataio.write_jsonl(out / "curves.jsonl", curves, classes)
    dataio.atomic_write_text(out / "summary.json", _json(summary))
    _write_echo(out, cfg)
    print(f"ingested {len(curves)} curves from {summary['files']} files "
          f"({summary['records']} records, {summary['skipped']} skipped)")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    seed = cfg["sim.seed"] if cfg["sim.seed"] is not None else cfg["seed"]
    n, noise = cfg["sim.n"], cfg["sim.noise"]
    if cfg["sim.family"]:
        family = MotionFamily(cfg["sim.family"], cfg["sim.kind"] or None, cfg.group("sim.param"))
        curves, classes = simulate_labeled(family, n, seed, noise), family.classes
    else:
        task = cfg["sim.task"] or "motion"
        curves, classes = simulate_corpus(task, n, seed, noise)
    out = _out(args)
    dataio.write_jsonl(out / "curves.jsonl", curves, classes)
    dataio.atomic_write_text(out / "classes.txt", ",".join(classes) + "\n")
    _write_echo(out, cfg)
    print(f"simulated {len(curves)} curves -> {out / 'curves.jsonl'}")
    return EXIT_OK


def cmd_pretrain(args, cfg: RunConfig) -> int:
    curves = _read(args.data, classes_for(cfg, MOTION_CLASSES + ANOMALY_CLASSES))
    tcfg = train_config(cfg)
    params, history = pretrain(curves, tcfg, cfg["seed"], model_config(cfg), enc_config(cfg))
    out = _out(args)
    checkpoint.save_checkpoint(out / "model.ckpt", params, cfg["seed"], cfg.values)
    dataio.atomic_write_text(out / "history.csv", history_csv(history))
    best = min(history, key=lambda r: r.val_total)
    dataio.atomic_write_text(out / "metrics.json", _json({
        "epochs": len(history), "best_epoch": best.epoch, "best_val_total": best.val_total,
        "final": dataclasses.asdict(history[-1].train)}))
    _write_echo(out, cfg)
    print(f"pre-trained {len(history)} epochs; best val {best.val_total:.6g} at epoch {best.epoch}")
    return EXIT_OK


def cmd_finetune(args, cfg: RunConfig) -> int:
    params, _ = _load(args.init, cfg)
    task = cfg["finetune.task"]
    if task not in ("motion", "anomaly"):
        raise BadConfig(f"finetune.task must be motion or anomaly, got {task!r}")
    classes = classes_for(cfg, params.classes or TASK_CLASSES[task])
    curves = _read(args.data, classes)
    shared = ("alpha", "clip", "mask_fraction", "forecast_fraction")
    kwargs = {k: v for k, v in cfg.group("finetune").items() if k != "task"}
    kwargs.update({k: v for k, v in cfg.group("pretrain").items() if k in shared})
    res = finetune(params, curves, classes, FinetuneConfig(mode=task, **kwargs), cfg["seed"])
    out = _out(args)
    checkpoint.save_checkpoint(out / "model.ckpt", res.params, cfg["seed"], cfg.values)
    dataio.atomic_write_text(out / "history.csv", finetune_history_csv(res.history))
    doc = {"classes": classes, "best_epoch": res.best_epoch,
           "best": res.history[res.best_epoch].report.to_dict(),
           "test": res.test_report.to_dict() if res.test_report else None,
           "epochs": [h.report.to_dict() for h in res.history]}
    dataio.atomic_write_text(out / "metrics.json", _json(doc))
    dataio.atomic_write_text(out / "metrics.txt", report.metrics_summary(doc))
    _write_echo(out, cfg)
    best = res.history[res.best_epoch].report
    print(f"fine-tuned {len(res.history)} epochs; best epoch {res.best_epoch} "
          f"val accuracy {best.accuracy:.4f}")
    return EXIT_OK


def cmd_score(args, cfg: RunConfig) -> int:
    params, _ = _load(args.ckpt, cfg)
    curves = _read(args.data, classes_for(cfg, params.classes))
    ranking = inference.rank_anomalies(params, curves, cfg["score.k"])
    out = _out(args)
    dataio.atomic_write_text(out / "ranked.csv", inference.ranking_csv(ranking.ranked))
    errors = np.array([r.error for r in ranking.ranked])
    # percentile of each error within this pool, reported alongside the raw scores
    pct = {r.id: float(np.mean(errors <= r.error) * 100) for r in ranking.ranked}
    summary = {"n": len(curves), "k": len(ranking.top),
               "top": [{"id": r.id, "error": r.error, "percentile": pct[r.id]} for r in ranking.top],
               "bottom": [{"id": r.id, "error": r.error, "percentile": pct[r.id]}
                          for r in ranking.bottom],
               "mean_error": float(errors.mean())}
    dataio.atomic_write_text(out / "summary.json", _json(summary))
    _write_echo(out, cfg)
    print(f"scored {len(curves)} curves -> {out / 'ranked.csv'}")
    return EXIT_OK


def cmd_forecast(args, cfg: RunConfig) -> int:
    params, _ = _load(args.ckpt, cfg)
    curves = _read(args.data, classes_for(cfg, params.classes))
    fc = inference.forecast_many(params, curves, cfg["forecast.fraction"])
    out = _out(args)
    idx = fc[0].indices
    lines = ["id,error," + ",".join(f"p{i}" for i in idx)]
    lines += [f"{f.id},{f.error!r}," + ",".join(repr(float(v)) for v in f.predicted) for f in fc]
    dataio.atomic_write_text(out / "forecast.csv", "\n".join(lines) + "\n")
    errs = np.array([f.error for f in fc])
    dataio.atomic_write_text(out / "summary.json", _json({
        "n": len(fc), "tail_start": int(idx[0]), "tail_end": int(idx[-1]),
        "mean_error": float(errs.mean()), "median_error": float(np.median(errs)),
        "max_error": float(errs.max())}))
    _write_echo(out, cfg)
    print(f"forecast {len(fc)} curves; mean tail MSE {errs.mean():.6g}")
    return EXIT_OK


def cmd_generate(args, cfg: RunConfig) -> int:
    params, _ = _load(args.ckpt, cfg)
    if not params.has_head:
        raise BadConfig("generate needs a fine-tuned checkpoint with a classifier head")
    curves = _read(args.data, classes_for(cfg, params.classes))
    target = cfg["gen.target"] or params.classes[0]
    spec = genlab.GenSpec(target, cfg["gen.threshold"], cfg["gen.noise_scale"],
                          cfg["gen.top_fraction"], cfg["gen.count"], cfg["gen.sigma"], cfg["seed"])
    refs = genlab.select_references(params, curves, target, spec.threshold)
    if cfg["gen.max_refs"] > 0:
        refs = refs[:cfg["gen.max_refs"]]
    synth = genlab.generate_many(params, refs, spec)
    out = _out(args)
    dataio.write_jsonl(out / "synthetic.jsonl", synth, params.classes)
    _write_echo(out, cfg)
    print(f"generated {len(synth)} curves from {len(refs)} {target} references")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise InputError(f"no such file: {src}")
    out = _out(args)
    text = src.read_text()
    if src.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"{src}: {exc}") from None
        dataio.atomic_write_text(out / "report.txt", report.metrics_summary(doc))
        if "epochs" in doc and isinstance(doc["epochs"], list):
            acc = [e["accuracy"] for e in doc["epochs"]]
            auc = [e["roc_auc"] if e["roc_auc"] is not None else float("nan") for e in doc["epochs"]]
            svg = report.line_plot(list(range(len(acc))), {"accuracy": acc, "roc_auc": auc},
                                   "validation metrics")
            dataio.atomic_write_text(out / "accuracy.svg", svg)
    else:
        cols = report.read_history(text)
        for name, svg in report.history_plots(cols).items():
            dataio.atomic_write_text(out / name, svg)
        dataio.atomic_write_text(out / "report.txt", report.history_summary(cols))
    _write_echo(out, cfg)
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------

COMMANDS = {
    "ingest": cmd_ingest, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "score": cmd_score, "forecast": cmd_forecast, "generate": cmd_generate,
    "simulate": cmd_simulate, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lcfm", description="Light-curve foundation model toolkit",
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog=help_text())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="overrides the seed key")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="parse track files into a corpus")
    p.add_argument("paths", nargs="+")
    for name, needs in (("pretrain", ["data"]), ("finetune", ["data", "init"]),
                        ("score", ["data", "ckpt"]), ("forecast", ["data", "ckpt"]),
                        ("generate", ["data", "ckpt"])):
        p = sub.add_parser(name, parents=[common], epilog=help_text(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        for arg in needs:
            p.add_argument(f"--{arg}", required=True)
    sub.add_parser("simulate", parents=[common], help="write a labelled simulator corpus")
    p = sub.add_parser("report", parents=[common], help="plots and tables for history/metrics")
    p.add_argument("input")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = RunConfig.load(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, NoReferences) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (LCFMError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
