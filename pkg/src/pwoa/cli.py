"""Command-line entry point: ``pwoa {train-teacher,prune,eval,hsic-trace}``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import checkpoint
from .attacks import evaluate_attack
from .config import RunConfig, seed_overrides
from .errors import ConfigError, NumericError, PwoaError
from .metrics import natural_accuracy, read_trace_csv, write_trace_csv
from .nn import NetworkModel
from .pipeline import prune_pipeline
from .training import train_teacher

log = logging.getLogger("pwoa")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _overrides(args) -> dict:
    over: dict = {}
    if getattr(args, "seed", None) is not None:
        over = seed_overrides(args.seed)
    if getattr(args, "rate", None) is not None:
        over["sparsity"] = {"rate": args.rate}
    if getattr(args, "mix_ratio", None) is not None:
        over.setdefault("attacks", {})["mix_ratio"] = args.mix_ratio
    return over


def _load_config(args) -> RunConfig:
    over = _overrides(args)
    if args.config is None:
        cfg = RunConfig.from_dict({}, Path.cwd(), over)
    else:
        cfg = RunConfig.load(args.config, over)
    if args.out is not None:
        cfg.doc["output"]["dir"] = str(Path(args.out).resolve())
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v: float) -> str:
    return f"{v:.17e}"


def evaluate_model(model: NetworkModel, cfg: RunConfig, names: Optional[Sequence[str]] = None) -> dict[str, float]:
    """Natural and per-attack robust accuracy (percent) on the seeded evaluation subset."""
    attacks = cfg.eval_attacks()
    if names:
        unknown = [n for n in names if n not in attacks]
        if unknown:
            raise ConfigError(f"unknown attack(s) {', '.join(unknown)}; configured: {', '.join(attacks)}",
                              "attacks.eval")
        attacks = {n: attacks[n] for n in names}
    _, test = cfg.datasets()
    data = test.subset(cfg.doc["attacks"]["eval_size"], cfg.doc["attacks"]["seed"])
    if model.input_dim != data.input_dim or model.output_dim != data.num_classes:
        raise ConfigError(f"model maps {model.input_dim}->{model.output_dim} but data is "
                          f"{data.input_dim}->{data.num_classes}", "data")
    report = {"natural_acc": natural_accuracy(model, data)}
    for name, atk in attacks.items():
        report[f"{name}_acc"] = evaluate_attack(model, data, atk)[0]
    return report


def cmd_train_teacher(args) -> int:
    cfg = _load_config(args)
    tcfg = cfg.teacher()
    train, _ = cfg.datasets()
    model = NetworkModel.init(cfg.model_sizes(train), seed=cfg.doc["model"]["seed"])
    out = _out_dir(cfg)
    rows = []

    def on_epoch(epoch, loss):
        report = evaluate_model(model, cfg)
        rows.append([str(epoch), _fmt(loss)] + [_fmt(v) for v in report.values()])
        log.info("teacher epoch %d: loss %.4f %s", epoch, loss,
                 " ".join(f"{k} {v:.2f}" for k, v in report.items()))

    train_teacher(model, train, tcfg, on_epoch)
    checkpoint.save(model, out / "teacher.pwoa")
    header = ["epoch", "loss", "natural_acc"] + [f"{n}_acc" for n in cfg.eval_attacks()]
    _write_csv(out / "teacher_metrics.csv", header, rows)
    print(f"teacher written to {out / 'teacher.pwoa'}")
    return EXIT_OK


def cmd_prune(args) -> int:
    cfg = _load_config(args)
    pcfg = cfg.prune()
    teacher = checkpoint.load_model(args.teacher)
    train, test = cfg.datasets()
    if teacher.input_dim != train.input_dim or teacher.output_dim != train.num_classes:
        raise ConfigError("teacher does not match the dataset dimensions", "data")
    res = prune_pipeline(teacher, train, test, pcfg)
    out = _out_dir(cfg)
    checkpoint.save(res.model, out / "pruned.pwoa")
    checkpoint.save(res.mask, out / "mask.pwoa")
    checkpoint.save(res.state, out / "admm_state.pwoa")
    write_trace_csv(res.records, out / "trace.csv")
    summary = {
        "best_epoch": res.best_epoch,
        "budgets": list(res.plan.budgets),
        "popcounts": res.mask.popcounts,
        "rate": res.plan.rate,
        "weights": {k: getattr(res.weights, k) for k in ("lambda_kd", "lambda_x", "lambda_y", "lambda_ce", "tau")},
        "final": {k: v for k, v in vars(next(r for r in res.records if r.epoch == res.best_epoch)).items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"pruned model (epoch {res.best_epoch}) written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    model = checkpoint.load_model(args.model)
    names = [n.strip() for n in args.attacks.split(",") if n.strip()] if args.attacks else None
    report = evaluate_model(model, cfg, names)
    for k, v in report.items():
        print(f"{k}\t{v:.2f}")
    if args.out is not None or args.config is not None:
        out = _out_dir(cfg)
        _write_csv(out / "eval.csv", list(report), [[_fmt(v) for v in report.values()]])
    return EXIT_OK


def trace_summary(records) -> dict:
    """Per-stage start/end HSIC-plane points and the feasibility-gap trajectory."""
    out: dict = {"stages": {}, "boundary_epoch": None}
    for i, r in enumerate(records):
        st = out["stages"].setdefault(r.stage, {"start_epoch": r.epoch, "start": (r.hsic_xz, r.hsic_yz)})
        st["end_epoch"] = r.epoch
        st["end"] = (r.hsic_xz, r.hsic_yz)
        if i > 0 and records[i - 1].stage == "admm" and r.stage == "finetune" and out["boundary_epoch"] is None:
            out["boundary_epoch"] = r.epoch
    gaps = [r.feas_gap for r in records if r.stage == "admm"]
    if gaps:
        out["feas_gap"] = {"first": gaps[0], "last": gaps[-1], "min": min(gaps), "max": max(gaps)}
    return out


def cmd_hsic_trace(args) -> int:
    records = read_trace_csv(args.trace)
    s = trace_summary(records)
    for stage, st in s["stages"].items():
        print(f"{stage}: epochs {st['start_epoch']}-{st['end_epoch']}  "
              f"start HSIC(X,Z)={st['start'][0]:.6g} HSIC(Y,Z)={st['start'][1]:.6g}  "
              f"end HSIC(X,Z)={st['end'][0]:.6g} HSIC(Y,Z)={st['end'][1]:.6g}")
    if s["boundary_epoch"] is not None:
        print(f"admm -> finetune at epoch {s['boundary_epoch']}")
    if "feas_gap" in s:
        g = s["feas_gap"]
        print(f"feasibility gap: first {g['first']:.6g} last {g['last']:.6g} min {g['min']:.6g} max {g['max']:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pwoa", description="Prune adversarially robust MLPs without adversarial retraining.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeded=True):
        sp.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
        sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        if seeded:
            sp.add_argument("--seed", type=_u64, help="replace every training/evaluation seed")

    sp = sub.add_parser("train-teacher", help="PGD adversarial training of a dense teacher")
    common(sp)
    sp.set_defaults(func=cmd_train_teacher)

    sp = sub.add_parser("prune", help="ADMM pruning with distillation and HBaR, then masked fine-tuning")
    common(sp)
    sp.add_argument("--teacher", type=Path, required=True, help="teacher checkpoint")
    sp.add_argument("--rate", type=float, help="pruning rate (dense size / pruned size)")
    sp.add_argument("--mix-ratio", type=float, help="fraction of each batch replaced by adversarial examples")
    sp.set_defaults(func=cmd_prune)

    sp = sub.add_parser("eval", help="natural and robust accuracy of a checkpoint")
    common(sp)
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--attacks", help="comma-separated subset of the configured attacks")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("hsic-trace", help="summarize a trace CSV")
    sp.add_argument("trace", type=Path)
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_hsic_trace)
    return p


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _threads() -> int:
    raw = os.environ.get("PWOA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PWOA_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"PWOA_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PwoaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
