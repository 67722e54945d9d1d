"""Command-line entry point: synth, train, eval, inspect, gradcheck, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .ablation import format_ablation, ordering_holds, run_ablation
from .checkpoint import load_checkpoint, save_checkpoint
from .embio import atomic_write, read_emb, write_emb
from .errors import CausalMaskError, PoisonedLossError
from .gradcheck import TOLERANCE, run_gradcheck
from .metrics import MetricsReport, evaluate_scores, mask_recovery
from .synthgen import make_benchmark
from .trainer import TrainConfig, features, fit, predict

class UsageError(Exception):
    pass


def load_config(path):
    """JSON config with optional ``train`` (TrainConfig fields, nested
    ``loss_weights``) and ``synth`` (benchmark generator keywords) sections."""
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    unknown = set(raw) - {"train", "synth"}
    if unknown:
        raise UsageError(f"unknown config sections {sorted(unknown)}")
    return raw


def _train_config(args):
    raw = dict(load_config(args.config).get("train", {}))
    if args.seed is not None:
        raw["seed"] = args.seed
    return TrainConfig.from_dict(raw)


def _dump_json(path, obj):
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def cmd_synth(args):
    synth_kw = load_config(args.config).get("synth", {})
    seed = 0 if args.seed is None else args.seed
    bench = make_benchmark(seed, **synth_kw)
    out = Path(args.out)
    write_emb(out / "train.emb", bench.train)
    write_emb(out / "val.emb", bench.val)
    write_emb(out / "test_same.emb", bench.test_same_domain)
    for b in bench.test_shifted:
        write_emb(out / f"test_{b.domain_id}.emb", b)
    _dump_json(out / "spec.json", {"seed": seed, "spec": bench.spec.to_dict()})
    print(f"wrote benchmark seed {seed} to {out}")
    return 0


def cmd_train(args):
    train, val = read_emb(args.train), read_emb(args.val)
    out = Path(args.out)
    ckpt_path = out / "model.ckpt"
    resume = None
    if args.checkpoint:
        cfg, resume = load_checkpoint(args.checkpoint)
        if args.config or args.seed is not None:
            raise UsageError("--checkpoint resumes with the stored config; drop --config/--seed")
    else:
        cfg = _train_config(args)

    def save(progress):
        save_checkpoint(ckpt_path, progress, cfg)

    bundle, history = fit(train, val, cfg, resume=resume, on_epoch=save)
    _dump_json(out / "history.json", history.to_dict())
    best = history.best
    if best is not None:
        print(f"best epoch {best.epoch}: validation accuracy {best.val_accuracy:.4f}, "
              f"total {best.val.total:.5f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _best_bundle(path):
    _, progress = load_checkpoint(path)
    return progress.best


def cmd_eval(args):
    bundle = _best_bundle(args.checkpoint)
    report = MetricsReport(seed=None, config={"checkpoint": str(args.checkpoint), "threshold": args.threshold})
    for path in args.test:
        b = read_emb(path)
        if b.labels is None:
            raise UsageError(f"{path} has no labels")
        report.rows.append(evaluate_scores(Path(path).stem, predict(bundle, b.embeddings), b.labels, args.threshold))
    print(report.format_table())
    if args.out:
        _dump_json(Path(args.out) / "report.json", report.to_dict())
    return 0


def cmd_inspect(args):
    bundle = _best_bundle(args.checkpoint)
    for path in args.test:
        b = read_emb(path)
        mask, _, _ = features(bundle, b.embeddings)
        mean = mask.mean(axis=0)
        print(f"{Path(path).stem}: n={b.n} sparsity={mask.sum(axis=1).mean():.4f}")
        print("dim  mean_mask" + ("  causal" if b.ground_truth is not None else ""))
        truth = set(b.ground_truth or ())
        for i, m in enumerate(mean):
            flag = ("  *" if i in truth else "") if b.ground_truth is not None else ""
            print(f"{i:>3}  {m:.4f}{flag}")
        if b.ground_truth is not None:
            r = mask_recovery(mean, b.ground_truth, args.threshold)
            print(f"recovery: precision={r.precision:.4f} recall={r.recall:.4f} iou={r.iou:.4f}")
    return 0


def cmd_gradcheck(args):
    results, seconds = run_gradcheck(seed=0 if args.seed is None else args.seed)
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:<28} max rel err {r.max_rel_error:.3e}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks below {TOLERANCE:g} in {seconds:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args):
    synth_kw = load_config(args.config).get("synth", {})
    cfg = _train_config(args)
    bench = make_benchmark(cfg.seed, **synth_kw)
    rows = run_ablation(bench, cfg)
    print(format_ablation(rows))
    print(f"full configuration ranks first and both single modules beat the baseline: {ordering_holds(rows)}")
    if args.out:
        _dump_json(Path(args.out) / "ablation.json", {"seed": cfg.seed, "rows": [r.__dict__ for r in rows]})
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="causalmask", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "write a synthetic benchmark as EMB1 files")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = add("train", cmd_train, "train on EMB1 files, writing a checkpoint and history")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--checkpoint", help="resume from this checkpoint")

    p = add("eval", cmd_eval, "accuracy/AP report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", nargs="+", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")

    p = add("inspect", cmd_inspect, "per-dimension mask summary")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", nargs="+", required=True)
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient suite")
    p.add_argument("--seed", type=int)

    p = add("ablate", cmd_ablate, "train the four module ablations on the synthetic benchmark")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    return parser


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PoisonedLossError as exc:
        print(f"error: non-finite loss term {exc.term!r}: {exc}", file=sys.stderr)
        return 1
    except (CausalMaskError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
