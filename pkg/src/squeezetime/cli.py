"""Command-line interface.

Exit codes: 0 success, 1 runtime failure (including a failed check), 2 usage
or configuration error. Seeds resolve as ``--seed`` flag, then the
``SQZT_SEED`` environment variable, then the config file.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import analysis, bench, data, gradsuite, report, train
from .checkpoint import CheckpointError
from .config import VARIANTS, ConfigError, ModelConfig, check_known_sections, read_kv_file, section_to_dataclass
from .model import build_model
from .probe import probe_model_config

SECTIONS = {"model", "train", "data"}
SWEEP_AXES = ("frames", "channel_factor", "variant")
GRADCHECK_TOL = 1e-5
OP_TOL = 1e-6
MUTATION_MIN = 1e-3


class UsageError(Exception):
    pass


def resolve_seed(flag: int | None, file_value: int) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("SQZT_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"SQZT_SEED must be an integer, got {env!r}") from None
    return file_value


def load_configs(path: str | None, preset: str):
    entries = read_kv_file(path) if path else {}
    check_known_sections(entries, SECTIONS)
    model_base = probe_model_config() if preset == "toy" else ModelConfig()
    mcfg = section_to_dataclass(ModelConfig, entries, "model", model_base)
    tcfg = section_to_dataclass(train.TrainConfig, entries, "train", train.TrainConfig())
    dcfg = section_to_dataclass(data.SyntheticVideoSpec, entries, "data", data.SyntheticVideoSpec())
    return mcfg, tcfg, dcfg


def _format(args) -> str:
    if args.format:
        return args.format
    return "csv" if args.out and str(args.out).endswith(".csv") else "json"


def _emit(obj, args):
    if args.out:
        report.emit_report(obj, _format(args), args.out)
        print(f"wrote {args.out}")


# -- subcommands -----------------------------------------------------------------


def cmd_datagen(args) -> int:
    _, _, dcfg = load_configs(args.config, "toy")
    changes = {"seed": resolve_seed(args.seed, dcfg.seed)}
    if args.num_samples is not None:
        changes["num_samples"] = args.num_samples
    dcfg = dataclasses.replace(dcfg, **changes)
    records = data.generate_dataset(dcfg)
    data.write_dataset(args.out, records)
    print(f"{len(records)} videos ({dcfg.num_samples} per class, {dcfg.resolution[0]}x{dcfg.resolution[1]}, "
          f"L={dcfg.length}, seed {dcfg.seed}) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    mcfg, tcfg, _ = load_configs(args.config, "toy")
    changes = {"seed": resolve_seed(args.seed, tcfg.seed)}
    if args.epochs is not None:
        changes["total_epochs"] = args.epochs
    tcfg = dataclasses.replace(tcfg, **changes)
    records = data.read_dataset(args.data)
    if records and max(r.label for r in records) >= mcfg.num_classes:
        raise UsageError(f"dataset labels exceed model.num_classes={mcfg.num_classes}")
    if args.resume:
        trainer = train.Trainer.resume(args.resume, records)
    else:
        trainer = train.Trainer(build_model(mcfg, seed=tcfg.seed), tcfg, records)
    if args.checkpoint_dir:
        Path(args.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    try:
        trainer.fit(checkpoint_dir=args.checkpoint_dir)
    except train.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for h in trainer.history:
        print(f"epoch {h['epoch']:3d}  lr {h['lr']:.5f}  loss {h['loss']:.4f}  top1 {h['top1']:.3f}")
    if args.model_out:
        trainer.save(args.model_out)
        print(f"wrote {args.model_out}")
    _emit(trainer.history, args)
    return 0


def cmd_eval(args) -> int:
    model = train.model_from_checkpoint(args.checkpoint)
    records = data.read_dataset(args.data)
    res = train.evaluate_multiview(model, records, train.ViewConfig(args.clips, args.crops, args.interval))
    out = {"top1": res["top1"], "top5": res["top5"], "n": len(records),
           "views": args.clips * args.crops,
           **{f"class{k}_top1": v for k, v in res["per_class"].items()}}
    print(f"top1 {out['top1']:.4f}  top5 {out['top5']:.4f}  ({len(records)} videos, {out['views']} views)")
    _emit(out, args)
    return 0


def _model_from_args(args):
    mcfg, _, _ = load_configs(args.config, args.preset)
    if getattr(args, "variant", None):
        mcfg = mcfg.replace(variant=args.variant)
    return mcfg


def cmd_count(args) -> int:
    mcfg = _model_from_args(args)
    model = build_model(mcfg)
    rep = analysis.count_flops(model, convention=args.convention)
    rep.meta.update(variant=mcfg.variant, frames=mcfg.frames, channel_factor=mcfg.channel_factor)
    print(f"params {rep.total_params / 1e6:.3f}M  flops {rep.total_flops / 1e9:.3f}G ({args.convention}, "
          f"mac layers {rep.mac_layer_flops / 1e9:.3f}G)")
    _emit(rep, args)
    return 0


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args.seed, 0)
    rows, ok = [], True
    for name, r in gradsuite.check_kernels(seed).items():
        passed = r.passed(OP_TOL)
        ok &= passed
        rows.append({"check": f"op:{name}", "max_rel_error": r.max_relative_error, "checked": r.checked,
                     "skipped_kinks": r.skipped_kinks, "pass": passed})
    for name, r in gradsuite.check_mutations(seed).items():
        passed = r.max_relative_error > MUTATION_MIN
        ok &= passed
        rows.append({"check": f"mutation:{name}", "max_rel_error": r.max_relative_error, "checked": r.checked,
                     "skipped_kinks": r.skipped_kinks, "pass": passed})
    if not args.ops_only:
        model, x, y = gradsuite.conditioned_toy_point(seed)
        r = gradsuite.check_model(model, x, y, max_coords=args.max_coords, seed=seed)
        passed = r.passed(GRADCHECK_TOL)
        ok &= passed
        rows.append({"check": "model:toy", "max_rel_error": r.max_relative_error, "checked": r.checked,
                     "skipped_kinks": r.skipped_kinks, "pass": passed})
        if r.worst:
            print(f"model worst coordinate {r.worst[0]}{list(r.worst[1])}, max abs error {r.max_abs_error:.3g}")
    for row in rows:
        print(f"{'PASS' if row['pass'] else 'FAIL'}  {row['check']:40s} {row['max_rel_error']:.3e}")
    _emit(rows, args)
    return 0 if ok else 1


def cmd_bench(args) -> int:
    if args.baseline3d:
        res = bench.baseline3d_compare(c=args.channels, h=args.size, w=args.size, k=args.kernel,
                                       frames=args.frames, reps=args.reps)
        print(f"analytic ratio {res['ratio']}  measured {res['measured_ratio']:.2f}  "
              f"(3d {res['time_3d'] * 1e3:.3f} ms, squeezed {res['time_squeezed'] * 1e3:.3f} ms)")
        _emit(res, args)
        return 0
    mcfg = _model_from_args(args)
    res = bench.bench_forward(build_model(mcfg), args.batch, args.warmup, args.reps, args.threads)
    print(f"{res.model_id}: median {res.median * 1e3:.2f} ms  p95 {res.p95 * 1e3:.2f} ms  "
          f"{res.throughput:.2f} clips/s  (batch {res.batch}, {args.threads} thread(s))")
    _emit(res, args)
    return 0


def _parse_axis_values(axis: str, raw: str):
    vals = [v.strip() for v in raw.split(",") if v.strip()]
    if not vals:
        raise UsageError("--values is empty")
    try:
        if axis == "frames":
            return [int(v) for v in vals]
        if axis == "channel_factor":
            return [float(v) for v in vals]
    except ValueError:
        raise UsageError(f"bad --values for {axis}: {raw!r}") from None
    bad = [v for v in vals if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variants {bad}; choose from {VARIANTS}")
    return vals


def sweep(base: ModelConfig, axis: str, values, convention: str = analysis.CANONICAL_CONVENTION) -> list[dict]:
    """Params / FLOPs for each value of one config axis. Sweeping ``frames``
    pins the interaction-branch width at the base value, so only the stem
    input changes."""
    if axis not in SWEEP_AXES:
        raise UsageError(f"axis must be one of {SWEEP_AXES}")
    rows = []
    for v in values:
        if axis == "frames":
            cfg = base.replace(frames=v, ioi_frames=base.temporal_width)
        else:
            cfg = base.replace(**{axis: v})
        rep = analysis.count_flops(build_model(cfg), convention=convention)
        rows.append({axis: v, "params": rep.total_params, "flops": rep.total_flops,
                     "mac_layer_flops": rep.mac_layer_flops, "convention": convention})
    return rows


def cmd_sweep(args) -> int:
    base = _model_from_args(args)
    rows = sweep(base, args.axis, _parse_axis_values(args.axis, args.values), args.convention)
    for r in rows:
        print(f"{args.axis}={r[args.axis]}: params {r['params'] / 1e6:.3f}M  flops {r['flops'] / 1e9:.3f}G")
    _emit(rows, args)
    return 0


# -- parser ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="squeezetime", description="Squeezed-time video networks: count, train, evaluate, benchmark.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_, out_required=False, preset="default"):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="flat key=value file with model./train./data. keys")
        sp.add_argument("--out", required=out_required, help="output path (.csv or .json)")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--preset", choices=("default", "toy"), default=preset,
                        help="base model config before file overrides")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("datagen", cmd_datagen, "generate a synthetic direction-of-motion dataset (.sqvd)", True)
    sp.add_argument("--num-samples", type=int, help="videos per class")

    sp = add("train", cmd_train, "train on an .sqvd dataset", preset="toy")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--checkpoint-dir")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--model-out", help="write the final checkpoint here")

    sp = add("eval", cmd_eval, "multi-view evaluation of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--clips", type=int, default=1)
    sp.add_argument("--crops", type=int, default=1)
    sp.add_argument("--interval", type=int, default=2)

    sp = add("count", cmd_count, "per-layer parameter and FLOP report")
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--convention", choices=analysis.CONVENTIONS, default=analysis.CANONICAL_CONVENTION)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference gradient suite (float64)")
    sp.add_argument("--max-coords", type=int, help="sample this many coordinates per tensor (default: all)")
    sp.add_argument("--ops-only", action="store_true", help="skip the whole-model check")

    sp = add("bench", cmd_bench, "forward latency, or the 3D-vs-squeezed layer comparison", preset="toy")
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--batch", type=int, default=1)
    sp.add_argument("--warmup", type=int, default=2)
    sp.add_argument("--reps", type=int, default=10)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--baseline3d", action="store_true")
    sp.add_argument("--channels", type=int, default=8)
    sp.add_argument("--size", type=int, default=16)
    sp.add_argument("--kernel", type=int, default=3)
    sp.add_argument("--frames", type=int, default=16)

    sp = add("sweep", cmd_sweep, "params/FLOPs across one config axis")
    sp.add_argument("--axis", choices=SWEEP_AXES, required=True)
    sp.add_argument("--values", required=True, help="comma-separated")
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--convention", choices=analysis.CONVENTIONS, default=analysis.CANONICAL_CONVENTION)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (OSError, ValueError, CheckpointError, data.DatasetFormatError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
