"""Command-line interface.

Subcommands: gradcheck, gen-data, train, eval, ablate, sweep.
Flags: --config, --data, --out, --seed (override), --variant, --k, --quiet.
Exit codes: 0 ok, 1 check failure, 2 config error, 3 IO error,
4 checkpoint version mismatch. DKH_THREADS caps ablate/sweep fan-out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import configio
from .checkpoint import load_checkpoint, save_checkpoint
from .data import default_meta, generate_modality_flip, generate_oos, \
    load_jsonl, save_jsonl
from .errors import (
    CheckpointFormatError,
    CheckpointVersionError,
    ConfigError,
    DatasetParseError,
    DkhError,
)
from .estimator import MultimodalIntentClassifier
from .experiments import PAPER_ABLATION_VARIANTS, results_to_csv, \
    run_ablation_suite, run_kernel_sweep
from .manifest import RunManifest, utc_now, write_manifest
from .model import Model
from .train import evaluate, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VERSION = 4

DEFAULT_GRADCHECK_MODEL = {
    "model.vocab_size": "12",
    "model.max_len": "7",
    "model.d_text": "8",
    "model.d_audio": "4",
    "model.d_visual": "4",
    "model.n_heads": "2",
    "model.k_s": "3",
    "model.n_encoder_layers": "1",
    "model.ffn_mult": "2",
    "model.n_classes": "3",
    "model.dropout": "0.0",
    "model.long_filter_len": "7",
}


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _load_config(args) -> dict[str, str]:
    if args.config is None:
        return {}
    return configio.load_config(args.config)


def _require(args, attr: str) -> str:
    value = getattr(args, attr)
    if value is None:
        raise ConfigError(f"--{attr} is required for this command")
    return value


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DKH_THREADS", "1")))
    except ValueError:
        return 1


def _new_manifest(command: str, cfg: dict[str, str],
                  seeds: list[int]) -> RunManifest:
    return RunManifest(command=command, config_text=configio.canonical_text(cfg),
                       seeds=seeds, started_at=utc_now())


def cmd_gradcheck(args) -> int:
    """Finite-difference check of every operator and the full model."""
    from .checks import run_gradcheck_suite  # deferred: imports the full stack

    cfg = _load_config(args)
    merged = dict(DEFAULT_GRADCHECK_MODEL)
    merged.update(cfg)
    model_cfg = configio.model_config_from(merged)
    if args.seed is not None:
        model_cfg.seed = args.seed
    h = configio._coerce(merged.get("gradcheck.h", "1e-5"), float, "gradcheck.h")
    op_tol = configio._coerce(merged.get("gradcheck.op_tolerance", "1e-5"),
                              float, "gradcheck.op_tolerance")
    model_tol = configio._coerce(merged.get("gradcheck.tolerance", "1e-4"),
                                 float, "gradcheck.tolerance")
    results = run_gradcheck_suite(model_cfg, h=h, op_tol=op_tol,
                                  model_tol=model_tol, seed=model_cfg.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        _say(args, f"{r.name:<{width}}  max_rel_err {r.max_rel_err:.3e}  "
                   f"tol {r.tol:.0e}  {'PASS' if r.passed else 'FAIL'}")
    if all(r.passed for r in results):
        _say(args, "gradcheck: all checks passed")
        return EXIT_OK
    print("gradcheck: FAILED", file=sys.stderr)
    return EXIT_CHECK_FAILED


def cmd_gen_data(args) -> int:
    """Synthesize a JSON Lines dataset from a synth.* config."""
    cfg = _load_config(args)
    if args.config is None:
        raise ConfigError("--config is required for gen-data")
    spec = configio.synth_spec_from(cfg)
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    task = cfg.get("synth.task", "oos" if spec.oos_fraction > 0 else "flip")
    if task not in ("flip", "oos"):
        raise ConfigError(f"synth.task must be flip or oos, got {task!r}")
    out_dir = Path(_require(args, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _new_manifest("gen-data", cfg, [spec.seed])
    if args.config:
        manifest.add_input(args.config)
    samples = generate_oos(spec) if task == "oos" else generate_modality_flip(spec)
    data_path = out_dir / "dataset.jsonl"
    save_jsonl(data_path, samples, default_meta(spec))
    manifest.add_output(data_path)
    write_manifest(out_dir / "manifest.json", manifest)
    _say(args, f"wrote {len(samples)} samples to {data_path}")
    return EXIT_OK


def _infer_data_geometry(cfg: dict[str, str], samples, meta) -> dict[str, str]:
    """Fill model geometry keys from dataset meta when absent in the config."""
    out = dict(cfg)
    meta = meta or {}
    if "model.vocab_size" not in out:
        vocab = meta.get("vocab_size",
                         max(max(s.tokens) for s in samples) + 1)
        out["model.vocab_size"] = str(vocab)
    if "model.n_classes" not in out:
        n_classes = meta.get("n_classes",
                             max(s.label for s in samples) + 1)
        out["model.n_classes"] = str(n_classes)
    if "model.max_len" not in out:
        out["model.max_len"] = str(max(len(s.tokens) for s in samples) + 1)
    if "model.d_audio" not in out:
        out["model.d_audio"] = str(meta.get("d_audio", samples[0].audio.shape[1]))
    if "model.d_visual" not in out:
        out["model.d_visual"] = str(meta.get("d_visual", samples[0].visual.shape[1]))
    return out


def _oos_index(cfg: dict[str, str], meta) -> int | None:
    if "eval.oos_index" in cfg:
        return int(cfg["eval.oos_index"])
    names = (meta or {}).get("class_names", [])
    return names.index("oos") if "oos" in names else None


def cmd_train(args) -> int:
    """Train a model; writes checkpoint, training log, and manifest."""
    cfg = _load_config(args)
    samples, meta = load_jsonl(_require(args, "data"))
    if not samples:
        raise DkhError("training data is empty")
    cfg = _infer_data_geometry(cfg, samples, meta)
    model_cfg = configio.model_config_from(cfg)
    train_cfg = configio.train_config_from(cfg)
    if args.seed is not None:
        model_cfg.seed = args.seed
        train_cfg.shuffle_seed = args.seed
    if args.variant is not None:
        model_cfg.variant = args.variant
        model_cfg.validate()
    out_dir = Path(_require(args, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _new_manifest("train", cfg,
                             [model_cfg.seed, train_cfg.shuffle_seed])
    if args.config:
        manifest.add_input(args.config)
    manifest.add_input(args.data)
    model = Model(model_cfg)
    log_path = out_dir / "train_log.jsonl"
    train(model, samples, train_cfg, log_path=log_path)
    ckpt_path = out_dir / "checkpoint.dkhy"
    save_checkpoint(ckpt_path, model)
    manifest.add_output(log_path)
    manifest.add_output(ckpt_path)
    write_manifest(out_dir / "manifest.json", manifest)
    _say(args, f"trained {train_cfg.epochs} epochs; checkpoint at {ckpt_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    """Evaluate a checkpoint on a dataset; writes report.json/csv."""
    cfg = _load_config(args)
    if "eval.checkpoint" not in cfg:
        raise ConfigError("eval requires config key eval.checkpoint")
    samples, meta = load_jsonl(_require(args, "data"))
    if not samples:
        raise DkhError("evaluation data is empty")
    model = load_checkpoint(cfg["eval.checkpoint"])
    report = evaluate(model, samples, oos_index=_oos_index(cfg, meta))
    out_dir = Path(_require(args, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _new_manifest("eval", cfg, [model.config.seed])
    if args.config:
        manifest.add_input(args.config)
    manifest.add_input(args.data)
    manifest.add_input(cfg["eval.checkpoint"])
    report_json = out_dir / "report.json"
    payload = dict(report.as_dict(), confusion=report.confusion.tolist())
    report_json.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    report_csv = out_dir / "report.csv"
    header = "metric,value\n"
    rows = "".join(f"{k},{v!r}\n" for k, v in report.as_dict().items())
    report_csv.write_text(header + rows, encoding="utf-8")
    manifest.add_output(report_json)
    manifest.add_output(report_csv)
    write_manifest(out_dir / "manifest.json", manifest)
    for key, value in report.as_dict().items():
        _say(args, f"{key:>8}: {value:.6f}")
    return EXIT_OK


def _split_holdout(samples, fraction: float):
    n_test = max(1, int(round(len(samples) * fraction)))
    if n_test >= len(samples):
        raise DkhError("holdout fraction leaves no training data")
    return samples[:-n_test], samples[-n_test:]


def _estimator_from_config(cfg: dict[str, str],
                           model_cfg, train_cfg) -> MultimodalIntentClassifier:
    return MultimodalIntentClassifier(
        d_text=model_cfg.d_text, d_audio=model_cfg.d_audio,
        d_visual=model_cfg.d_visual, n_heads=model_cfg.n_heads,
        k_s=model_cfg.k_s, n_encoder_layers=model_cfg.n_encoder_layers,
        ffn_mult=model_cfg.ffn_mult, variant=model_cfg.variant,
        dropout=model_cfg.dropout, vocab_size=model_cfg.vocab_size,
        n_classes=model_cfg.n_classes, max_len=model_cfg.max_len,
        kernel_mlp_hidden=model_cfg.kernel_mlp_hidden,
        long_filter_len=model_cfg.long_filter_len, epochs=train_cfg.epochs,
        batch_size=train_cfg.batch_size, learning_rate=train_cfg.learning_rate,
        weight_decay=train_cfg.weight_decay,
        grad_clip_norm=train_cfg.grad_clip_norm, seed=model_cfg.seed)


def _run_suite(args, command: str) -> int:
    cfg = _load_config(args)
    samples, meta = load_jsonl(_require(args, "data"))
    if not samples:
        raise DkhError("data is empty")
    cfg = _infer_data_geometry(cfg, samples, meta)
    model_cfg = configio.model_config_from(cfg)
    train_cfg = configio.train_config_from(cfg)
    base_seed = args.seed if args.seed is not None else model_cfg.seed
    seeds = [base_seed + i for i in range(train_cfg.n_runs)]
    train_samples, test_samples = _split_holdout(samples,
                                                 train_cfg.holdout_fraction)
    base = _estimator_from_config(cfg, model_cfg, train_cfg)
    oos_index = _oos_index(cfg, meta)
    if command == "ablate":
        variants = tuple(args.variant.split(",")) if args.variant \
            else PAPER_ABLATION_VARIANTS
        results = run_ablation_suite(base, train_samples, test_samples,
                                     variants=variants, seeds=seeds,
                                     oos_index=oos_index, threads=_threads())
    else:
        if args.variant:
            base.set_params(variant=args.variant)
        k_values = tuple(int(k) for k in args.k.split(",")) if args.k \
            else (1, 3, 5)
        results = run_kernel_sweep(base, train_samples, test_samples,
                                   k_values=k_values, seeds=seeds,
                                   oos_index=oos_index, threads=_threads())
    out_dir = Path(_require(args, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _new_manifest(command, cfg, seeds)
    if args.config:
        manifest.add_input(args.config)
    manifest.add_input(args.data)
    csv_path = out_dir / "results.csv"
    csv_path.write_text(results_to_csv(results), encoding="utf-8")
    manifest.add_output(csv_path)
    write_manifest(out_dir / "manifest.json", manifest)
    _say(args, f"wrote {len(results)} runs to {csv_path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    """Train the ablation variants with matched seeds; writes results.csv."""
    return _run_suite(args, "ablate")


def cmd_sweep(args) -> int:
    """Sweep kernel sizes with matched seeds; writes results.csv."""
    return _run_suite(args, "sweep")


_COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dkhyena",
        description="Dynamic-kernel multimodal intent classifier")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--data", help="JSON Lines dataset path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--variant", help="model variant (comma list for ablate)")
        p.add_argument("--k", help="comma list of kernel sizes for sweep")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointVersionError as exc:
        print(f"checkpoint version error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (CheckpointFormatError, DatasetParseError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DkhError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
