"""Command-line entry point.

Subcommands bind the library into reproducible experiments:

* train        -- run one training protocol, write model.weights + reports
* crossval     -- stratified k-fold cross-validation with fold checkpoints
* augment      -- expand a PPM dataset tree on disk
* activations  -- export convolution-layer activation maps as PGM files

Every command is a pure function of (config, dataset bytes, seed): rerunning
with the same inputs reproduces outputs byte for byte. Exit codes: 0 success,
1 runtime failure (one machine-parsable "error: ..." line on stderr), 2 usage
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import backend
from .augment import apply_plan, draw_plan
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config, write_lock_file
from .dataset import DatasetError, load_manifest, stratified_kfold, write_manifest
from .model import export_activations, load_weights, save_weights, write_activation_dump
from .netpbm import read_ppm, write_ppm
from .rng import RngState
from .training import (
    CROSSVAL_PROTOCOLS,
    Metrics,
    baseline_train,
    cross_validate,
    donor_regime_train,
    two_stage_train,
    write_confusion_csv,
    write_json,
)


def _load_cli_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = list(args.set or [])
    if args.dataset_root:
        overrides.append(f"dataset_root={args.dataset_root}")
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def _prepare_run(cfg: ExperimentConfig) -> Path:
    if not cfg.output_dir:
        raise ConfigError("output_dir is not set")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_lock_file(cfg, out / "config.lock.json")
    return out


def cmd_train(args) -> int:
    cfg = _load_cli_config(args)
    out = _prepare_run(cfg)
    taxonomy, samples = load_manifest(cfg.dataset_root)
    if cfg.augment.variants_per_image > 0:
        from .augment import expand_dataset

        samples = expand_dataset(samples, cfg.augment,
                                 RngState(cfg.seed).derive("augment"))
    if cfg.protocol == "two_stage":
        spec, weights, reports = two_stage_train(taxonomy, samples, cfg.train)
        stage_reports = list(reports)
    elif cfg.protocol == "baseline":
        spec, weights, report = baseline_train(taxonomy, samples, cfg.train)
        stage_reports = [report]
    else:
        donor, _ = load_weights(cfg.donor_weights)
        spec, weights, report = donor_regime_train(taxonomy, samples, cfg.train,
                                                   cfg.protocol, donor)
        stage_reports = [report]
    weights_path = out / "model.weights"
    save_weights(weights, weights_path, spec=spec)
    # recorded relative to the output dir so reruns in different dirs agree
    stage_reports[-1].weights_path = weights_path.name
    write_json(out / "stage_reports.json",
               {"protocol": cfg.protocol, "stages": [r.to_dict() for r in stage_reports]})
    write_manifest(out / "manifest.json", taxonomy, samples)
    return 0


def cmd_crossval(args) -> int:
    cfg = _load_cli_config(args)
    if cfg.protocol not in CROSSVAL_PROTOCOLS:
        raise ConfigError(
            f"crossval supports protocols {CROSSVAL_PROTOCOLS}, got {cfg.protocol!r}")
    out = _prepare_run(cfg)
    taxonomy, samples = load_manifest(cfg.dataset_root)
    checkpoint_path = out / "folds_done.json"
    completed: dict[int, Metrics] = {}
    if checkpoint_path.is_file():
        done = json.loads(checkpoint_path.read_text())
        completed = {int(k): Metrics.from_dict(v) for k, v in done.items()}

    def on_fold(fold: int, metrics: Metrics) -> None:
        completed[fold] = metrics
        payload = {str(f): completed[f].to_dict(list(taxonomy.parents))
                   for f in sorted(completed)}
        checkpoint_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    report = cross_validate(taxonomy, samples, cfg.k, cfg.train, cfg.protocol,
                            augment_spec=cfg.augment, fold_callback=on_fold,
                            completed=completed)
    for fold, metrics in enumerate(report.fold_metrics):
        write_confusion_csv(out / f"confusion_fold{fold}.csv", metrics,
                            list(taxonomy.parents))
    write_json(out / "crossval_report.json", report.to_dict(list(taxonomy.parents)))
    plan = stratified_kfold(samples, cfg.k, cfg.seed)
    write_manifest(out / "manifest.json", taxonomy, samples, fold_plan=plan)
    return 0


def cmd_augment(args) -> int:
    cfg = _load_cli_config(args)
    in_root = Path(args.input)
    out_root = Path(args.output)
    taxonomy, samples = load_manifest(in_root)
    master = RngState(cfg.seed).derive("augment")
    spec = cfg.augment
    for i, sample in enumerate(samples):
        src = in_root / sample.id
        dst = out_root / sample.id
        dst.parent.mkdir(parents=True, exist_ok=True)
        image = read_ppm(src)
        write_ppm(dst, image)
        stream = master.derive(f"augment/{i}")
        for j in range(spec.variants_per_image):
            plan = draw_plan(spec, stream.derive(f"variant/{j}"))
            variant = apply_plan(image, plan)
            write_ppm(dst.with_name(f"{dst.stem}__aug{j}.ppm"), variant)
    return 0


def cmd_activations(args) -> int:
    weights, spec = load_weights(args.weights)
    if spec is None:
        raise ConfigError(
            f"{args.weights} does not embed an architecture; cannot run forward")
    image = read_ppm(args.image)
    from .augment import resize

    h, w, _ = spec.input_shape
    if image.shape[:2] != (h, w):
        image = resize(image, h, w)
    dump = export_activations(spec, weights, image, args.layer)
    written = write_activation_dump(dump, args.output)
    print(f"wrote {len(written)} files to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ricecnn",
        description="Train and inspect the small rice disease/pest CNN.",
    )
    parser.add_argument("--backend", choices=["auto", "numba", "numpy"],
                        help="kernel backend override (default: RICECNN_BACKEND or auto)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry by dot path, e.g. train.epochs=5")
        p.add_argument("--dataset-root", help="override dataset_root")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--seed", type=int, help="override seed")

    p_train = sub.add_parser("train", help="run one training protocol")
    add_config_args(p_train)
    p_train.set_defaults(func=cmd_train)

    p_cv = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    add_config_args(p_cv)
    p_cv.set_defaults(func=cmd_crossval)

    p_aug = sub.add_parser("augment", help="expand a PPM dataset tree on disk")
    add_config_args(p_aug)
    p_aug.add_argument("--input", required=True, help="source dataset root")
    p_aug.add_argument("--output", required=True, help="destination root")
    p_aug.set_defaults(func=cmd_augment)

    p_act = sub.add_parser("activations", help="export conv activation maps")
    p_act.add_argument("--weights", required=True, help="model weight file")
    p_act.add_argument("--image", required=True, help="input PPM image")
    p_act.add_argument("--layer", required=True, choices=["first_conv", "last_conv"])
    p_act.add_argument("--output", required=True, help="output directory")
    p_act.set_defaults(func=cmd_activations)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.backend:
        backend.set_backend(args.backend)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
