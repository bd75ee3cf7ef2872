"""Declarative experiment configuration.

One JSON file describes an experiment end to end; unknown keys are rejected
so a typo cannot silently fall back to a default. Command-line overrides use
dot paths ("train.epochs=5") and win over the file. Every run writes a
config.lock.json with all defaults resolved, which is sufficient to re-run
the experiment without the original file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .augment import DEFAULT_PROBABILITIES, AugmentSpec
from .training import TrainConfig

PROTOCOLS = ("two_stage", "baseline", "transfer", "fine_tune")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset_root: str = ""
    output_dir: str = ""
    protocol: str = "two_stage"
    k: int = 10
    seed: int = 0
    donor_weights: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def validate(self) -> "ExperimentConfig":
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.protocol in ("transfer", "fine_tune") and not self.donor_weights:
            raise ConfigError(f"protocol {self.protocol!r} requires donor_weights")
        try:
            self.train.validate()
            self.augment.validate(require_rotation_bias=True)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        return {
            "dataset_root": self.dataset_root,
            "output_dir": self.output_dir,
            "protocol": self.protocol,
            "k": self.k,
            "seed": self.seed,
            "donor_weights": self.donor_weights,
            "train": {
                "learning_rate": self.train.learning_rate,
                "batch_size": self.train.batch_size,
                "epochs": self.train.epochs,
                "dropout_rate": self.train.dropout_rate,
                "stage_one_epochs": self.train.stage_one_epochs,
            },
            "augment": {
                "variants_per_image": self.augment.variants_per_image,
                "probabilities": dict(self.augment.probabilities),
                "small_rotation_degrees": list(self.augment.small_rotation_degrees),
            },
        }


def _reject_unknown(section: str, given: dict, allowed: set[str]) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    top_allowed = {"dataset_root", "output_dir", "protocol", "k", "seed",
                   "donor_weights", "train", "augment"}
    _reject_unknown("config", doc, top_allowed)

    train_doc = doc.get("train", {})
    # the top-level experiment seed is the only seed; train.seed is derived
    train_allowed = {f.name for f in fields(TrainConfig)} - {"seed"}
    _reject_unknown("train", train_doc, train_allowed)
    train = TrainConfig(seed=doc.get("seed", 0), **train_doc)

    aug_doc = dict(doc.get("augment", {}))
    aug_allowed = {"variants_per_image", "probabilities", "small_rotation_degrees"}
    _reject_unknown("augment", aug_doc, aug_allowed)
    probs = dict(DEFAULT_PROBABILITIES)
    probs.update(aug_doc.get("probabilities", {}))
    augment = AugmentSpec(
        variants_per_image=aug_doc.get("variants_per_image", 10),
        probabilities=probs,
        small_rotation_degrees=tuple(aug_doc.get("small_rotation_degrees", (-15.0, 15.0))),
    )

    return ExperimentConfig(
        dataset_root=doc.get("dataset_root", ""),
        output_dir=doc.get("output_dir", ""),
        protocol=doc.get("protocol", "two_stage"),
        k=doc.get("k", 10),
        seed=doc.get("seed", 0),
        donor_weights=doc.get("donor_weights"),
        train=train,
        augment=augment,
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply "dot.path=value" overrides on top of a parsed config. Values are
    parsed as JSON where possible, else taken as strings."""
    doc = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"override {key!r} does not name a config entry")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r} does not name a config entry")
        node[parts[-1]] = value
    return config_from_dict(doc)


def write_lock_file(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
