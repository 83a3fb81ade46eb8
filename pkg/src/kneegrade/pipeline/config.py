"""Experiment configuration: flat `key = value` text with one section per
stage, parsed by configparser. Every key has a default; unknown sections or
keys are errors, so typos fail loudly. `resolve_config` renders the fully
resolved form that gets written into each run directory.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from ..errors import ConfigError

# section -> key -> (parser, default)
_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_bool(s: str) -> bool:
    try:
        return _BOOL[s.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {s!r}")


def _parse_taps(s: str) -> tuple:
    taps = tuple(t.strip() for t in s.split(",") if t.strip())
    if not taps:
        raise ValueError("taps list is empty")
    return taps


SCHEMA = {
    "run": {
        "seed": (int, 7),
    },
    "data": {
        # used when synth.enabled = false
        "labels_csv": (str, ""),
        "annotations_csv": (str, ""),
        "images_dir": (str, ""),
    },
    "synth": {
        "enabled": (_parse_bool, True),
        "images_per_grade": (int, 40),
        "width": (int, 1000),
        "height": (int, 600),
        "gap_grade0": (float, 56.0),
        "gap_grade4": (float, 12.0),
        "edge_grade0": (float, 0.28),
        "edge_grade4": (float, 0.52),
        "noise": (float, 0.02),
        "brightness_jitter": (float, 0.12),
        "blob_count": (int, 6),
        "gap_jitter": (float, 0.18),
        "edge_jitter": (float, 0.12),
    },
    "detect": {
        "enabled": (_parse_bool, True),
        "scale": (float, 0.1),
        "equalize": (_parse_bool, True),
        "stride": (int, 1),
        "templates_per_grade": (int, 10),
        "positives": (int, 200),
        "negatives": (int, 600),
        "patch_train_fraction": (float, 0.7),
        "svm_c": (float, 1.0),
        "svm_epochs": (int, 50),
        "svm_eta0": (float, 1.0),
        "svm_standardize": (_parse_bool, False),
    },
    "extract": {
        "size": (int, 256),
        "cnn_input": (int, 64),
    },
    "pretrain": {
        "enabled": (_parse_bool, True),
        "images_per_grade": (int, 15),
        "epochs": (int, 10),
        "base_lr": (float, 0.001),
        "batch_size": (int, 32),
        "momentum": (float, 0.9),
    },
    "features": {
        "enabled": (_parse_bool, True),
        "taps": (_parse_taps, ("conv2", "pool2", "fc-feat")),
        "train_fraction": (float, 0.7),
        "svm_c": (float, 1.0),
        "svm_epochs": (int, 30),
        "svm_eta0": (float, 1.0),
    },
    "finetune": {
        "enabled": (_parse_bool, True),
        "epochs": (int, 20),
        "base_lr": (float, 0.001),
        "batch_size": (int, 32),
        "momentum": (float, 0.9),
        "train_ratio": (float, 0.6),
        "val_ratio": (float, 0.1),
        "test_ratio": (float, 0.3),
    },
}


def default_config() -> dict:
    return {sec: {k: v for k, (_, v) in keys.items()} for sec, keys in SCHEMA.items()}


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Parse a config file against the schema; None gives pure defaults.

    overrides maps "section.key" to a replacement value (already typed),
    applied last; it serves CLI flags like --seed.
    """
    cfg = default_config()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key {key!r} in section [{section}]")
                parse, _ = SCHEMA[section][key]
                try:
                    cfg[section][key] = parse(raw)
                except ValueError as exc:
                    raise ConfigError(
                        f"bad value for {section}.{key}: {raw!r} ({exc})"
                    ) from exc
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown override {dotted!r}")
        cfg[section][key] = value
    return cfg


def resolve_config(cfg: dict) -> str:
    """Render the resolved configuration deterministically."""
    lines = []
    for section in SCHEMA:
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            value = cfg[section][key]
            if isinstance(value, tuple):
                value = ",".join(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
