"""Run configuration: defaults, config-file merging, flag overrides, hashing,
and run manifests.

Precedence is flags > config file > defaults.  The config file is JSON,
located by --config or the LEARN_CONFIG environment variable.  Only known
keys are accepted; a typo fails loudly instead of silently using a default.
"""

from __future__ import annotations

import copy
import json
import os
import platform
import time
from pathlib import Path

from .encoders import EncoderHandle, pretrained_encoder, toy_encoder
from .errors import ParseError
from .losses import LossConfig
from .seeding import sha256_hex

ENV_CONFIG = "LEARN_CONFIG"

DEFAULTS: dict = {
    "encoder": {
        "kind": "toy",
        "dim": 64,
        "seed": 0,
        "weights_path": None,
    },
    "loss": {
        "tau": 0.07,
        "lambda_align": 1.0,
        "lambda_laycontrast": 0.5,
        "lambda_semantic": 1.0,
        "lambda_intra": 0.36,
        "augment_mask_prob": 0.1,
        "augment_dropout": 0.1,
    },
}


def _check_known(cfg: dict, schema: dict, prefix: str = ""):
    for key, value in cfg.items():
        if key not in schema:
            known = ", ".join(sorted(schema))
            raise ParseError(f"unknown config key {prefix}{key!r}; known: {known}")
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ParseError(f"config key {prefix}{key!r} must be a section object")
            _check_known(value, schema[key], prefix=f"{prefix}{key}.")


def merge_config(
    file_config: dict | None = None, overrides: dict | None = None
) -> dict:
    """defaults <- file <- overrides, validating every key against the
    default schema.  overrides uses dotted keys ("loss.tau")."""
    merged = copy.deepcopy(DEFAULTS)
    if file_config:
        _check_known(file_config, DEFAULTS)
        for section, values in file_config.items():
            merged[section].update(values)
    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in DEFAULTS or parts[1] not in DEFAULTS[parts[0]]:
            known = ", ".join(
                f"{s}.{k}" for s in sorted(DEFAULTS) for k in sorted(DEFAULTS[s])
            )
            raise ParseError(f"unknown config key {dotted!r}; known: {known}")
        merged[parts[0]][parts[1]] = value
    return merged


def load_config_file(path: str | Path | None) -> dict:
    """Read a JSON config file; falls back to $LEARN_CONFIG, then {}."""
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ParseError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return data


def parse_set_overrides(pairs: list[str]) -> dict:
    """--set key=value strings -> {dotted_key: parsed value}.  Values parse
    as JSON when possible, else stay strings."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ParseError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[key.strip()] = value
    return out


def config_hash(cfg: dict) -> str:
    return sha256_hex(json.dumps(cfg, sort_keys=True, separators=(",", ":")))


def encoder_from_config(cfg: dict) -> EncoderHandle:
    enc = cfg["encoder"]
    if enc["kind"] == "toy":
        return toy_encoder(dim=int(enc["dim"]), seed=int(enc["seed"]))
    if enc["kind"] == "pretrained":
        return pretrained_encoder(weights_path=enc["weights_path"], dim=int(enc["dim"]))
    raise ParseError(f"unknown encoder kind {enc['kind']!r}")


def loss_from_config(cfg: dict) -> LossConfig:
    return LossConfig(**cfg["loss"])


def write_run_manifest(
    out_dir: str | Path,
    command: str,
    cfg: dict,
    seed: int | None,
    started: float,
    outputs: dict | None = None,
) -> Path:
    """Drop run_manifest.json describing one CLI run."""
    import numpy
    import PIL
    import scipy
    import torch

    from . import __version__

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "versions": {
            "python": platform.python_version(),
            "learn": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "torch": torch.__version__,
            "pillow": PIL.__version__,
        },
        "wall_time_s": round(time.time() - started, 3),
        "outputs": outputs or {},
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
