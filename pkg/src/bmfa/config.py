"""Run configuration: one JSON document, sections {frontend, model, train,
eval, data}, every key defaulted here and unknown keys rejected. Flags on the
command line override file values.
"""

from __future__ import annotations

import copy
import hashlib
import json

from .errors import ValidationError

DEFAULTS: dict = {
    "frontend": {
        "sample_rate": 16000,
        "frame_len_ms": 25.0,
        "frame_shift_ms": 10.0,
        "preemphasis": 0.97,
        "low_freq": 20.0,
        "high_freq": None,
        "log_floor": 1e-10,
        "cmn_window_s": 3.0,
        "vad_offset": 0.0,
        "min_chunk": 200,
        "max_chunk": 400,
    },
    "model": {
        "strategy": "bmfa",
        "fusion": "afm",
        "r": 4,
        "embedding_dim": 512,
        "stages": [1, 2, 3, 4],
    },
    "train": {
        "steps": 300,
        "batch": 8,
        "crop": 64,
        "lr_start": 1e-3,
        "lr_end": 1e-4,
        "seed": None,  # mandatory: must be set by file or flag before training
        "m": 0.15,
        "s": 30.0,
    },
    "eval": {
        "p_target": 0.01,
        "c_miss": 1.0,
        "c_fa": 1.0,
    },
    "data": {
        "n_speakers": 20,
        "utts_per_speaker": 50,
        "min_frames": 200,
        "max_frames": 400,
        "noise_scale": 0.5,
        "eval_utts_per_speaker": 5,
    },
}

# keys whose value may be JSON null; keys defaulting to null also need their
# non-null type recorded here
_NULLABLE = {"frontend.high_freq", "train.seed", "model.fusion"}
_NULL_KINDS = {"frontend.high_freq": 0.0, "train.seed": 0}


def _check_value(path: str, default, value):
    """Validate one override against its default; returns the stored value
    (numbers are coerced to the default's kind)."""
    if value is None:
        if default is None or path in _NULLABLE:
            return None
        raise ValidationError(f"config key {path} must not be null")
    if isinstance(value, bool):
        raise ValidationError(f"config key {path} must not be boolean")
    if default is None:
        default = _NULL_KINDS[path]
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ValidationError(f"config key {path} must be a number, "
                                  f"got {type(value).__name__}")
        return float(value)
    if isinstance(default, int):
        if not isinstance(value, int) and not (
            isinstance(value, float) and value.is_integer()
        ):
            raise ValidationError(f"config key {path} must be an integer")
        return int(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(f"config key {path} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ValidationError(f"config key {path} must be a list")
        return value
    return value


def merge_config(overrides: dict) -> dict:
    """DEFAULTS overlaid with *overrides*; unknown sections or keys rejected."""
    if not isinstance(overrides, dict):
        raise ValidationError("config document must be a JSON object")
    cfg = copy.deepcopy(DEFAULTS)
    for section, body in overrides.items():
        if section not in cfg:
            raise ValidationError(
                f"unknown config section {section!r}; "
                f"known: {', '.join(sorted(cfg))}"
            )
        if not isinstance(body, dict):
            raise ValidationError(f"config section {section!r} must be an object")
        for key, value in body.items():
            if key not in cfg[section]:
                raise ValidationError(
                    f"unknown config key {section}.{key}; "
                    f"known: {', '.join(sorted(cfg[section]))}"
                )
            cfg[section][key] = _check_value(
                f"{section}.{key}", DEFAULTS[section][key], value
            )
    return cfg


def load_config(path=None) -> dict:
    """Config from a JSON file merged over defaults; None gives pure defaults."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e})") from None
    return merge_config(doc)


def set_key(cfg: dict, dotted: str, value) -> None:
    """Apply one 'section.key=value' override (value already parsed)."""
    parts = dotted.split(".")
    if len(parts) != 2 or parts[0] not in cfg or parts[1] not in cfg[parts[0]]:
        raise ValidationError(f"unknown config key {dotted!r}")
    cfg[parts[0]][parts[1]] = _check_value(
        dotted, DEFAULTS[parts[0]][parts[1]], value
    )


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
