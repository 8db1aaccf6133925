"""Plain ``key = value`` configuration files.

Lines are UTF-8; ``#`` starts a comment; unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import fields
from typing import Dict, Mapping, Tuple


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _int_tuple(s: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in s.replace("x", ",").split(",") if p.strip())


MODEL_KEYS = {
    "stage_depths": _int_tuple,
    "stage_widths": _int_tuple,
    "patch_size": int,
    "image_size": _int_tuple,
    "sdr": _bool,
    "fdr": _bool,
    "cl": _bool,
    "hco_t": float,
    "mlp_ratio": int,
    "activation": str,
    "omega": str,
    "path": str,
    "dtype": str,
}
SCHEDULE_KEYS = {
    "base_lr": float,
    "warmup_start_lr": float,
    "warmup_epochs": float,
    "min_lr": float,
    "total_epochs": float,
}
TRAIN_KEYS = {
    "batch_size": int,
    "weight_decay": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "checkpoint_every": int,
    "mask_counted": str,
}
ALL_KEYS = {**MODEL_KEYS, **SCHEDULE_KEYS, **TRAIN_KEYS}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, object]:
    out: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = ALL_KEYS[key](value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def load_config(path) -> Dict[str, object]:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), str(path))


def split_sections(values: Mapping[str, object]):
    """Partition parsed values into (model, schedule, train) keyword dicts."""
    model = {k: v for k, v in values.items() if k in MODEL_KEYS}
    schedule = {k: v for k, v in values.items() if k in SCHEDULE_KEYS}
    train = {k: v for k, v in values.items() if k in TRAIN_KEYS}
    return model, schedule, train


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dataclass_items(obj) -> Dict[str, str]:
    return {f.name: format_value(getattr(obj, f.name)) for f in fields(obj)}
