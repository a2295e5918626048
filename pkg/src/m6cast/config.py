"""Flat key-value configuration files.

Defaults live in the packaged ``default.conf``; user files override keys.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any, Callable

__all__ = ["ConfigError", "parse_config_text", "load_config", "defaults"]


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text: str) -> str | None:
    return text.strip() or None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in _str_list(text))


def _empirical(text: str):
    text = text.strip()
    if text.lower() == "auto":
        return "auto"
    return tuple(int(t) for t in _str_list(text))


SCHEMA: dict[str, Callable[[str], Any]] = {
    "prices": _opt_str,
    "panel": _opt_str,
    "class_overrides": _opt_str,
    "train_start": str.strip,
    "train_end": str.strip,
    "eval_start": str.strip,
    "eval_end": str.strip,
    "windows": _str_list,
    "horizon_days": int,
    "methods": _str_list,
    "portfolio": _bool,
    "seed": int,
    "empirical_assets": _empirical,
    "correlation_years": float,
    "correlation_min_overlap": int,
    "center": _bool,
    "adavol_p": int,
    "adavol_q": int,
    "adavol_eta": float,
    "adavol_eps": float,
    "adavol_delta": float,
    "adavol_theta0": _float_list,
    "ql_convention": str.strip,
    "batch_size": int,
    "schedule_power": float,
    "matrix_iterations": int,
    "matrix_alpha0": float,
    "matrix_optimizer": str.strip,
    "portfolio_iterations": int,
    "portfolio_alpha0": float,
    "portfolio_optimizer": str.strip,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "heldout_samples": int,
    "restarts": int,
    "uniform_gross": float,
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = SCHEMA[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def defaults() -> dict[str, Any]:
    text = resources.files("m6cast").joinpath("default.conf").read_text()
    return parse_config_text(text, "default.conf")


def load_config(path=None, **overrides) -> dict[str, Any]:
    """Defaults, then the file at ``path`` (if any), then keyword overrides.

    Relative data paths in a config file are resolved against its directory.
    """
    cfg = defaults()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        user = parse_config_text(path.read_text(), str(path))
        for key in ("prices", "panel", "class_overrides"):
            if user.get(key) and not Path(user[key]).is_absolute():
                user[key] = str((path.parent / user[key]).resolve())
        cfg.update(user)
    unknown = set(overrides) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg.update(overrides)
    return cfg
