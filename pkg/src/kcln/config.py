"""Flat ``key = value`` run configuration with ``#`` comments.

Keys use the long command-line flag names with dashes or underscores
(``hidden = 40``, ``corrupt-advice = true``). Values from the file fill in
anything not given on the command line.
"""

from __future__ import annotations


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


SCHEMA = {
    "nodes": str, "edges": str, "vocab": str, "advice": str, "checkpoint": str,
    "log": str, "out": str, "ids": str,
    "layers": int, "hidden": int, "epochs": int, "seed": int, "patience": int, "jobs": int,
    "alpha": float, "lr": float, "train_fraction": float, "sample_fraction": float,
    "mode": str, "protocol": str, "directed": _bool, "corrupt_advice": _bool,
    "fractions": _floats, "alphas": _floats, "seeds": _ints,
    "entities": int, "features": int, "relations": int, "labels": int, "rules": int,
    "noise": float, "feature_noise": float, "edge_density": float,
}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and type-check ``text``; unknown keys and bad values raise ConfigError."""
    out = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
        try:
            out[key] = SCHEMA[key](value.strip())
        except ValueError as exc:
            raise ConfigError(f"{source}:{line_no}: bad value for {key}: {exc}") from None
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def merge(flags: dict, file_values: dict, defaults: dict) -> dict:
    """Flags that were given win, then the config file, then defaults."""
    merged = dict(defaults)
    merged.update(file_values)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged
