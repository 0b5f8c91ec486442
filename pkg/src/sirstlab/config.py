"""Run configuration: key=value files, presets and command-line overrides.

Keys are ``section.field`` (sections: synth, net, train, metrics, baseline)
plus the top-level ``seed`` and ``preset``.  Values are parsed as bool
(true/false), none, int, float, comma lists (tuples), ``k:v`` maps, or
left as strings.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from . import net as N
from .baselines import FilterConfig
from .errors import ConfigError
from .synth import SynthConfig, toy_config
from .train import TrainConfig

SECTIONS = ("synth", "net", "train", "metrics", "baseline")
PRESETS = {
    "default": {},
    "toy": {
        "synth.n": 250, "synth.n_test": 50,
        "net.depth": 3, "net.channels": (8, 16, 32, 64),
        "train.learning_rate": 0.05, "train.batch_size": 8, "train.epochs": 20, "train.max_steps": 500,
    },
}
_SYNTH_EXTRA = {"n": 100, "n_test": 0}
_METRIC_DEFAULTS = {"d_thresh": 3.0, "threshold": N.DECISION_THRESHOLD}


def parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def parse_value(text: str):
    text = text.strip()
    parts = [p for p in text.split(",") if p.strip()]
    if parts and "/" not in text and all(":" in p for p in parts):
        return {parse_scalar(k): parse_scalar(v) for k, v in (p.split(":", 1) for p in parts)}
    if "," in text:
        return tuple(parse_scalar(p) for p in parts)
    return parse_scalar(text)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, dict):
        return ",".join(f"{k}:{format_value(x)}" for k, x in v.items()) + ("," if len(v) == 1 else "")
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v) + ("," if len(v) == 1 else "")
    return repr(v) if isinstance(v, float) else str(v)


def load_kv(path) -> dict:
    """Flat ``{key: value}`` from a key=value file; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(value)
    return out


def parse_override(text: str) -> tuple:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    k, v = text.split("=", 1)
    return k.strip(), parse_value(v)


def _fit(default, value):
    if value is None:
        return None
    if isinstance(default, tuple) and not isinstance(value, tuple):
        return (value,)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _build(cls, base, values: dict, what: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(names)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    kw = {k: _fit(getattr(base, k), v) for k, v in values.items()}
    try:
        return dataclasses.replace(base, **kw)
    except TypeError as exc:
        raise ConfigError(f"bad {what} value: {exc}") from exc


@dataclass
class RunConfig:
    """Fully resolved view over every module's configuration."""

    values: dict = field(default_factory=dict)

    @classmethod
    def resolve(cls, config_path=None, overrides: dict | None = None) -> "RunConfig":
        file_values = load_kv(config_path) if config_path else {}
        overrides = dict(overrides or {})
        preset = overrides.get("preset", file_values.get("preset", "default"))
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged = {"preset": preset, "seed": 0}
        merged.update(PRESETS[preset])
        merged.update(file_values)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        for key in merged:
            if key not in ("preset", "seed") and key.split(".", 1)[0] not in SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls(merged)
        cfg.synth_config(), cfg.network_spec(), cfg.train_config(), cfg.filter_config()
        return cfg

    @property
    def seed(self) -> int:
        return int(self.values.get("seed", 0))

    def section(self, name: str) -> dict:
        p = name + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def synth_settings(self) -> dict:
        s = self.section("synth")
        return {k: s.get(k, v) for k, v in _SYNTH_EXTRA.items()}

    def synth_config(self) -> SynthConfig:
        s = {k: v for k, v in self.section("synth").items() if k not in _SYNTH_EXTRA}
        s.setdefault("seed", self.seed)
        base = toy_config(seed=s["seed"]) if self.values.get("preset") == "toy" else SynthConfig(seed=s["seed"])
        return _build(SynthConfig, base, s, "synth")

    def network_spec(self) -> N.NetworkSpec:
        s = self.section("net")
        s.setdefault("seed", self.seed)
        fpfm = s.pop("fpfm_preset", None)
        if "depth" in s and "channels" not in s:
            s["channels"] = tuple(16 * 2 ** i for i in range(int(s["depth"]) + 1))
        s.setdefault("fpfm_layers", None)
        spec = _build(N.NetworkSpec, N.NetworkSpec(), s, "net")
        if fpfm is not None:
            spec = dataclasses.replace(spec, fpfm_layers=N.fpfm_preset(fpfm, spec.depth))
        return spec

    def train_config(self) -> TrainConfig:
        s = self.section("train")
        s.setdefault("seed", self.seed)
        return _build(TrainConfig, TrainConfig(), s, "train")

    def filter_config(self) -> FilterConfig:
        return _build(FilterConfig, FilterConfig(), self.section("baseline"), "baseline")

    def metric(self, key: str):
        s = self.section("metrics")
        unknown = set(s) - set(_METRIC_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown metrics keys: {sorted(unknown)}")
        return s.get(key, _METRIC_DEFAULTS[key])

    def to_kv(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in sorted(self.values.items()))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.values.items())}
