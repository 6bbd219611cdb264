"""Run configuration: dataclass sections plus a flat ``section.key=value`` text format."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class DetLossWeights:
    alpha1: float = 1.0
    alpha2: float = 1.0
    ggrad_r: int = 15

    def validate(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ConfigError("det weights must be non-negative")
        _check_odd(self.ggrad_r, "det.ggrad_r")


@dataclass
class GaborConfig:
    wavelengths: tuple = (4.0, 8.0, 16.0, 32.0)
    sigma_factor: float = 0.56
    support: int = 51

    def validate(self):
        if len(self.wavelengths) != 4:
            raise ConfigError("gabor.wavelengths needs exactly 4 scales")
        _check_odd(self.support, "gabor.support")


@dataclass
class StatConfig:
    corr_layer: int = 2
    gram_layers: tuple = (3, 4)
    r_corr_l2: int = 7
    r_gram_l3: int = 5
    r_gram_l4: int = 3
    beta_corr_l2: float = 1e-11
    beta_gram_l3: float = 1e-10
    beta_gram_l4: float = 1e-10
    stride: int = 1
    norm: str = "squared"

    def validate(self):
        for name in ("r_corr_l2", "r_gram_l3", "r_gram_l4"):
            _check_odd(getattr(self, name), f"stats.{name}")
        for name in ("beta_corr_l2", "beta_gram_l3", "beta_gram_l4"):
            if getattr(self, name) < 0:
                raise ConfigError(f"stats.{name} must be >= 0")
        if self.stride < 1:
            raise ConfigError("stats.stride must be >= 1")
        if self.norm not in ("squared", "abs"):
            raise ConfigError("stats.norm must be 'squared' or 'abs'")

    def gram_terms(self):
        """(layer, r, beta) for every local Gram term."""
        table = {3: (self.r_gram_l3, self.beta_gram_l3), 4: (self.r_gram_l4, self.beta_gram_l4)}
        return [(l, *table[l]) for l in self.gram_layers]

    def corr_terms(self):
        return [(self.corr_layer, self.r_corr_l2, self.beta_corr_l2)]

    def required_layers(self):
        return tuple(sorted({self.corr_layer, *self.gram_layers}))


@dataclass
class MatchParams:
    delta_a: float = 4.0
    delta_b: float = 0.8
    sample_step: float = 0.25

    def validate(self):
        if self.delta_a <= 0:
            raise ConfigError("match.delta_a must be > 0")
        if not 0 < self.delta_b <= 1:
            raise ConfigError("match.delta_b must lie in (0, 1]")
        if self.sample_step <= 0:
            raise ConfigError("match.sample_step must be > 0")


@dataclass
class MetricConfig:
    border_crop: int | None = None  # None: use the scale factor
    peak: float = 255.0

    def validate(self):
        if self.border_crop is not None and self.border_crop < 0:
            raise ConfigError("metric.border_crop must be >= 0")

    def crop_for(self, scale: int) -> int:
        return scale if self.border_crop is None else self.border_crop


@dataclass
class RunConfig:
    pixel_scale: float = 1.0
    threads: int = 0  # 0: DTSR_THREADS or all cores
    seed: int = 2018
    det: DetLossWeights = field(default_factory=DetLossWeights)
    gabor: GaborConfig = field(default_factory=GaborConfig)
    stats: StatConfig = field(default_factory=StatConfig)
    match: MatchParams = field(default_factory=MatchParams)
    metric: MetricConfig = field(default_factory=MetricConfig)

    def validate(self):
        if self.pixel_scale not in (1.0, 255.0):
            raise ConfigError("pixel_scale must be 1 or 255")
        for sec in _SECTIONS:
            getattr(self, sec).validate()
        return self

    def resolved_threads(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("DTSR_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(f"DTSR_THREADS={env!r} is not an integer") from None
            if n > 0:
                return n
        return os.cpu_count() or 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name in _SECTIONS:
                sec = getattr(self, f.name)
                for g in fields(sec):
                    lines.append(f"{f.name}.{g.name}={_fmt(getattr(sec, g.name))}")
            else:
                lines.append(f"{f.name}={_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value, lineno)
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def set(self, key: str, value: str, lineno: int | None = None):
        where = f"line {lineno}: " if lineno else ""
        parts = key.split(".")
        if len(parts) == 1:
            target, name = self, parts[0]
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            target, name = getattr(self, parts[0]), parts[1]
        else:
            raise ConfigError(f"{where}unknown key {key!r}")
        kinds = {f.name: f for f in fields(target)}
        if name not in kinds:
            raise ConfigError(f"{where}unknown key {key!r}")
        current = getattr(target, name)
        try:
            setattr(target, name, _parse_like(current, value, name))
        except ValueError as exc:
            raise ConfigError(f"{where}bad value for {key}: {value!r}") from exc


_SECTIONS = ("det", "gabor", "stats", "match", "metric")


def _check_odd(r, name):
    if r < 3 or r % 2 == 0:
        raise ConfigError(f"{name} must be odd and >= 3, got {r}")


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_like(current, value: str, name: str):
    if name == "border_crop":
        return None if value == "auto" else int(value)
    if isinstance(current, tuple):
        items = [s for s in value.split(",") if s.strip()]
        conv = type(current[0]) if current else float
        return tuple(conv(float(s)) if conv is int else conv(s) for s in items)
    if isinstance(current, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value
