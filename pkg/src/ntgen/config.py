"""Pipeline configuration stored as an INI file."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_type_hints

from .errors import ConfigError
from .features import CATALOG
from .flows import FlowConfig
from .neural import NeuralHyper
from .sequences import GLOBAL, IP_PAIR

MODEL_KINDS = ("MARKOV", "NEURAL", "RANDOM")
STAGES = ("clustering", "model", "generation", "evaluation")


def stage_seed(master: int, stage: str) -> int:
    """Seed for one stage: the first 8 bytes of sha256("<master>:<stage>")."""
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class GenerationBounds:
    t_start_ns: int | None = None  # None: first packet of the training capture
    t_end_ns: int | None = None  # None: last packet of the training capture
    pair_count: int | None = None  # None: number of address pairs in training data
    flow_count: int | None = None  # random baseline; None: training flow count
    max_sequence_len: int = 100_000


@dataclass
class Seeds:
    clustering: int | None = None
    model: int | None = None
    generation: int | None = None
    evaluation: int | None = None


@dataclass
class PipelineConfig:
    seed: int = 0
    catalog_version: str = CATALOG.version
    k: int = 100
    kmeans_n_init: int = 10
    kmeans_max_iter: int = 100
    aggregation: str = GLOBAL
    model: str = "MARKOV"
    alpha: float = 0.01
    preserved_floor: float = 0.9
    flows: FlowConfig = field(default_factory=FlowConfig)
    neural: NeuralHyper = field(default_factory=NeuralHyper)
    generation: GenerationBounds = field(default_factory=GenerationBounds)
    seeds: Seeds = field(default_factory=Seeds)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.aggregation not in (GLOBAL, IP_PAIR):
            raise ConfigError(f"aggregation must be {GLOBAL} or {IP_PAIR}, got {self.aggregation!r}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.k < 1:
            raise ConfigError("k must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.catalog_version != CATALOG.version:
            raise ConfigError(f"catalog version {self.catalog_version!r} is not supported "
                              f"(this build provides {CATALOG.version!r})")

    def seed_for(self, stage: str) -> int:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        explicit = getattr(self.seeds, stage)
        return stage_seed(self.seed, stage) if explicit is None else explicit

    # -- INI round trip ----------------------------------------------------

    _SECTIONS = {"flows": FlowConfig, "neural": NeuralHyper, "generation": GenerationBounds,
                 "seeds": Seeds}

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["pipeline"] = {f.name: _fmt(getattr(self, f.name)) for f in dataclasses.fields(self)
                          if f.name not in self._SECTIONS}
        for name in self._SECTIONS:
            sub = getattr(self, name)
            cp[name] = {f.name: _fmt(getattr(sub, f.name)) for f in dataclasses.fields(sub)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> PipelineConfig:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed configuration: {exc}") from exc
        known = set(cls._SECTIONS) | {"pipeline"}
        for s in cp.sections():
            if s not in known:
                raise ConfigError(f"unknown configuration section [{s}]")
        kw = _parse_section(cp, "pipeline", cls, exclude=set(cls._SECTIONS))
        for name, sub_cls in cls._SECTIONS.items():
            kw[name] = sub_cls(**_parse_section(cp, name, sub_cls))
        return cls(**kw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        try:
            return cls.from_ini(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"configuration file not found: {path}") from None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse_section(cp: configparser.ConfigParser, section: str, cls, exclude=frozenset()) -> dict:
    if not cp.has_section(section):
        return {}
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    out = {}
    for key, raw in cp[section].items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        out[key] = _coerce(raw, hints[key], f"[{section}] {key}")
    return out


def _coerce(raw: str, hint, where: str):
    text = str(hint)
    optional = "None" in text
    if optional and raw.strip() == "":
        return None
    try:
        if hint is bool or text.startswith("bool"):
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if hint is int or text.startswith("int"):
            return int(raw)
        if hint is float or text.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {text}") from None
    return raw.strip()
