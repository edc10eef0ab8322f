"""Experiment configuration, read from and written to INI files."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

TISSUES = ("control", "hf-electrophysiology", "hf-tissue", "hf-both")
MODES = ("static", "deforming")

# the fibrosis of the tissue-remodelling rows (mesh F0)
F0_FRACTION = 0.27
F0_PATCH_AREA = 8.72


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MeshConfig:
    side: float = 120.0  # mm
    coarse_edge: float = 3.4  # mm, mechanics mesh spacing
    levels: int = 4  # uniform refinements to the EP mesh (4 -> 0.21 mm, 3 -> 0.42 mm)
    jitter: float = 0.18
    seed: int = 0

    @property
    def fine_edge(self) -> float:
        return self.coarse_edge / 2 ** self.levels


@dataclass(frozen=True)
class FibrosisConfig:
    fraction: float = 0.0
    patch_area: float = 0.0  # mm^2
    seed: int = 0

    @property
    def enabled(self) -> bool:
        return self.fraction > 0.0


@dataclass(frozen=True)
class InitiationConfig:
    cut_mode: str = "time"  # "time" or "front"
    cut_time: float = 115.0  # ms
    cut_x: float = 60.0  # mm, front position for cut_mode = "front"
    hold: float = 35.0  # ms
    end: float = 5000.0  # ms
    stimulus_width: float = 2.0  # mm of the left face


@dataclass(frozen=True)
class ClassifierConfig:
    tau: float = 40.0  # ms, delay embedding for the phase
    v_star: float = -40.0  # mV, phase origin
    settle: float = 1000.0  # ms
    persist: float = 500.0  # ms
    cluster_radius: float = 3.0  # mm


@dataclass(frozen=True)
class ExperimentConfig:
    tissue: str = "control"
    restitution: float = 1.1
    mode: str = "static"
    dt: float = 0.08
    steps_per_solve: int = 10
    end_time: float = 7000.0
    snapshot_interval: float = 20.0
    output: str = "out"
    formats: tuple = ()
    raster: int = 256
    active_stress: str = "anisotropic"
    mesh: MeshConfig = field(default_factory=MeshConfig)
    fibrosis: FibrosisConfig = field(default_factory=FibrosisConfig)
    initiation: InitiationConfig = field(default_factory=InitiationConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        if self.tissue not in TISSUES:
            raise ConfigError(f"tissue must be one of {TISSUES}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.restitution not in (1.1, 1.4, 1.8):
            raise ConfigError("restitution must be 1.1, 1.4 or 1.8")
        if self.steps_per_solve < 1:
            raise ConfigError("steps_per_solve must be >= 1")
        if self.dt <= 0 or self.snapshot_interval <= 0:
            raise ConfigError("dt and snapshot_interval must be positive")
        if self.end_time < self.initiation.end:
            raise ConfigError("end_time must not precede the end of the initiation protocol")
        if self.initiation.cut_mode not in ("time", "front"):
            raise ConfigError("cut_mode must be 'time' or 'front'")
        bad = set(self.formats) - {"csv", "vtk", "pgm"}
        if bad:
            raise ConfigError(f"unknown output formats {sorted(bad)}")

    @property
    def hf_ionic(self) -> bool:
        return self.tissue in ("hf-electrophysiology", "hf-both")

    @property
    def hf_tissue(self) -> bool:
        return self.tissue in ("hf-tissue", "hf-both")

    @property
    def effective_fibrosis(self) -> FibrosisConfig:
        """Tissue remodelling implies F0 fibrosis unless a fibrosis section overrides it."""
        if self.hf_tissue and not self.fibrosis.enabled:
            return FibrosisConfig(F0_FRACTION, F0_PATCH_AREA, self.fibrosis.seed)
        return self.fibrosis

    @property
    def variant(self) -> str:
        return f"{'hf' if self.hf_ionic else 'control'}-{self.restitution}"

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def initiation_key(self) -> tuple:
        """Configs with equal keys share a spiral checkpoint."""
        return (self.mesh, self.effective_fibrosis, self.hf_tissue, self.mode, self.initiation,
                self.dt, self.steps_per_solve, self.active_stress)


_SECTIONS = {"mesh": MeshConfig, "fibrosis": FibrosisConfig, "initiation": InitiationConfig,
             "classifier": ClassifierConfig}


def _coerce(cls, name, raw: str):
    typ = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    if typ in ("float", float):
        return float(raw)
    if typ in ("int", int):
        return int(raw)
    if typ in ("tuple", tuple):
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    return raw.strip()


def _section(cls, items: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(items) - known
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    return {k: _coerce(cls, k, v) for k, v in items.items()}


def config_from_parser(cp: configparser.ConfigParser) -> ExperimentConfig:
    for s in cp.sections():
        if s != "experiment" and s not in _SECTIONS:
            raise ConfigError(f"unknown section [{s}]")
    kw = {}
    if cp.has_section("experiment"):
        top = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(_SECTIONS)
        items = dict(cp.items("experiment"))
        unknown = set(items) - top
        if unknown:
            raise ConfigError(f"unknown keys for experiment: {sorted(unknown)}")
        kw.update({k: _coerce(ExperimentConfig, k, v) for k, v in items.items()})
    for s, cls in _SECTIONS.items():
        if cp.has_section(s):
            kw[s] = cls(**_section(cls, dict(cp.items(s))))
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    return config_from_parser(cp)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    return config_from_parser(cp)


def dump_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    top = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            cp[f.name] = {k: _fmt(x) for k, x in dataclasses.asdict(v).items()}
        else:
            top[f.name] = _fmt(v)
    cp["experiment"] = top
    out = []
    for s in ["experiment", *_SECTIONS]:
        out.append(f"[{s}]")
        out += [f"{k} = {v}" for k, v in cp[s].items()]
        out.append("")
    return "\n".join(out)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(dump_config(cfg))
    return path
