"""Experiment configuration: YAML schema with explicit units in every key.

A configuration is a tree of small dataclasses. :func:`load_config` accepts
a path or the name of a bundled configuration, rejects unknown keys and
validates every section before any computation starts.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .constants import FS, FS2, MM, PS, UM
from .errors import ConfigurationError, TpavssError
from .source import CrystalParams, PumpParams, SourceSettings
from .tpa import MatterSystem, nyquist_step

SCHEMA_VERSION = 1
BUNDLED = ("paper-fig2", "paper-fig2d-baseline", "robustness-2level", "robustness-3level")


@dataclass
class CrystalSection:
    length_mm: float = 8.01
    g_pump_ps_per_mm: float = 5.4
    g_signal_ps_per_mm: float = 5.2
    g_idler_ps_per_mm: float = 5.6
    wl_pump_um: float = 0.4
    wl_signal_um: Optional[float] = None
    wl_idler_um: Optional[float] = None
    dispersion_window: float = 0.5


@dataclass
class PumpSection:
    tau_p_ps: float = 1.0
    wl_um: float = 0.4


@dataclass
class SourceSection:
    n_points: int = 512
    span_rad_per_s: Optional[float] = None
    n_sigma: float = 6.0
    n_modes: Optional[int] = None
    target_n: float = 100.0
    edge_tolerance: float = 1e-3


@dataclass
class LevelEntry:
    energy_ev: float
    linewidth_ev: float = 1e-4
    dipole: float = 1.0


@dataclass
class RandomLevels:
    """Settings for a seeded random level scheme (see ``generate_demo_system``)."""

    seed: int = 0
    n_levels: int = 3
    lower_ev: float = 1.56
    upper_ev: float = 1.64
    min_spacing_ev: float = 0.01
    min_detuning_ev: float = 0.01
    linewidth_ev: float = 1e-4


@dataclass
class MatterSection:
    eps_g_ev: float = 0.0
    eps_f_ev: float = 3.0996
    levels: list = field(default_factory=list)
    random: Optional[RandomLevels] = None
    kappa_f_ev: float = 1e-4


@dataclass
class DelaySection:
    start_ps: float = -2.0
    stop_ps: float = 2.0
    n_points: int = 2048
    reference: str = "group-delay"
    nyquist_safety: float = 4.0


@dataclass
class ChirpSection:
    min_fs2: float = 0.0
    max_fs2: float = 9.5
    count: int = 20


@dataclass
class AnalysisSection:
    window: str = "hann"
    axis: str = "pair"
    prominence: float = 0.01
    min_separation_ev: float = 0.0
    cutoff_ev: float = 0.01
    match_window: int = 1
    n_levels: int = 3


@dataclass
class BaselineSection:
    enabled: bool = False
    min_length_mm: float = 20.0
    max_length_mm: float = 22.0
    count: int = 10


@dataclass
class ModeSection:
    pair_only: bool = False


@dataclass
class RunSection:
    output_dir: str = "out"
    threads: int = 1


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    schema_version: int = SCHEMA_VERSION
    crystal: CrystalSection = field(default_factory=CrystalSection)
    pump: PumpSection = field(default_factory=PumpSection)
    source: SourceSection = field(default_factory=SourceSection)
    matter: MatterSection = field(default_factory=MatterSection)
    delay: DelaySection = field(default_factory=DelaySection)
    chirp: ChirpSection = field(default_factory=ChirpSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    mode: ModeSection = field(default_factory=ModeSection)
    run: RunSection = field(default_factory=RunSection)

    # -- conversion to physics objects -------------------------------------------------
    def crystal_params(self, length_mm: Optional[float] = None) -> CrystalParams:
        c = self.crystal
        ps_per_mm = PS / MM
        return CrystalParams(
            length=(c.length_mm if length_mm is None else length_mm) * MM,
            g_pump=c.g_pump_ps_per_mm * ps_per_mm,
            g_signal=c.g_signal_ps_per_mm * ps_per_mm,
            g_idler=c.g_idler_ps_per_mm * ps_per_mm,
            wl_pump=c.wl_pump_um * UM,
            wl_signal=None if c.wl_signal_um is None else c.wl_signal_um * UM,
            wl_idler=None if c.wl_idler_um is None else c.wl_idler_um * UM,
            dispersion_window=c.dispersion_window,
        )

    def pump_params(self) -> PumpParams:
        return PumpParams.from_wavelength(self.pump.tau_p_ps * PS, self.pump.wl_um * UM)

    def source_settings(self, length_mm: Optional[float] = None) -> SourceSettings:
        s = self.source
        return SourceSettings(self.crystal_params(length_mm), self.pump_params(), s.n_points,
                              s.span_rad_per_s, s.n_sigma, s.target_n, s.n_modes)

    def matter_system(self) -> MatterSystem:
        m = self.matter
        if m.random is not None:
            from .pipeline import generate_demo_system
            r = m.random
            return generate_demo_system(r.seed, r.n_levels, m.eps_f_ev, (r.lower_ev, r.upper_ev),
                                        r.min_spacing_ev, r.linewidth_ev, m.eps_g_ev, r.min_detuning_ev)
        return MatterSystem(m.eps_f_ev, [(lv.energy_ev, lv.linewidth_ev) for lv in m.levels],
                            [lv.dipole for lv in m.levels], m.eps_g_ev)

    def relative_delays(self) -> np.ndarray:
        d = self.delay
        return np.linspace(d.start_ps * PS, d.stop_ps * PS, d.n_points)

    def chirps(self) -> np.ndarray:
        c = self.chirp
        return np.linspace(c.min_fs2 * FS2, c.max_fs2 * FS2, c.count)

    def baseline_lengths_mm(self) -> np.ndarray:
        b = self.baseline
        return np.linspace(b.min_length_mm, b.max_length_mm, b.count)

    # -- serialization -------------------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def physics_dict(self) -> dict:
        """Everything except run-time knobs that cannot change results."""
        d = self.to_dict()
        d.pop("run")
        d.pop("name")
        return d

    def fingerprint(self) -> str:
        return digest(self.physics_dict())

    def with_overrides(self, seed: Optional[int] = None, pair_only: Optional[bool] = None,
                       threads: Optional[int] = None, output_dir: Optional[str] = None) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        if seed is not None:
            if cfg.matter.random is None:
                raise ConfigurationError("--seed given but the configuration has no random level scheme")
            cfg.matter.random.seed = int(seed)
        if pair_only:
            cfg.mode.pair_only = True
        if threads is not None:
            cfg.run.threads = int(threads)
        if output_dir is not None:
            cfg.run.output_dir = str(output_dir)
        return cfg


def digest(obj: Any) -> str:
    """SHA-256 of the canonical JSON form (sorted keys) of ``obj``."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


_SECTIONS = {
    "crystal": CrystalSection,
    "pump": PumpSection,
    "source": SourceSection,
    "matter": MatterSection,
    "delay": DelaySection,
    "chirp": ChirpSection,
    "analysis": AnalysisSection,
    "baseline": BaselineSection,
    "mode": ModeSection,
    "run": RunSection,
}


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError(f"section '{where}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"unknown key(s) in '{where}': {', '.join(sorted(unknown))}")
    kwargs = dict(data)
    if cls is MatterSection:
        levels = kwargs.get("levels") or []
        kwargs["levels"] = [_build(LevelEntry, lv, f"{where}.levels[{i}]") for i, lv in enumerate(levels)]
        if kwargs.get("random") is not None:
            kwargs["random"] = _build(RandomLevels, kwargs["random"], f"{where}.random")
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"section '{where}': {exc}") from exc
    return obj


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a mapping")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    kwargs = {name: _build(cls, data.get(name), name) for name, cls in _SECTIONS.items()}
    cfg = ExperimentConfig(name=str(data.get("name", "experiment")), schema_version=version, **kwargs)
    validate_config(cfg)
    return cfg


def bundled_config_path(name: str) -> Path:
    if name not in BUNDLED:
        raise ConfigurationError(f"no bundled configuration named '{name}' (available: {', '.join(BUNDLED)})")
    return Path(str(resources.files("tpavss") / "configs" / f"{name}.yaml"))


def load_config(source) -> ExperimentConfig:
    """Load a configuration from a YAML path or a bundled configuration name."""
    path = Path(source)
    if not path.exists() and str(source) in BUNDLED:
        path = bundled_config_path(str(source))
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration '{source}': {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed YAML in '{source}': {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def _require(cond, message):
    if not cond:
        raise ConfigurationError(message)


def _finite_positive(value, name):
    _require(isinstance(value, (int, float)) and math.isfinite(value) and value > 0,
             f"{name} must be a positive number, got {value!r}")


def validate_config(cfg: ExperimentConfig) -> None:
    """Check every precondition that can be checked without heavy work.

    Raises
    ------
    ConfigurationError
        Naming the offending parameter, including the delay step required
        by the sampling bound.
    """
    s = cfg.source
    _require(isinstance(s.n_points, int) and s.n_points >= 2, "source.n_points must be an integer >= 2")
    if s.span_rad_per_s is not None:
        _finite_positive(s.span_rad_per_s, "source.span_rad_per_s")
    _finite_positive(s.target_n, "source.target_n")
    _finite_positive(s.n_sigma, "source.n_sigma")
    if s.n_modes is not None:
        _require(isinstance(s.n_modes, int) and 1 <= s.n_modes <= s.n_points,
                 "source.n_modes must lie between 1 and source.n_points")
    _finite_positive(cfg.pump.tau_p_ps, "pump.tau_p_ps")
    _finite_positive(cfg.matter.kappa_f_ev, "matter.kappa_f_ev")
    d = cfg.delay
    _require(isinstance(d.n_points, int) and d.n_points >= 2, "delay.n_points must be an integer >= 2")
    _require(d.stop_ps > d.start_ps, "delay.stop_ps must exceed delay.start_ps")
    _require(d.reference in ("group-delay", "absolute"), "delay.reference must be 'group-delay' or 'absolute'")
    c = cfg.chirp
    _require(isinstance(c.count, int) and c.count >= 2, "chirp.count must be an integer >= 2")
    _require(c.max_fs2 >= c.min_fs2, "chirp.max_fs2 must not be below chirp.min_fs2")
    a = cfg.analysis
    _require(a.window in ("hann", "none"), "analysis.window must be 'hann' or 'none'")
    _require(a.axis in ("pair", "photon"), "analysis.axis must be 'pair' or 'photon'")
    _require(a.prominence >= 0, "analysis.prominence must be non-negative")
    _require(a.min_separation_ev >= 0, "analysis.min_separation_ev must be non-negative")
    _require(isinstance(a.n_levels, int) and a.n_levels >= 1, "analysis.n_levels must be >= 1")
    _require(isinstance(a.match_window, int) and a.match_window >= 0, "analysis.match_window must be >= 0")
    b = cfg.baseline
    if b.enabled:
        _require(isinstance(b.count, int) and b.count >= 2, "baseline.count must be an integer >= 2")
        _require(b.min_length_mm > 0 and b.max_length_mm >= b.min_length_mm,
                 "baseline lengths must be positive and ordered")
    _require(isinstance(cfg.run.threads, int) and cfg.run.threads >= 1, "run.threads must be >= 1")
    m = cfg.matter
    _require(bool(m.levels) != (m.random is not None),
             "matter needs exactly one of an explicit 'levels' list or a 'random' scheme")
    try:
        cfg.crystal_params()
        cfg.pump_params()
        matter = cfg.matter_system()
    except TpavssError as exc:
        raise ConfigurationError(str(exc)) from exc
    if b.enabled:
        try:
            cfg.crystal_params(b.min_length_mm)
        except TpavssError as exc:
            raise ConfigurationError(str(exc)) from exc
    step = (d.stop_ps - d.start_ps) * PS / (d.n_points - 1)
    limit = nyquist_step(matter, d.nyquist_safety)
    _require(step < limit,
             f"delay step {step / FS:.4f} fs violates the sampling bound; "
             f"a step below {limit / FS:.4f} fs is required")
