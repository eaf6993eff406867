"""End-to-end orchestration with a content-addressed artifact cache.

Stages and their cached artifacts::

    jsa               gain-dressed Schmidt decomposition
    trace             delay trace at the smallest chirp of the ensemble
    sweep-chirp       delay traces for every chirp of the ensemble
    spectrum          spectra of the chirp ensemble (derived, not cached)
    identify          relative variances and level candidates (derived)
    baseline-lengths  delay traces for the crystal-length ensemble

Every cached artifact is keyed by the SHA-256 of exactly the configuration
fields that determine it (plus the key of the upstream artifact), so editing
one field recomputes only the affected stage and those after it. The cache
directory is shared safely between processes through lock files.
"""

from __future__ import annotations

import contextlib
import hashlib
import logging
import os
import shutil
import sys
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import yaml
from filelock import FileLock

from . import __version__
from .analysis import (Spectrum, average_traces, crystal_length_traces, chirp_traces, detect_peaks,
                       identify_levels, relative_variance, spectrum)
from .config import ExperimentConfig, digest
from .constants import FS2
from .errors import ConfigurationError, DomainError, StageError, TpavssError
from .io import (csv_text, json_text, load_decomposition, save_decomposition, trace_csv_rows,
                 write_gnuplot, write_text)
from .source import build_source, group_delay_offset, mean_photon_number
from .tpa import MatterSystem, TpaTrace

log = logging.getLogger(__name__)

STAGES = ("jsa", "trace", "sweep-chirp", "spectrum", "identify", "baseline-lengths")
CACHE_ENV = "TPAVSS_CACHE"


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "tpavss"


def generate_demo_system(seed: int, n_levels: int, eps_f: float, bounds=(1.56, 1.64),
                         min_spacing: float = 0.01, linewidth: float = 1e-4, eps_g: float = 0.0,
                         min_detuning: float = 0.01, max_tries: int = 10000) -> MatterSystem:
    """Seeded random ladder system.

    Level energies are drawn uniformly from ``bounds`` (eV), rounded to
    0.1 meV, kept at least ``min_detuning`` away from ``eps_f / 2`` and at
    least ``min_spacing`` apart, and returned in ascending order.

    Raises
    ------
    DomainError
        If ``n_levels < 1`` or the bounds cannot host the requested levels.
    """
    if int(n_levels) != n_levels or n_levels < 1:
        raise DomainError("at least one intermediate level is required")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not eps_g < lo < hi < eps_f:
        raise DomainError(f"level bounds ({lo}, {hi}) must lie strictly between {eps_g} and {eps_f} eV")
    mid = 0.5 * (eps_f + eps_g)
    usable = (hi - lo) - max(0.0, min(hi, mid + min_detuning) - max(lo, mid - min_detuning))
    if usable < (n_levels - 1) * min_spacing or usable <= 0:
        raise DomainError(f"bounds ({lo}, {hi}) eV cannot host {n_levels} levels {min_spacing} eV apart")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        e = np.sort(np.round(rng.uniform(lo, hi, n_levels), 4))
        if np.any(np.abs(e - mid) < min_detuning):
            continue
        if n_levels > 1 and np.min(np.diff(e)) < min_spacing:
            continue
        return MatterSystem(eps_f, [(float(x), linewidth) for x in e], None, eps_g)
    raise DomainError(f"could not place {n_levels} levels within {max_tries} draws; relax the bounds")


@dataclass
class StageRecord:
    name: str
    seconds: float
    cache: str
    key: str = ""


@dataclass
class RunManifest:
    """Provenance of a pipeline run.

    ``stages`` carry wall-clock timings and cache status; ``files`` maps every
    written output to its SHA-256 and size.
    """

    config_fingerprint: str
    tool_version: str
    stages: list = field(default_factory=list)
    files: dict = field(default_factory=dict)
    out_dir: str = ""

    def stage(self, name) -> Optional[StageRecord]:
        for s in self.stages:
            if s.name == name:
                return s
        return None

    def to_dict(self) -> dict:
        return {
            "config_fingerprint": self.config_fingerprint,
            "tool_version": self.tool_version,
            "stages": [asdict(s) for s in self.stages],
            "files": self.files,
        }


class ArtifactCache:
    """Directory of ``.npz`` artifacts addressed by stage and key."""

    def __init__(self, root: Optional[Path], enabled: bool = True):
        self.enabled = enabled and root is not None
        self.root = Path(root) if root is not None else None
        if self.enabled:
            try:
                self.root.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise OSError(f"cannot create cache directory {self.root}: {exc}") from exc

    def path(self, stage: str, key: str) -> Path:
        return self.root / stage / f"{key}.npz"

    def get_or_compute(self, stage: str, key: str, compute: Callable[[], dict]):
        """Return ``(arrays, hit)``; ``compute`` returns a dict of arrays."""
        if not self.enabled:
            return compute(), False
        path = self.path(stage, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        with FileLock(str(path) + ".lock"):
            if path.exists():
                with np.load(path, allow_pickle=False) as z:
                    return {k: z[k] for k in z.files}, True
            arrays = compute()
            tmp = path.with_name(path.name + f".{os.getpid()}.tmp")
            with open(tmp, "wb") as fh:
                np.savez(fh, **arrays)
            os.replace(tmp, path)
            return arrays, False

    def get_or_compute_decomposition(self, key: str, compute):
        if not self.enabled:
            return compute(), False
        path = self.path("jsa", key)
        path.parent.mkdir(parents=True, exist_ok=True)
        with FileLock(str(path) + ".lock"):
            if path.exists():
                return load_decomposition(path), True
            decomp = compute()
            tmp = path.with_name(path.name + f".{os.getpid()}.tmp.npz")
            save_decomposition(tmp, decomp)
            os.replace(tmp, path)
            return decomp, False


def _stage_keys(cfg: ExperimentConfig, matter: MatterSystem) -> dict:
    src = {"crystal": asdict(cfg.crystal), "pump": asdict(cfg.pump), "source": asdict(cfg.source)}
    jsa = digest({"stage": "jsa", **src})
    common = {"matter": matter.as_dict(), "kappa_f_ev": cfg.matter.kappa_f_ev,
              "delay": asdict(cfg.delay), "pair_only": cfg.mode.pair_only}
    sweep = digest({"stage": "sweep-chirp", "jsa": jsa, "chirp": asdict(cfg.chirp), **common})
    trace = digest({"stage": "trace", "jsa": jsa, "chirp_fs2": cfg.chirp.min_fs2, **common})
    crystal_wo_length = {k: v for k, v in asdict(cfg.crystal).items() if k != "length_mm"}
    base = digest({"stage": "baseline-lengths", "crystal": crystal_wo_length, "pump": asdict(cfg.pump),
                   "source": asdict(cfg.source), "baseline": asdict(cfg.baseline), **common})
    return {"jsa": jsa, "sweep-chirp": sweep, "trace": trace, "baseline-lengths": base}


def _absolute_delays(cfg: ExperimentConfig, length_mm: Optional[float] = None) -> np.ndarray:
    rel = cfg.relative_delays()
    if cfg.delay.reference == "absolute":
        return rel
    return rel + group_delay_offset(cfg.crystal_params(length_mm))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _expand(stages: Sequence[str], cfg: ExperimentConfig) -> list:
    wanted = []
    for s in stages:
        if s == "all":
            wanted.extend(["jsa", "trace", "sweep-chirp", "spectrum", "identify"])
            if cfg.baseline.enabled:
                wanted.append("baseline-lengths")
        elif s in STAGES:
            wanted.append(s)
        else:
            raise ConfigurationError(f"unknown stage '{s}'")
    return [s for s in STAGES if s in wanted]


def _progress(msg: str):
    print(f"[tpavss] {msg}", file=sys.stderr, flush=True)


@contextlib.contextmanager
def _stage_errors(stage):
    try:
        yield
    except StageError:
        raise
    except (TpavssError, OSError, ArithmeticError, ValueError) as exc:
        raise StageError(stage, exc) from exc


class _Run:
    def __init__(self, cfg, cache, progress):
        self.cfg = cfg
        self.cache = cache
        self.progress = progress
        self.matter = cfg.matter_system()
        self.keys = _stage_keys(cfg, self.matter)
        self.records = []
        self.files = {}
        self._decomp = None
        self._sweep = None
        self._spectra = None

    def record(self, name, t0, hit, key=""):
        status = hit if isinstance(hit, str) else ("hit" if hit else "miss")
        self.records.append(StageRecord(name, round(time.perf_counter() - t0, 6), status, key))
        label = {"hit": "cache hit", "miss": "computed"}[status]
        self.progress(f"stage {name}: {label} in {time.perf_counter() - t0:.2f} s")

    def upstream_status(self):
        """Derived stages are cheap and not stored; they inherit the sweep's cache status."""
        rec = next((r for r in self.records if r.name == "sweep-chirp"), None)
        return rec.cache if rec is not None else "miss"

    # -- stages -----------------------------------------------------------------------------
    def decomposition(self):
        if self._decomp is None:
            t0 = time.perf_counter()
            settings = self.cfg.source_settings()
            tol = self.cfg.source.edge_tolerance
            with warnings.catch_warnings(), _stage_errors("jsa"):
                warnings.simplefilter("default")
                self._decomp, hit = self.cache.get_or_compute_decomposition(
                    self.keys["jsa"], lambda: build_source(settings, edge_tolerance=tol))
            self.record("jsa", t0, hit, self.keys["jsa"])
        return self._decomp

    def sweep(self):
        if self._sweep is None:
            decomp = self.decomposition()
            t0 = time.perf_counter()
            cfg = self.cfg
            tau = _absolute_delays(cfg)
            chirps = cfg.chirps()

            def compute():
                traces = chirp_traces(decomp, self.matter, chirps, tau, cfg.matter.kappa_f_ev,
                                      cfg.mode.pair_only, cfg.run.threads,
                                      nyquist_safety=cfg.delay.nyquist_safety,
                                      progress=lambda i, n: self.progress(f"chirp member {i + 1}/{n} done"))
                return {"raw": np.array([t.raw for t in traces]), "chirps": chirps,
                        "fingerprints": np.array([t.fingerprint for t in traces])}

            with _stage_errors("sweep-chirp"):
                arrays, hit = self.cache.get_or_compute("sweep-chirp", self.keys["sweep-chirp"], compute)
            rel = cfg.relative_delays()
            self._sweep = [TpaTrace(rel, raw, float(raw.max()), str(fp), float(c))
                           for raw, fp, c in zip(arrays["raw"], arrays["fingerprints"], arrays["chirps"])]
            self.record("sweep-chirp", t0, hit, self.keys["sweep-chirp"])
        return self._sweep

    def single_trace(self):
        if self._sweep is not None:
            return self._sweep[0], True
        decomp = self.decomposition()
        cfg = self.cfg
        tau = _absolute_delays(cfg)
        from .tpa import tpa_trace

        def compute():
            tr = tpa_trace(decomp, self.matter, cfg.chirp.min_fs2 * FS2, tau, cfg.matter.kappa_f_ev,
                           cfg.mode.pair_only, nyquist_safety=cfg.delay.nyquist_safety)
            return {"raw": tr.raw, "fingerprint": np.array(tr.fingerprint)}

        arrays, hit = self.cache.get_or_compute("trace", self.keys["trace"], compute)
        raw = arrays["raw"]
        return TpaTrace(cfg.relative_delays(), raw, float(raw.max()), str(arrays["fingerprint"]),
                        cfg.chirp.min_fs2 * FS2), hit

    def spectra(self):
        if self._spectra is None:
            a = self.cfg.analysis
            self._spectra = [spectrum(t, a.window, axis=a.axis) for t in self.sweep()]
        return self._spectra

    def baseline_traces(self):
        cfg = self.cfg
        t0 = time.perf_counter()
        lengths = cfg.baseline_lengths_mm()

        def compute():
            settings = cfg.source_settings()
            rel = cfg.relative_delays()
            if cfg.delay.reference == "absolute":
                raise ConfigurationError("crystal-length averaging needs delay.reference = 'group-delay'")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                traces = crystal_length_traces(lengths * 1e-3, settings, self.matter, rel,
                                               cfg.matter.kappa_f_ev, cfg.mode.pair_only, True,
                                               cfg.run.threads, cfg.delay.nyquist_safety)
            return {"raw": np.array([t.raw for t in traces]),
                    "fingerprints": np.array([t.fingerprint for t in traces])}

        arrays, hit = self.cache.get_or_compute("baseline-lengths", self.keys["baseline-lengths"], compute)
        rel = cfg.relative_delays()
        traces = [TpaTrace(rel, raw, float(raw.max()), str(fp)) for raw, fp in
                  zip(arrays["raw"], arrays["fingerprints"])]
        self.record("baseline-lengths", t0, hit, self.keys["baseline-lengths"])
        return traces


def _report_dict(report, levels, cfg, matter):
    return {
        "ensemble_size": report.ensemble_size,
        "chirps_s2": list(report.chirps),
        "bin_width_ev": report.bin_width,
        "energy_axis": cfg.analysis.axis,
        "detection": report.detection,
        "missing_peaks_ev": list(report.missing),
        "peaks": [{"energy_ev": e.energy, "bin": e.index, "relative_variance": e.relative_variance,
                   "mean_magnitude": e.mean, "sample_count": e.count} for e in report.sorted_by_variance()],
    }


def _levels_dict(levels, cfg, matter, bin_width):
    return {
        "eps_f_ev": cfg.matter.eps_f_ev,
        "k": cfg.analysis.n_levels,
        "bin_width_ev": bin_width,
        "candidates": [{"peak_energy_ev": c.peak_energy, "relative_variance": c.relative_variance,
                        "upper_branch_ev": c.upper, "lower_branch_ev": c.lower} for c in levels],
        "configured_levels_ev": [e for e, _ in matter.levels],
    }


def run_pipeline(cfg: ExperimentConfig, stages: Sequence[str] = ("all",), out_dir=None, cache_dir=None,
                 use_cache: bool = True, emit_gnuplot: bool = False,
                 progress: Optional[Callable[[str], None]] = _progress) -> RunManifest:
    """Run the requested stages and write their outputs.

    Outputs are assembled in a scratch directory next to ``out_dir`` and moved
    into place only when every stage has succeeded, so a failed run leaves no
    partial results.

    Raises
    ------
    ConfigurationError
        Before any computation, for invalid settings.
    StageError
        Wrapping the failure of a stage, with the stage name.
    """
    progress = progress or (lambda msg: None)
    from .config import validate_config
    validate_config(cfg)
    wanted = _expand(stages, cfg)
    out = Path(out_dir if out_dir is not None else cfg.run.output_dir)
    cache = ArtifactCache(Path(cache_dir) if cache_dir is not None else default_cache_dir(), use_cache)
    run = _Run(cfg, cache, progress)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        scratch = Path(tempfile.mkdtemp(prefix=".tpavss-partial-", dir=out.parent))
    except OSError as exc:
        raise OSError(f"cannot prepare output directory {out}: {exc}") from exc
    written = {}

    def emit(name, text):
        write_text(scratch / name, text)
        written[name] = scratch / name

    try:
        # Run-time knobs (output path, threads) are left out so that the echo
        # only depends on settings that can change results.
        echo = cfg.to_dict()
        echo.pop("run")
        emit("config.yaml", yaml.safe_dump(echo, sort_keys=False))
        for stage in wanted:
            with _stage_errors(stage):
                _run_stage(stage, run, cfg, emit, scratch, written, emit_gnuplot)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(cfg.fingerprint(), __version__, run.records, {}, str(out))
        for name, path in sorted(written.items()):
            manifest.files[name] = {"sha256": _sha256(path), "bytes": path.stat().st_size}
        write_text(scratch / "manifest.json", json_text(manifest.to_dict()))
        for name in list(written) + ["manifest.json"]:
            os.replace(scratch / name, out / name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return manifest


def _run_stage(stage, run: _Run, cfg: ExperimentConfig, emit, scratch, written, emit_gnuplot):
    a = cfg.analysis
    if stage == "jsa":
        d = run.decomposition()
        lam = np.asarray(d.singular_values)
        emit("source.json", json_text({
            "gain": d.gain, "mean_photon_number": mean_photon_number(d),
            "schmidt_number": float(1.0 / np.sum(lam ** 4)), "n_modes": d.n_modes,
            "leading_singular_values": lam[:10].tolist(), "residual": d.residual,
            "grid_s": d.grid_s.as_dict(), "grid_i": d.grid_i.as_dict(),
        }))
    elif stage == "trace":
        t0 = time.perf_counter()
        tr, hit = run.single_trace()
        if run._sweep is None:
            run.record("trace", t0, hit, run.keys["trace"])
        emit("trace.csv", csv_text(["tau_s", "P_normalized", "P_raw"], trace_csv_rows(tr)))
        emit("trace.json", json_text({"fingerprint": tr.fingerprint, "normalization": tr.normalization,
                                      "chirp_s2": tr.chirp, "n_points": int(tr.delays.size),
                                      "delay_reference": cfg.delay.reference}))
    elif stage == "sweep-chirp":
        traces = run.sweep()
        header = ["tau_s"] + [f"P_raw_xi_{i}" for i in range(len(traces))]
        rows = zip(traces[0].delays.tolist(), *[t.raw.tolist() for t in traces])
        emit("sweep_traces.csv", csv_text(header, rows))
        emit("sweep.json", json_text({"chirps_s2": [t.chirp for t in traces],
                                      "fingerprints": [t.fingerprint for t in traces]}))
    elif stage == "spectrum":
        t0 = time.perf_counter()
        specs = run.spectra()
        mean = np.mean([s.magnitudes for s in specs], axis=0)
        header = ["energy_ev", "mean_magnitude"] + [f"magnitude_xi_{i}" for i in range(len(specs))]
        rows = zip(specs[0].energies.tolist(), mean.tolist(), *[s.magnitudes.tolist() for s in specs])
        emit("spectra.csv", csv_text(header, rows))
        run.record("spectrum", t0, run.upstream_status())
    elif stage == "identify":
        t0 = time.perf_counter()
        specs = run.spectra()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            report = relative_variance(specs, a.prominence, a.min_separation_ev, a.cutoff_ev, a.match_window,
                                       [t.chirp for t in run.sweep()])
            levels = identify_levels(report, cfg.matter.eps_f_ev, a.n_levels) if report.entries else []
        emit("variance_report.json", json_text(_report_dict(report, levels, cfg, run.matter)))
        emit("identified_levels.json", json_text(_levels_dict(levels, cfg, run.matter, report.bin_width)))
        if emit_gnuplot:
            rows = [(e.energy, e.relative_variance, e.mean) for e in report.entries]
            for p in write_gnuplot(scratch, rows, cfg.baseline.enabled):
                written[p.name] = p
        run.record("identify", t0, run.upstream_status())
    elif stage == "baseline-lengths":
        traces = run.baseline_traces()
        avg = average_traces(traces, cfg.relative_delays())
        spec = spectrum(avg, a.window, axis=a.axis)
        peaks = detect_peaks(spec, a.prominence, a.min_separation_ev, a.cutoff_ev)
        emit("baseline_spectrum.csv", csv_text(["energy_ev", "magnitude"],
                                               zip(spec.energies.tolist(), spec.magnitudes.tolist())))
        ranked = sorted(peaks, key=lambda p: (-p.magnitude, p.energy))
        emit("baseline_peaks.json", json_text({
            "lengths_mm": cfg.baseline_lengths_mm().tolist(), "energy_axis": a.axis,
            "bin_width_ev": spec.bin_width,
            "peaks": [{"energy_ev": p.energy, "magnitude": p.magnitude, "bin": p.index} for p in ranked],
        }))
