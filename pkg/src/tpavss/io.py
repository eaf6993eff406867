"""Containers and exports.

Binary container
    NumPy ``.npz`` archives. Complex matrices are stored as float64 arrays with
    a trailing axis of length 2 holding (real, imag); grids are stored as
    ``[center, span, n_points]``; a ``format`` entry names the payload and a
    ``format_version`` entry its layout revision.

Text exports
    CSV files follow RFC 4180 (UTF-8, header row, CRLF line ends) with every
    float written to 17 significant digits. JSON documents carry a
    ``schema_version`` key and are written with sorted keys.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .source import FrequencyGrid, JointSpectralAmplitude, SchmidtDecomposition

FORMAT_VERSION = 1
JSON_SCHEMA_VERSION = 1


def interleave(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=complex)
    return np.stack([values.real, values.imag], axis=-1).astype(np.float64)


def deinterleave(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return values[..., 0] + 1j * values[..., 1]


def _grid_array(grid: FrequencyGrid) -> np.ndarray:
    return np.array([grid.center, grid.span, grid.n_points], dtype=np.float64)


def _grid_from(arr) -> FrequencyGrid:
    return FrequencyGrid(float(arr[0]), float(arr[1]), int(arr[2]))


def _atomic_savez(path, **arrays):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def save_jsa(path, jsa: JointSpectralAmplitude) -> None:
    _atomic_savez(path, format=np.array("jsa"), format_version=np.array(FORMAT_VERSION),
                  grid_s=_grid_array(jsa.grid_s), grid_i=_grid_array(jsa.grid_i),
                  values=interleave(jsa.values), norm=np.array(jsa.norm))


def load_jsa(path) -> JointSpectralAmplitude:
    with np.load(path, allow_pickle=False) as z:
        _check_format(z, "jsa")
        return JointSpectralAmplitude(_grid_from(z["grid_s"]), _grid_from(z["grid_i"]),
                                      deinterleave(z["values"]), float(z["norm"]))


def save_decomposition(path, decomp: SchmidtDecomposition) -> None:
    has_gain = decomp.has_gain
    _atomic_savez(
        path,
        format=np.array("schmidt"), format_version=np.array(FORMAT_VERSION),
        grid_s=_grid_array(decomp.grid_s), grid_i=_grid_array(decomp.grid_i),
        singular_values=np.asarray(decomp.singular_values, dtype=np.float64),
        modes_s=interleave(decomp.modes_s), modes_i=interleave(decomp.modes_i),
        gain=np.array(decomp.gain if has_gain else np.nan),
        u=np.asarray(decomp.u if has_gain else [], dtype=np.float64),
        v=np.asarray(decomp.v if has_gain else [], dtype=np.float64),
        residual=np.array(decomp.residual),
    )


def load_decomposition(path) -> SchmidtDecomposition:
    with np.load(path, allow_pickle=False) as z:
        _check_format(z, "schmidt")
        gain = float(z["gain"])
        has_gain = not np.isnan(gain)
        return SchmidtDecomposition(
            grid_s=_grid_from(z["grid_s"]), grid_i=_grid_from(z["grid_i"]),
            singular_values=z["singular_values"],
            modes_s=deinterleave(z["modes_s"]), modes_i=deinterleave(z["modes_i"]),
            gain=gain if has_gain else None,
            u=z["u"] if has_gain else None, v=z["v"] if has_gain else None,
            residual=float(z["residual"]),
        )


def _check_format(z, expected):
    if "format" not in z or str(z["format"]) != expected:
        raise ConfigurationError(f"container does not hold a '{expected}' payload")
    if int(z["format_version"]) != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported container version {int(z['format_version'])}")


def format_float(x) -> str:
    return format(float(x), ".17g")


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = _io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, header, rows) -> None:
    write_text(path, csv_text(header, rows))


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def json_text(obj: dict) -> str:
    doc = {"schema_version": JSON_SCHEMA_VERSION}
    doc.update(obj)
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path, obj: dict) -> None:
    write_text(path, json_text(obj))


def trace_csv_rows(trace):
    return zip(trace.delays.tolist(), trace.values.tolist(), trace.raw.tolist())


def write_trace(path_csv, trace, extra: dict = None) -> Path:
    """Trace CSV (``tau_s, P_normalized, P_raw``) plus a JSON sidecar."""
    path_csv = Path(path_csv)
    write_csv(path_csv, ["tau_s", "P_normalized", "P_raw"], trace_csv_rows(trace))
    sidecar = path_csv.with_suffix(".json")
    meta = {"fingerprint": trace.fingerprint, "normalization": trace.normalization,
            "chirp_s2": trace.chirp, "n_points": int(trace.delays.size)}
    if extra:
        meta.update(extra)
    write_json(sidecar, meta)
    return sidecar


GNUPLOT_SCRIPT = """\
# Panels: (a) trace, (b) spectrum, (c) relative variance (log scale), (d) length-averaged spectrum.
set datafile separator ','
set terminal pngcairo size 1200,900
set output 'panels.png'
set multiplot layout 2,2
set xlabel 'delay (ps)'
set ylabel 'P / max P'
plot 'trace.csv' using ($1*1e12):2 with lines notitle
set xlabel 'energy (eV)'
set ylabel '|FT|'
plot 'spectra.csv' using 1:2 with lines notitle
set logscale y
set ylabel 'R_n'
plot 'variance.csv' using 1:2 with points pt 7 notitle
unset logscale y
set ylabel '|FT| (length average)'
{baseline_plot}
unset multiplot
"""


def write_gnuplot(out_dir, variance_rows, has_baseline: bool) -> list:
    """Plot-ready variance table and a gnuplot script reproducing the four panels."""
    out_dir = Path(out_dir)
    write_csv(out_dir / "variance.csv", ["energy_ev", "relative_variance", "mean_magnitude"], variance_rows)
    baseline_plot = ("plot 'baseline_spectrum.csv' using 1:2 with lines notitle" if has_baseline
                     else "plot 0 notitle")
    write_text(out_dir / "plot.gp", GNUPLOT_SCRIPT.format(baseline_plot=baseline_plot))
    return [out_dir / "variance.csv", out_dir / "plot.gp"]
