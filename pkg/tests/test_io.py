import json

import numpy as np
import pytest

from tpavss.errors import ConfigurationError
from tpavss.io import (csv_text, format_float, json_text, load_decomposition, load_jsa, read_csv,
                       save_decomposition, save_jsa, write_trace)
from tpavss.source import SourceSettings, build_jsa, build_source, default_grids, schmidt_decompose
from tpavss.tpa import TpaTrace

from conftest import crystal, pump

pytestmark = pytest.mark.filterwarnings("ignore:joint spectral amplitude at the grid edge")


def test_jsa_round_trip(tmp_path):
    c, p = crystal(), pump()
    gs, gi = default_grids(c, p, 24)
    jsa = build_jsa(gs, gi, c, p)
    save_jsa(tmp_path / "a.npz", jsa)
    back = load_jsa(tmp_path / "a.npz")
    assert np.array_equal(back.values, jsa.values) and back.norm == jsa.norm
    assert back.grid_s == jsa.grid_s and back.grid_i == jsa.grid_i


@pytest.mark.parametrize("with_gain", [True, False])
def test_decomposition_round_trip(tmp_path, with_gain):
    d = build_source(SourceSettings(crystal(), pump(), n_points=24))
    if not with_gain:
        gs, gi = default_grids(crystal(), pump(), 24)
        d = schmidt_decompose(build_jsa(gs, gi, crystal(), pump()), 5)
    save_decomposition(tmp_path / "d.npz", d)
    back = load_decomposition(tmp_path / "d.npz")
    assert np.array_equal(back.modes_s, d.modes_s) and np.array_equal(back.modes_i, d.modes_i)
    assert np.array_equal(back.singular_values, d.singular_values)
    assert back.gain == d.gain
    if with_gain:
        assert np.array_equal(back.u, d.u) and np.array_equal(back.v, d.v)


def test_wrong_payload_rejected(tmp_path):
    d = build_source(SourceSettings(crystal(), pump(), n_points=16))
    save_decomposition(tmp_path / "d.npz", d)
    with pytest.raises(ConfigurationError):
        load_jsa(tmp_path / "d.npz")


def test_float_format_round_trips():
    rng = np.random.default_rng(0)
    for x in rng.normal(size=200) * 10.0 ** rng.integers(-30, 30, 200):
        assert float(format_float(x)) == x


def test_csv_is_crlf_with_header():
    text = csv_text(["a", "b"], [(0.1, 2.0), (1e-300, -3.5)])
    assert text.startswith("a,b\r\n")
    assert text.count("\r\n") == 3
    assert "0.10000000000000001" in text


def test_trace_export(tmp_path):
    tau = np.arange(4) * 1e-15
    raw = np.array([1.0, 2.0, 4.0, 3.0]) * 1e-19
    side = write_trace(tmp_path / "t.csv", TpaTrace(tau, raw, float(raw.max()), "abc"))
    header, rows = read_csv(tmp_path / "t.csv")
    assert header == ["tau_s", "P_normalized", "P_raw"]
    assert [float(r[2]) for r in rows] == raw.tolist()
    meta = json.loads(side.read_text())
    assert meta["schema_version"] == 1 and meta["fingerprint"] == "abc"


def test_json_sorted_and_versioned():
    doc = json.loads(json_text({"b": 1, "a": 2}))
    assert list(doc) == ["a", "b", "schema_version"]
