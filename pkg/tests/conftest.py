import warnings

import numpy as np
import pytest

from tpavss.constants import HBAR_EV_S
from tpavss.source import (CrystalParams, FrequencyGrid, PumpParams, apply_gain, build_jsa,
                           schmidt_decompose)
from tpavss.tpa import MatterSystem

# Crystal used throughout: group delays of 5.4/5.2/5.6 ps per mm.
PS_PER_MM = 1e-9


def crystal(length=0.801e-3, **kw):
    args = dict(length=length, g_pump=5.4 * PS_PER_MM, g_signal=5.2 * PS_PER_MM,
                g_idler=5.6 * PS_PER_MM, wl_pump=0.4e-6)
    args.update(kw)
    return CrystalParams(**args)


def pump(tau_p=1e-12):
    return PumpParams.from_wavelength(tau_p, 0.4e-6)


@pytest.fixture
def desk_crystal():
    return crystal()


@pytest.fixture
def desk_pump():
    return pump()


@pytest.fixture(scope="session")
def tiny():
    """8-point grids, two Schmidt modes, one level, wide final-state window."""
    kappa_f = 0.01
    k_f = kappa_f / HBAR_EV_S
    cr = crystal(length=1e-4)
    pp = PumpParams.from_wavelength(50e-15, 0.4e-6)
    grid = FrequencyGrid(cr.omega_s0, 3 * k_f, 8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        jsa = build_jsa(grid, grid, cr, pp)
    decomp = apply_gain(schmidt_decompose(jsa, 2), 1.0)
    eps_f = HBAR_EV_S * cr.omega_p0
    matter = MatterSystem(eps_f, [(eps_f / 2 + 0.005, 0.04)])
    return {"decomp": decomp, "matter": matter, "kappa_f": kappa_f, "crystal": cr, "pump": pp}


@pytest.fixture(scope="session")
def tiny_two_level(tiny):
    eps_f = tiny["matter"].eps_f
    matter = MatterSystem(eps_f, [(eps_f / 2 - 0.004, 0.03), (eps_f / 2 + 0.006, 0.05)], [1.0, 0.7])
    return dict(tiny, matter=matter)


def oracle_time_grid(kappa_f, n):
    k_f = kappa_f / HBAR_EV_S
    return np.linspace(-8 / k_f, 8 / k_f, n)


LEVEL_LINES = (0.0724, 0.1084, 0.1384)
CROSS_LINES = (0.0904, 0.1054, 0.1234)
LEVELS = (1.586, 1.604, 1.619)


@pytest.fixture(scope="session")
def paper_config():
    from tpavss.config import load_config
    return load_config("paper-fig2")


@pytest.fixture(scope="session")
def paper_source(paper_config):
    from tpavss.source import build_source
    return build_source(paper_config.source_settings(), edge_tolerance=paper_config.source.edge_tolerance)


def paper_delays(cfg, length_mm=None):
    from tpavss.source import group_delay_offset
    return cfg.relative_delays() + group_delay_offset(cfg.crystal_params(length_mm))


@pytest.fixture(scope="session")
def paper_traces_pair(paper_config, paper_source):
    """Pair-term traces of the bundled three-level chirp ensemble."""
    from tpavss.analysis import chirp_traces
    cfg = paper_config
    return chirp_traces(paper_source, cfg.matter_system(), cfg.chirps(), paper_delays(cfg),
                        cfg.matter.kappa_f_ev, pair_only=True)


def small_config_dict(**changes):
    """A fast configuration: coarse grids, three chirps, pair term only."""
    import yaml
    from tpavss.config import bundled_config_path
    data = yaml.safe_load(bundled_config_path("paper-fig2").read_text())
    data["source"]["n_points"] = 48
    data["delay"].update(start_ps=-0.3, stop_ps=0.3, n_points=256)
    data["chirp"]["count"] = 3
    data["mode"]["pair_only"] = True
    data["baseline"] = {"enabled": True, "min_length_mm": 8.0, "max_length_mm": 8.2, "count": 2}
    for dotted, value in changes.items():
        section, key = dotted.split(".")
        data[section][key] = value
    return data


@pytest.fixture
def small_config_file(tmp_path):
    import yaml

    def make(**changes):
        path = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*.yaml')))}.yaml"
        path.write_text(yaml.safe_dump(small_config_dict(**changes)))
        return path
    return make


# -- acceptance reporting -----------------------------------------------------------------

ACCEPTANCE_RESULTS = {}


def record_acceptance(number, title, passed, detail):
    line = f"[acceptance {number}] {'PASS' if passed else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
