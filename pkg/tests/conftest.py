import copy
import os

import hypothesis
import numpy as np
import pytest

import config
from echo_model import EchoSymbolMatrix, OfdmConfig, noiseless_echo, true_radial_velocity
from fusion_location import LatticeParams, SensingRegion
from harness import ExperimentSpec, default_bs_layout
from single_bs import BsReport, SearchGrid, compress_to_E, compress_to_F

np.seterr(all="warn")

hypothesis.settings.register_profile("ci", max_examples=25, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))

TABLE_CFG = OfdmConfig(carrier_frequency=24e9, n_c=128, n_s=256, bandwidth=93.1e6, symbol_duration=12.375e-6)
ZONE_CENTER = (5.0, 5.0)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte Carlo tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def table_cfg():
    return TABLE_CFG


@pytest.fixture
def small_cfg():
    return TABLE_CFG.with_sizes(32, 64)


@pytest.fixture
def grid():
    return SearchGrid(100.0, 300.0, 401, -40.0, 40.0, 321)


@pytest.fixture
def three_bs():
    return default_bs_layout(3, ZONE_CENTER, 200.0)


@pytest.fixture
def region():
    return SensingRegion(ZONE_CENTER, 50.0)


@pytest.fixture
def make_reports():
    """Noiseless reports compressed at the true range / radial velocity of each BS."""

    def build(cfg, scenario, gains=None):
        reports = []
        for w in range(scenario.bs_count):
            gain = 1.0 if gains is None else gains[w]
            r = scenario.true_ranges[w]
            v = true_radial_velocity(scenario, w)
            b = EchoSymbolMatrix(noiseless_echo(cfg, r, v, gain), w)
            reports.append(BsReport(w, r, v, compress_to_E(b, v, cfg), compress_to_F(b, r, cfg)))
        return reports

    return build


@pytest.fixture
def small_spec(small_cfg, grid, region, tmp_path):
    return ExperimentSpec(
        snr_db=(-5.0,),
        bs_counts=(3,),
        theta_deg=(90.0,),
        variants=((small_cfg.n_c, small_cfg.n_s),),
        trials=4,
        modes=('symbol', 'mle', 'single'),
        master_seed=1234,
        ofdm=TABLE_CFG,
        grid=grid,
        location_params=LatticeParams(5.0, 0.1),
        velocity_params=LatticeParams(3.0, 0.05),
        region=region,
        output_path=str(tmp_path / 'results.csv'),
        workers=1,
        calibration_trials=8,
        weight_grid_dir=str(tmp_path / 'debug'),
        show_progress=False,
    )


@pytest.fixture
def restore_config():
    """Put config.py globals back after a test that mutates them."""
    saved = {name: copy.deepcopy(value) for name, value in vars(config).items() if name.isupper()}
    yield config
    for name, value in saved.items():
        setattr(config, name, value)

