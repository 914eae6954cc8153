import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scmyth.calibration import load_calibration  # noqa: E402
from scmyth.dgp import ScenarioConfig, simulate_dataset  # noqa: E402
from scmyth.panel import CompositionalSpec, PanelData  # noqa: E402


@pytest.fixture(scope="session")
def calib():
    return load_calibration()


@pytest.fixture(scope="session")
def state_offset_ds(calib):
    return simulate_dataset(ScenarioConfig("STATE_OFFSET", "FACTOR", seed=11), calib)


@pytest.fixture
def small_panel():
    """Six units, eight periods, one 3-category group plus a scalar covariate."""
    rng = np.random.default_rng(5)
    T, N = 8, 6
    shares = rng.dirichlet([2.0, 3.0, 4.0], size=(T, N))
    covs = {"a": shares[..., 0], "b": shares[..., 1], "c": shares[..., 2], "inc": rng.normal(10, 2, (T, N))}
    y = rng.normal(size=(T, N)) + np.arange(T)[:, None] * 0.1
    panel = PanelData(tuple(f"u{i}" for i in range(N)), np.arange(1, T + 1), y, 5, covs)
    spec = CompositionalSpec((("grp", ("a", "b", "c")),), ("inc",))
    return panel, spec
