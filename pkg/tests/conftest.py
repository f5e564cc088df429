import hypothesis
import numpy as np
import pytest

from src.database import connection
from src.sim.pipeline import BalanceConfig, IkConfig, RetargetConfig, build_control_system
from src.sim.scene import SceneConfig

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5)
hypothesis.settings.register_profile("thorough", max_examples=200)
hypothesis.settings.load_profile("fast")


@pytest.fixture
def scene() -> SceneConfig:
    return SceneConfig()


@pytest.fixture
def system(scene):
    return build_control_system(scene, BalanceConfig(n_preview=50), RetargetConfig(), IkConfig())


@pytest.fixture
def ledger(tmp_path):
    """Fresh SQLite results ledger under the test's temporary directory."""
    url = f"sqlite:///{tmp_path}/ledger.db"
    connection.init_db(url)
    yield url
    connection.configure(connection.RESULTS_DB)
