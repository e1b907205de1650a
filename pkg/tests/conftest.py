import numpy as np
import pytest

from synthcut.gateway import GatewayClient, GatewayConfig
from synthcut.prompting import make_label_set

DATA_DIR = __file__.rsplit("/", 1)[0] + "/data"


@pytest.fixture(scope="session")
def labels3():
    return make_label_set(["dog", "cat", "bus"])


@pytest.fixture(scope="session")
def mock_client():
    return GatewayClient(GatewayConfig(backend="mock"))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def desk_config_dict(target_size=50, seed=7, **overrides):
    doc = {
        "labels": ["dog", "cat", "bus"],
        "recipe": "pure_syn",
        "master_seed": seed,
        "image_size": [256, 256],
        "counts": {
            "fg_per_template": 20,
            "fg_keep": 8,
            "bg_per_template": 10,
            "bg_keep_fraction": 0.95,
            "target_size": target_size,
        },
        "gateway": {"backend": "mock"},
    }
    doc.update(overrides)
    return doc
