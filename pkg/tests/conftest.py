import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

REPO = Path(__file__).resolve().parent.parent
DATA_DIR = Path(os.environ.get("LAMAML_DATA_DIR") or REPO / "data")
IMAGES = DATA_DIR / "mnist5k-images-idx3-ubyte.gz"
LABELS = DATA_DIR / "mnist5k-labels-idx1-ubyte.gz"


@pytest.fixture(scope="session")
def mnist_base():
    if not (IMAGES.is_file() and LABELS.is_file()):
        pytest.skip(f"digit data not found in {DATA_DIR} (run scripts/prepare_mnist_subset.py)")
    from lamaml.tasks import read_idx_arrays

    return read_idx_arrays(IMAGES, LABELS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
