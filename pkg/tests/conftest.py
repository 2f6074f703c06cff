import time

import numpy as np
import pytest

from priorflow import PriorFlow, default_scene, generate_dataset
from priorflow.synthlab import AttributeDistribution


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def scene():
    return default_scene(2)


@pytest.fixture(scope="session")
def scene_data(scene):
    return generate_dataset(scene, 5000, seed=0)


@pytest.fixture(scope="session")
def trained(scene_data):
    """Default-configuration model on the 2-D, 4-attribute scene; records wall time."""
    start = time.perf_counter()
    est = PriorFlow(random_state=0).fit(scene_data.x, scene_data.labels)
    est.fit_seconds_ = time.perf_counter() - start
    return est


@pytest.fixture(scope="session")
def symmetric_pair_model():
    """Small model on two mirror-image Gaussians; its intersection sits near alpha = 0.5."""
    dists = [
        AttributeDistribution("left", "gaussian_mixture",
                              {"means": [[-1.5, 0.0]], "stds": [[0.5, 0.6]], "weights": [1.0]}),
        AttributeDistribution("right", "gaussian_mixture",
                              {"means": [[1.5, 0.0]], "stds": [[0.5, 0.6]], "weights": [1.0]}),
    ]
    data = generate_dataset(dists, 1500, seed=3)
    est = PriorFlow(n_layers=4, hidden_width=32, epochs=30, random_state=0)
    return est.fit(data.x, data.labels)
