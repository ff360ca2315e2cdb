import numpy as np
import pytest

from ucgan.config import Config


def tiny_image_config(**train):
    doc = {
        "model": {"resolution": 8, "base_channels": 4, "channel_cap": 8, "attr_width": 0.25,
                  "attributes": [{"name": "gender", "kind": "categorical", "n": 2},
                                 {"name": "age_bin", "kind": "quantized", "n": 3}]},
        "latent": {"d": 2},
        "train": {"batch_size": 4, "steps": 3, "checkpoint_every": 2, "attr_steps": 2, **train},
        "data": {"n": 16, "n_sizes": 3},
    }
    return Config.from_dict(doc)


@pytest.fixture
def tiny_cfg():
    return tiny_image_config()


@pytest.fixture
def tiny_batch():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(4, 8, 8, 3)).astype(np.float32)
    labels = np.stack([rng.integers(0, 2, 4), rng.integers(0, 3, 4)], axis=1)
    return x, labels
