import numpy as np
import pytest

from proxylab.datasets import SyntheticSpec, generate_synthetic
from proxylab.models import EncoderSpec, init_model

NUM_CLASSES = 4
INPUT_DIM = 16


def build_target(seed: int = 7):
    img = EncoderSpec(input_dim=INPUT_DIM, hidden_dims=(8,), embed_dim=6,
                      activation="relu")
    txt = EncoderSpec(input_dim=NUM_CLASSES, hidden_dims=(8,), embed_dim=6,
                      activation="relu")
    return init_model(img, txt, NUM_CLASSES, seed=seed)


def build_proxy(seed: int = 8):
    img = EncoderSpec(input_dim=INPUT_DIM, hidden_dims=(10, 10), embed_dim=6,
                      activation="tanh")
    txt = EncoderSpec(input_dim=NUM_CLASSES, hidden_dims=(10, 10), embed_dim=6,
                      activation="tanh")
    return init_model(img, txt, NUM_CLASSES, seed=seed)


@pytest.fixture
def target():
    return build_target()


@pytest.fixture
def proxy():
    return build_proxy()


@pytest.fixture(scope="session")
def tiny_sets():
    spec = SyntheticSpec(num_classes=NUM_CLASSES, side=4, train_per_class=25,
                         test_per_class=10, noise_sigma=0.05,
                         class_offset_scale=0.02)
    return generate_synthetic(spec, seed=3)


@pytest.fixture
def tiny_train(tiny_sets):
    return tiny_sets[0]


@pytest.fixture
def tiny_test(tiny_sets):
    return tiny_sets[1]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
