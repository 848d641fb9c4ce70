import numpy as np
import pytest

from anchormae import data, imageset, model
from anchormae.config import TrainConfig

TINY_GEN = imageset.GeneratorConfig(seed=17, input_size=16, max_sim_ratio=4)
TINY_MODEL = model.ModelConfig(patch_size=8, embed_dim=16, depth=1, heads=2,
                               decoder_dim=8, decoder_depth=1, mlp_ratio=2)
TINY_TRAIN = TrainConfig(epochs=2, batch_size=4, seed=5)


@pytest.fixture(scope="session")
def tiny_dataset():
    return data.build_dataset(TINY_GEN, 6)


@pytest.fixture()
def tiny_model_cfg():
    return TINY_MODEL


@pytest.fixture()
def tiny_params():
    return model.init_params(TINY_MODEL, np.random.default_rng(0))
