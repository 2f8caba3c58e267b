import numpy as np
import pytest

from tabattr.data import synth_dataset
from tabattr.model import MLPModel, TrainConfig, train
from tabattr.numerics import Rng


@pytest.fixture(scope="session")
def synth():
    return synth_dataset(2000, 10, [0, 1], Rng(11))


@pytest.fixture(scope="session")
def trained(synth):
    return train(synth, TrainConfig(seed=5))


def random_mlp(rng: np.random.Generator, m: int, h: int = 6, c_out: int = 1) -> MLPModel:
    kind = "sigmoid-binary" if c_out == 1 else "softmax-multiclass"
    return MLPModel(rng.normal(size=(m, h)), rng.normal(size=h), rng.normal(size=(h, c_out)),
                    rng.normal(size=c_out), kind)


def single_path(m: int = 3) -> MLPModel:
    W1 = np.zeros((m, 1))
    W1[0, 0] = 1.0
    return MLPModel(W1, np.zeros(1), np.ones((1, 1)), np.zeros(1))
