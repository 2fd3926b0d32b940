"""
Shared pytest fixtures
"""

import numpy as np
import pytest

from core_stats import dataset_from_blocks, sym_eig
from synth import CovModel, make_population, sample_gaussian, trial_rng


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def identity_case():
    """S = I_2, n0 = n1 = 3 (n_tilde = 4), m = (1, -1): the hand-worked risk case"""
    return {
        'eig': sym_eig(np.eye(2)),
        'm': np.array([1.0, -1.0]),
        'n0': 3,
        'n1': 3,
        'gamma': 1.0,
    }


@pytest.fixture
def square_dataset():
    """class 0 = {(0,0), (2,0)}, class 1 = {(0,0), (0,2)}; pooled S = I_2"""
    return dataset_from_blocks([[0.0, 2.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 2.0]])


@pytest.fixture
def model1_population():
    return make_population(CovModel('model1', 20), 3.0)


@pytest.fixture
def small_dataset(model1_population):
    return sample_gaussian(model1_population, 30, 30, trial_rng(7, 0))


def random_spd(rng, p, scale=1.0):
    A = rng.standard_normal((p, p))
    return scale * (A @ A.T) / p + 0.1 * np.eye(p)


def write_text(path, text):
    path.write_text(text)
    return str(path)
