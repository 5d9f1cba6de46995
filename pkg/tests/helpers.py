"""Shared world builders for the test suite."""

import numpy as np

from odebc.model import GmmWorld
from odebc.rng import generator


def flat_world(dim=8, n_comp=3, tau=0.2, seed=7, spread=2.0, std=0.6):
    rng = generator(seed, 0)
    w = rng.dirichlet(np.full(n_comp, 5.0))
    means = spread * rng.standard_normal((n_comp, dim))
    stds = std * np.ones(n_comp)
    return GmmWorld(weights=w, means=means, stds=stds, tau=tau, block=1)


def image_world(height=4, width=4, channels=1, block=2, n_comp=3, tau=0.05,
                seed=11, spread=1.0, std=0.5):
    dim = height * width * channels
    rng = generator(seed, 0)
    w = rng.dirichlet(np.full(n_comp, 5.0))
    means = spread * rng.standard_normal((n_comp, dim))
    stds = std * np.ones(n_comp)
    return GmmWorld(
        weights=w, means=means, stds=stds, tau=tau, block=block,
        shape=(height, width, channels),
    )
