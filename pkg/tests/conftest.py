"""Shared fixtures: small synthetic corpora reused across test modules."""

import numpy as np
import pytest

from vegstrata import fit_elevation_mixture, normalize
from vegstrata import synth


@pytest.fixture(scope="session")
def small_corpus():
    """Eight sparse plots of the clean (separable) recipe."""
    return synth.generate_corpus(8, seed=2024, density=3.0)


@pytest.fixture(scope="session")
def small_plots(small_corpus):
    return [normalize(s.plot) for s in small_corpus]


@pytest.fixture(scope="session")
def small_mixture(small_plots):
    return fit_elevation_mixture(small_plots)


@pytest.fixture(scope="session")
def rich_scene():
    """One deterministic scene containing all three strata."""
    spec = synth.SceneSpec(
        seed=7,
        density=4.0,
        grass=(synth.GrassPatch(-3.0, 2.0, 4.0),),
        bushes=(synth.Bush(4.0, -3.0, 2.0, 1.0),),
        trees=(synth.TreeCrown(-2.0, -4.0, 2.5, 3.0, 2.0, 6.0),),
    )
    return synth.generate(spec)


@pytest.fixture(scope="session")
def rich_plot(rich_scene):
    return normalize(rich_scene.plot)


def random_probs(rng, n):
    """Valid (n, 4) probability rows."""
    return rng.dirichlet(np.ones(4), size=n)
