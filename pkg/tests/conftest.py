"""Shared test helpers: randomized CCG instances with known-feasible samples."""

import numpy as np
import pytest

from ccgnav.ccg import Ball2, Ccg, SmoothBox


def sample_generator_point(rng, gen):
    """A point strictly inside the zero-sublevel set of one generator."""
    if isinstance(gen, Ball2):
        u = rng.randn(gen.dim)
        u /= max(np.linalg.norm(u), 1e-12)
        return 0.8 * rng.rand() * u
    # SmoothBox: [-0.8, 0.8]^dim is strictly inside for power >= 2.
    return rng.uniform(-0.8, 0.8, size=gen.dim)


def make_random_ccg(rng, dim=2, n_balls=1, n_boxes=1, scale=1.0):
    """Random full-dimensional CCG without equality constraints."""
    gens = tuple(Ball2(dim) for _ in range(n_balls)) + tuple(
        SmoothBox(dim) for _ in range(n_boxes)
    )
    xi = sum(g.dim for g in gens)
    G = scale * rng.randn(dim, xi)
    c = rng.randn(dim)
    return Ccg(G, c, gens=gens)


def sample_inside(rng, Z):
    """An ambient point of Z obtained from a strictly feasible generator value."""
    xi = np.concatenate(
        [sample_generator_point(rng, g) for g in Z.gens]
    ) if Z.gens else np.zeros(0)
    return Z.G @ xi + Z.c


@pytest.fixture
def rng():
    return np.random.RandomState(1234)
