"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from swedg import mesh as msh
from swedg import operators as op
from swedg.cases import BoundaryHandler


def disc_1d(n=20, degree=2, periodic=True, a=0.0, b=1.0, fast=None,
            quad_exactness=None, tags=("wall", "wall")):
    m = msh.build_interval_mesh(a, b, n, periodic=periodic, tags=tags)
    return op.Discretization(m, degree, quad_exactness=quad_exactness, fast=fast)


def disc_2d(nx=4, ny=4, degree=2, periodic=(True, True),
            bounds=((0.0, 1.0), (0.0, 1.0)), fast=None, quad_exactness=None):
    m = msh.build_structured_triangular(nx, ny, bounds=bounds, periodic=periodic)
    return op.Discretization(m, degree, quad_exactness=quad_exactness, fast=fast)


def smooth_positive_state(disc, seed=0, flat_bottom=True, g=9.812, h_floor=0.5):
    """Random smooth strictly positive state with m consistent with (h, u)."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.3, 0.3, size=(3, disc.dim))
    c = rng.uniform(0.0, 2 * np.pi, size=3)

    def wave(x, i):
        phase = 2 * np.pi * (x @ a[i] * 0.0 + x.sum(axis=-1)) + c[i]
        return np.cos(phase)

    def h_func(x):
        return h_floor + 0.3 * (1.0 + 0.5 * wave(x, 0))

    def u_func(x):
        cols = [0.4 * wave(x, 1)]
        if disc.dim == 2:
            cols.append(0.4 * wave(x, 2))
        return np.stack(cols, axis=-1)

    if flat_bottom:
        bottom = op.BottomData.flat(disc)
    else:
        bottom = op.BottomData.build(
            disc, lambda x: 0.1 * (1.0 + wave(x, 2)), continuous=True
        )
    h = disc.project_function(h_func)
    u = disc.project_function(u_func, components=disc.dim)
    hv = disc.eval_volume(h)
    uv = disc.eval_volume(u)
    m = disc.project_volume(hv[..., None] * uv)
    u = op.velocity_update(disc, h, m)
    return op.SimState(disc, h, u, m, bottom, g)


@pytest.fixture
def periodic_bc():
    return BoundaryHandler({})
