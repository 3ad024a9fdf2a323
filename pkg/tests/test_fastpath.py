"""Compiled kernels must agree with the plain numpy assembly to roundoff."""

import numpy as np
import pytest

from swedg import fastpath
from swedg import operators as op
from swedg.cases import BoundaryHandler
from swedg.integrator import forward_euler_stage

from conftest import disc_1d, disc_2d, smooth_positive_state

pytestmark = pytest.mark.skipif(
    not fastpath.AVAILABLE, reason="numba not available"
)

G = 9.812


def pair(dim, **kw):
    if dim == 1:
        return disc_1d(12, fast=False, **kw), disc_1d(12, fast=True, **kw)
    return disc_2d(4, 4, fast=False, **kw), disc_2d(4, 4, fast=True, **kw)


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("reconstruct", [False, True])
def test_euler_stage_matches_numpy(dim, reconstruct):
    slow, fast = pair(dim)
    bc = BoundaryHandler({})
    st_s = smooth_positive_state(slow, seed=4, flat_bottom=False)
    st_f = op.SimState(fast, st_s.h.copy(), st_s.u.copy(), st_s.m.copy(),
                       st_s.bottom, G)
    dt = 1e-3
    hs, ms = forward_euler_stage(st_s, dt, bc, reconstruct=reconstruct)
    hf, mf = forward_euler_stage(st_f, dt, bc, reconstruct=reconstruct)
    assert np.max(np.abs(hs - hf)) < 1e-13
    assert np.max(np.abs(ms - mf)) < 1e-13


@pytest.mark.parametrize("dim", [1, 2])
def test_euler_stage_wall_outflow_boundaries(dim):
    if dim == 1:
        slow = disc_1d(12, periodic=False, fast=False, tags=("wall", "outflow"))
        fast = disc_1d(12, periodic=False, fast=True, tags=("wall", "outflow"))
        bc = BoundaryHandler({"wall": "wall", "outflow": "outflow"})
    else:
        from swedg.mesh import build_structured_triangular
        kw = dict(bounds=((0.0, 1.0), (0.0, 1.0)),
                  tags={"left": "wall", "right": "outflow",
                        "bottom": "wall", "top": "wall"})
        slow = op.Discretization(build_structured_triangular(4, 4, **kw), 2,
                                 fast=False)
        fast = op.Discretization(build_structured_triangular(4, 4, **kw), 2,
                                 fast=True)
        bc = BoundaryHandler({"left": "wall", "right": "outflow",
                              "bottom": "wall", "top": "wall"})
    st_s = smooth_positive_state(slow, seed=5)
    st_f = op.SimState(fast, st_s.h.copy(), st_s.u.copy(), st_s.m.copy(),
                       st_s.bottom, G)
    dt = 1e-3
    hs, ms = forward_euler_stage(st_s, dt, bc)
    hf, mf = forward_euler_stage(st_f, dt, bc)
    assert np.max(np.abs(hs - hf)) < 1e-13
    assert np.max(np.abs(ms - mf)) < 1e-13


@pytest.mark.parametrize("dim", [1, 2])
def test_velocity_update_matches_numpy(dim):
    slow, fast = pair(dim)
    st = smooth_positive_state(slow, seed=6)
    us = op.velocity_update(slow, st.h, st.m)
    uf = op.velocity_update(fast, st.h, st.m)
    assert np.max(np.abs(us - uf)) < 1e-13


@pytest.mark.parametrize("dim", [1, 2])
def test_facet_speeds_match_numpy(dim):
    slow, fast = pair(dim)
    bc = BoundaryHandler({})
    st = smooth_positive_state(slow, seed=7)
    a_s = op.facet_max_speeds(slow, st.h, st.u, st.bottom, G, bc)
    a_f = op.facet_max_speeds(fast, st.h, st.u, st.bottom, G, bc)
    assert np.max(np.abs(a_s - a_f)) < 1e-12


def test_velocity_update_reports_bad_element():
    disc = disc_1d(4, fast=True)
    h = disc.project_function(lambda x: np.full(x.shape[:-1], 1.0))
    h[2] *= -1.0
    m = np.zeros((4, disc.nb, 1))
    with pytest.raises(op.NonSPDMassMatrixError):
        op.velocity_update(disc, h, m)
