import numpy as np
import pytest

from swedg import operators as op
from swedg.cases import (
    CASE_NAMES,
    BoundaryHandler,
    ghost_trace,
    make_case,
    setup,
)


class TestCaseParameters:
    def test_all_cases_construct(self):
        for name in CASE_NAMES:
            case = make_case(name)
            assert case.name == name
            assert case.dim in (1, 2)
            assert case.g > 0
            assert case.t_final >= 0

    def test_unknown_case(self):
        with pytest.raises(KeyError):
            make_case("ex_nonexistent")

    def test_smooth_bump_peak(self):
        case = make_case("ex4_2s")
        b = case.bottom(np.array([[5.0]]))
        assert float(b.ravel()[0]) == pytest.approx(5.0, abs=1e-14)

    def test_dam_break_gravity(self):
        assert make_case("ex4_5").g == 10.0
        assert make_case("ex4_6").g == 10.0

    def test_pulse_initial_surface(self):
        case = make_case("ex4_3")
        x = np.array([[1.0]])
        h0 = case.eta0(x) if case.eta0 is not None else case.h0(x)
        b = case.bottom(x)
        assert float(np.ravel(h0 if case.eta0 is not None else h0 + b)[0]) == pytest.approx(
            1.0, abs=1e-14)

    def test_initial_height_nonnegative_at_control_points(self):
        for name in CASE_NAMES:
            case = make_case(name)
            n = max(4, case.default_n // 8) if case.dim == 1 else 4
            prob = setup(case, n=n)
            vals = prob.disc.eval_at(prob.state.h, prob.disc.phi_pos)
            assert vals.min() >= -1e-12, name


class TestGhostTrace:
    def test_wall_reflection(self):
        h, u, b = ghost_trace(
            1.3, np.array([2.0, 1.0]), 0.2, np.array([1.0, 0.0]), "wall"
        )
        assert h == 1.3 and b == 0.2
        assert np.allclose(u, [-2.0, 1.0], atol=1e-15)

    def test_wall_tangential_flow_unchanged(self):
        h, u, b = ghost_trace(
            1.0, np.array([0.0, 3.0]), 0.0, np.array([1.0, 0.0]), "wall"
        )
        assert np.allclose(u, [0.0, 3.0], atol=1e-15)

    def test_outflow_copies_interior(self):
        h, u, b = ghost_trace(
            0.7, np.array([1.0, -2.0]), 0.1, np.array([0.0, 1.0]), "outflow"
        )
        assert h == 0.7 and b == 0.1
        assert np.array_equal(u, [1.0, -2.0])

    def test_1d_wall(self):
        h, u, b = ghost_trace(2.0, np.array([1.5]), 0.0, np.array([1.0]), "wall")
        assert np.allclose(u, [-1.5], atol=1e-15)


class TestSetup:
    def test_problem_shapes(self):
        prob = setup(make_case("ex4_1"), n=16)
        nE = prob.disc.mesh.n_elements
        assert prob.state.h.shape == (nE, prob.disc.nb)
        assert prob.state.m.shape == (nE, prob.disc.nb, 1)
        assert prob.state.u.shape == (nE, prob.disc.nb, 1)

    def test_reconstruct_flag_tracks_bottom(self):
        assert setup(make_case("ex4_2s"), n=16).reconstruct is False
        assert setup(make_case("ex4_2d"), n=16).reconstruct is True

    def test_well_balanced_init_matches_surface(self):
        prob = setup(make_case("ex4_2s"), n=32)
        eta = prob.state.h + prob.state.bottom.coeff
        const = prob.disc.project_function(
            lambda x: np.full(x.shape[:-1], 10.0))
        assert np.max(np.abs(eta - const)) < 1e-12

    def test_2d_case_mesh(self):
        prob = setup(make_case("ex4_7"), n=5)
        assert prob.disc.dim == 2
        assert prob.disc.mesh.n_elements == 50

    def test_boundary_handler_kinds(self):
        bc = BoundaryHandler({"left": "outflow", "right": "wall"})
        assert bc.kind("left") == "outflow"
        assert bc.kind("right") == "wall"
