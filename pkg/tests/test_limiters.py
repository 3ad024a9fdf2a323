import numpy as np
import pytest

from swedg import operators as op
from swedg.limiters import (
    LimiterWorkspace,
    PositivityError,
    _minmod,
    dry_cell_limit,
    fu_shu_indicator,
    positivity_limit,
    tvb_limit,
    velocity_limit,
)

from conftest import disc_1d, disc_2d

G = 9.812


def workspace(disc, kinds=None):
    return LimiterWorkspace(disc, kinds or {})


class TestIndicator:
    def test_constant_field_zero(self):
        disc = disc_1d(8, degree=1)
        ws = workspace(disc)
        p = disc.project_function(lambda x: np.full(x.shape[:-1], 4.2))
        assert np.all(fu_shu_indicator(ws, p) == 0.0)

    def test_global_shift_invariance(self):
        disc = disc_2d(4, 4, degree=2)
        ws = workspace(disc)
        p = disc.project_function(
            lambda x: np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])
        )
        shift = disc.project_function(lambda x: np.full(x.shape[:-1], 17.3))
        i0 = fu_shu_indicator(ws, p)
        i1 = fu_shu_indicator(ws, p + shift)
        assert np.max(np.abs(i0 - i1)) < 1e-12

    def test_three_cell_hand_oracle(self):
        # periodic 3-cell mesh, piecewise-constant data: the extrapolated
        # neighbor average is just the neighbor's average
        disc = disc_1d(3, degree=1)
        ws = workspace(disc)
        avg = np.array([1.0, 2.0, 4.0])
        p = avg[:, None] * disc.sqrtj[:, None]
        p = np.concatenate([p, np.zeros_like(p[:, :0])], axis=1)
        pad = np.zeros((3, disc.nb - 1))
        p = np.concatenate([p[:, :1], pad], axis=1)
        ind = fu_shu_indicator(ws, p)
        rng = avg.max() - avg.min()
        expected = np.array([
            (abs(4 - 1) + abs(2 - 1)) / rng,
            (abs(1 - 2) + abs(4 - 2)) / rng,
            (abs(2 - 4) + abs(1 - 4)) / rng,
        ])
        assert np.allclose(ind, expected, atol=1e-13)

    def test_three_cell_linear_extrapolation(self):
        # slopes included: the neighbor's linear polynomial is evaluated at
        # this cell's centroid
        disc = disc_1d(3, degree=1)
        ws = workspace(disc)
        dx = 1.0 / 3.0
        avg = np.array([0.0, 0.0, 0.0])
        slope = np.array([0.0, 0.0, 1.0])  # du/dx per cell
        p = np.zeros((3, disc.nb))
        p[:, 0] = avg * disc.sqrtj
        # mode 1 is sqrt(3)(2 xi - 1)/sqrt(dx); du/dx = coeff * 2 sqrt(3)/dx^{3/2}
        p[:, 1] = slope * dx ** 1.5 / (2 * np.sqrt(3.0))
        ind = fu_shu_indicator(ws, p)
        # all averages identical: the global range denominator is floored and
        # the indicator is defined to be zero regardless of slopes
        assert np.all(ind == 0.0)

    def test_refinement_decay(self):
        # smooth field: indicator is O(cell size^2); doubling resolution
        # shrinks the max by at least 3x
        def field(x):
            return np.sin(2 * np.pi * x[..., 0])

        vals = []
        for n in (16, 32):
            disc = disc_1d(n, degree=2)
            ws = workspace(disc)
            p = disc.project_function(field)
            vals.append(fu_shu_indicator(ws, p).max())
        assert vals[0] / vals[1] > 3.0


class TestMinmod:
    def test_cases(self):
        assert _minmod(np.array([1.0]), np.array([2.0]), np.array([3.0]))[0] == 1.0
        assert _minmod(np.array([-1.0]), np.array([2.0]))[0] == 0.0
        assert _minmod(np.array([-3.0]), np.array([-1.0]))[0] == -1.0
        assert _minmod(np.array([0.0]), np.array([5.0]))[0] == 0.0


class TestTVB:
    def _state_1d(self, disc, h_func):
        bottom = op.BottomData.flat(disc)
        h = disc.project_function(h_func)
        m = np.zeros((disc.mesh.n_elements, disc.nb, 1))
        return bottom, h, m

    def test_averages_preserved(self):
        disc = disc_1d(12, degree=2)
        ws = workspace(disc)
        bottom, h, m = self._state_1d(
            disc, lambda x: 1.0 + np.where(x[..., 0] < 0.5, 1.0, 0.0)
        )
        rng = np.random.default_rng(0)
        m = rng.standard_normal(m.shape) * 0.1
        eta = h + bottom.coeff
        h_avg = disc.cell_averages(h)
        troubled = np.ones(disc.mesh.n_elements, dtype=bool)
        eta2, m2, _ = tvb_limit(disc, ws, eta.copy(), m.copy(), h_avg,
                                troubled, G)
        assert np.max(np.abs(disc.cell_averages(eta2) - disc.cell_averages(eta))) < 1e-13
        for d in range(m.shape[2]):
            assert np.max(np.abs(disc.cell_averages(m2[:, :, d])
                                 - disc.cell_averages(m[:, :, d]))) < 1e-13

    def test_smooth_monotone_unchanged(self):
        # gentle linear profile: minmod keeps the original slope
        disc = disc_1d(8, degree=1)
        ws = workspace(disc)
        bottom, h, m = self._state_1d(disc, lambda x: 2.0 + 0.1 * x[..., 0])
        eta = h + bottom.coeff
        h_avg = disc.cell_averages(h)
        interior = np.zeros(8, dtype=bool)
        interior[2:6] = True  # periodic mesh: all cells are interior anyway
        eta2, m2, changed = tvb_limit(disc, ws, eta.copy(), m.copy(), h_avg,
                                      interior, G)
        assert np.max(np.abs(eta2 - eta)) < 1e-12
        assert np.max(np.abs(m2 - m)) < 1e-12

    def test_steep_slope_reduced(self):
        # middle cell slope exceeds both neighbor average differences:
        # minmod replaces it by the smaller common-sign difference
        disc = disc_1d(3, degree=1, fast=False)
        ws = workspace(disc)
        bottom = op.BottomData.flat(disc)
        dx = 1.0 / 3.0
        h = np.zeros((3, 2))
        h[:, 0] = np.array([1.0, 2.0, 3.0]) * disc.sqrtj
        # give the middle cell an excessive slope of 30 (average diffs are 3)
        h[1, 1] = 30.0 * dx ** 1.5 / (2 * np.sqrt(3.0))
        m = np.zeros((3, 2, 1))
        eta = h + bottom.coeff
        troubled = np.array([False, True, False])
        eta2, _, changed = tvb_limit(disc, ws, eta.copy(), m.copy(),
                                     disc.cell_averages(h), troubled, G)
        # the limiter minmods the endpoint deviation slope*dx/2 (= 5 here)
        # against the forward/backward average differences (both 1), so the
        # limited endpoint deviation is 1 and the slope becomes 2/dx = 6
        slope = eta2[1, 1] * 2 * np.sqrt(3.0) / dx ** 1.5
        assert slope == pytest.approx(2.0 / dx, abs=1e-10)

    def test_lake_at_rest_invariance(self):
        disc = disc_1d(10, degree=2)
        ws = workspace(disc)
        bottom = op.BottomData.build(
            disc, lambda x: 0.3 * np.sin(2 * np.pi * x[..., 0]) ** 2,
            continuous=True,
        )
        h = disc.project_function(lambda x: np.full(x.shape[:-1], 2.0)) - bottom.coeff
        m = np.zeros((10, disc.nb, 1))
        eta = h + bottom.coeff
        troubled = np.ones(10, dtype=bool)
        eta2, m2, _ = tvb_limit(disc, ws, eta.copy(), m.copy(),
                                disc.cell_averages(h), troubled, G)
        assert np.max(np.abs(eta2 - eta)) < 1e-12
        assert np.max(np.abs(m2 - m)) < 1e-12

    def test_2d_averages_preserved(self):
        disc = disc_2d(4, 4, degree=2)
        ws = workspace(disc)
        bottom = op.BottomData.flat(disc)
        h = disc.project_function(
            lambda x: 1.0 + np.where(x[..., 0] < 0.5, 1.0, 0.0)
        )
        rng = np.random.default_rng(1)
        m = 0.1 * rng.standard_normal((disc.mesh.n_elements, disc.nb, 2))
        eta = h + bottom.coeff
        troubled = np.ones(disc.mesh.n_elements, dtype=bool)
        eta2, m2, _ = tvb_limit(disc, ws, eta.copy(), m.copy(),
                                disc.cell_averages(h), troubled, G)
        assert np.max(np.abs(disc.cell_averages(eta2) - disc.cell_averages(eta))) < 1e-12
        for d in range(2):
            assert np.max(np.abs(disc.cell_averages(m2[:, :, d])
                                 - disc.cell_averages(m[:, :, d]))) < 1e-12


class TestPositivity:
    def test_nonnegative_unchanged(self):
        disc = disc_1d(6, degree=2)
        h = disc.project_function(lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x[..., 0]))
        out, theta = positivity_limit(disc, h)
        assert np.all(theta == 1.0)
        assert np.array_equal(out, h)

    def test_half_scaling(self):
        # single unit cell, avg 1, minimum point value -1 -> theta = 0.5
        disc = disc_1d(1, degree=1, periodic=False)
        h = np.zeros((1, 2))
        h[0, 0] = 1.0
        h[0, 1] = 2.0 / np.sqrt(3.0)  # h(0) = 1 - 2 = -1, h(1) = 3
        out, theta = positivity_limit(disc, h)
        assert theta[0] == pytest.approx(0.5, abs=1e-14)
        vals = disc.eval_at(out, disc.phi_pos)
        assert vals.min() >= -1e-14
        assert disc.cell_averages(out)[0] == pytest.approx(1.0, abs=1e-14)

    def test_zero_average_flattens(self):
        disc = disc_1d(1, degree=1, periodic=False)
        h = np.array([[0.0, 1.0]])
        out, theta = positivity_limit(disc, h)
        assert theta[0] == 0.0
        assert np.all(out[:, 1:] == 0.0)

    def test_negative_average_raises(self):
        disc = disc_1d(4, degree=1)
        h = disc.project_function(lambda x: np.full(x.shape[:-1], -0.5))
        with pytest.raises(PositivityError):
            positivity_limit(disc, h)


class TestDryCell:
    def _setup(self):
        disc = disc_1d(5, degree=2)
        rng = np.random.default_rng(2)
        h = 0.02 * rng.standard_normal((5, disc.nb))
        h[:, 0] = np.array([0.04, 0.06, 0.5, 1.0, 0.04]) * disc.sqrtj
        m = 0.02 * rng.standard_normal((5, disc.nb, 1))
        return disc, h, m

    def test_threshold(self):
        disc, h, m = self._setup()
        h2, m2, dry = dry_cell_limit(disc, h, m, eps_d=0.05, h_max0=1.0)
        assert set(dry) == {0, 4}
        assert np.all(h2[[0, 4], 1:] == 0.0)
        assert np.all(m2[[0, 4], 1:] == 0.0)
        assert np.array_equal(h2[[1, 2, 3]], h[[1, 2, 3]])

    def test_eps_zero_no_op_on_positive(self):
        disc, h, m = self._setup()
        h2, m2, dry = dry_cell_limit(disc, h, m, eps_d=0.0, h_max0=1.0)
        assert len(dry) == 0
        assert np.array_equal(h2, h)

    def test_mass_momentum_preserved(self):
        disc, h, m = self._setup()
        h2, m2, _ = dry_cell_limit(disc, h, m, eps_d=0.05, h_max0=1.0)
        assert op.total_mass(disc, h2) == pytest.approx(
            op.total_mass(disc, h), abs=1e-14)
        assert np.allclose(op.total_momentum(disc, m2),
                           op.total_momentum(disc, m), atol=1e-14)


class TestVelocityLimit:
    def test_identity_below_cap(self):
        disc = disc_1d(6, degree=1)
        ws = workspace(disc)
        u = 0.5 * np.ones((6, disc.nb, 1))
        u[:, 1:] = 0.0
        out, n = velocity_limit(disc, ws, u, v_max=10.0)
        assert n == 0
        assert np.array_equal(out, u)

    def test_neighbor_average_refill(self):
        disc = disc_1d(3, degree=1, periodic=False)
        ws = workspace(disc, kinds={"wall": "wall"})
        u = np.zeros((3, 2, 1))
        u[0, 0] = 1.0
        u[2, 0] = 3.0
        u[1, 0] = 50.0  # troubled cell between calm averages 1 and 3
        out, n = velocity_limit(disc, ws, u, v_max=10.0)
        assert n == 1
        assert out[1, 0, 0] == pytest.approx(2.0, abs=1e-13)
        assert np.all(out[1, 1:] == 0.0)
        assert np.array_equal(out[[0, 2]], u[[0, 2]])
