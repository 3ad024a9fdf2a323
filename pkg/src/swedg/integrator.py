"""Fully discrete time stepping: forward Euler stage, SSP-RK3, the limited
production pipeline, CFL step control with halving, and the trajectory driver.
"""

from dataclasses import dataclass, field

import numpy as np

from . import fastpath
from . import limiters as lim
from . import operators as op
from .basis import lobatto_w1


class StepFailure(RuntimeError):
    """Step retry budget exhausted; carries the diagnostics so far."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class StepControl:
    cfl: float
    hard_positivity: bool = False
    retry_limit: int = 12
    eps_avg: float = 1e-12

    def __post_init__(self):
        if self.cfl <= 0:
            raise ValueError("cfl must be positive")
        if self.retry_limit < 1:
            raise ValueError("retry limit must be at least 1")


def forward_euler_stage(state, dt, bc, reconstruct=False):
    """One explicit stage: returns (h_new, m_new) coefficient tables.

    The momentum update carries the kinetic-energy correction terms that make
    the semi-discrete scheme entropy stable.
    """
    disc = state.disc
    if disc.fast:
        return fastpath.euler_stage(
            disc, state.h, state.u, state.m, state.bottom, state.g, bc, dt,
            bool(reconstruct),
        )
    res = op.assemble_residuals(
        disc, state.h, state.u, state.bottom, state.g, bc, reconstruct
    )
    h_new = state.h - dt * res.A
    uv = disc.eval_volume(state.u)
    dh_vals = disc.eval_volume(h_new - state.h)
    mmix = disc.project_volume(dh_vals[..., None] * uv)
    m_new = state.m - dt * res.BC + 0.5 * mmix + 0.5 * dt * res.Amix
    return h_new, m_new


def convex_combine(s1, s2, w1, w2):
    """Weighted combination of two (h, m) pairs; velocity is never combined."""
    if not (w1 >= 0 and w2 >= 0 and abs(w1 + w2 - 1.0) < 1e-14):
        raise ValueError("weights must be a convex combination")
    return w1 * s1[0] + w2 * s2[0], w1 * s1[1] + w2 * s2[1]


def ssp_rk3_plain(state, dt, bc, reconstruct=False):
    """Three-stage SSP-RK3 advance of (h, u, m) without any limiting."""
    disc = state.disc
    s = state.copy()

    h1, m1 = forward_euler_stage(s, dt, bc, reconstruct)
    u1 = op.velocity_update(disc, h1, m1)

    s1 = op.SimState(disc, h1, u1, m1, state.bottom, state.g)
    h2s, m2s = forward_euler_stage(s1, dt, bc, reconstruct)
    h2, m2 = convex_combine((state.h, state.m), (h2s, m2s), 0.75, 0.25)
    u2 = op.velocity_update(disc, h2, m2)

    s2 = op.SimState(disc, h2, u2, m2, state.bottom, state.g)
    h3s, m3s = forward_euler_stage(s2, dt, bc, reconstruct)
    hn, mn = convex_combine((state.h, state.m), (h3s, m3s), 1.0 / 3.0, 2.0 / 3.0)
    un = op.velocity_update(disc, hn, mn)

    return op.SimState(disc, hn, un, mn, state.bottom, state.g, state.t + dt)


@dataclass
class StageCounts:
    troubled: int = 0
    dry: int = 0
    velocity_limited: int = 0

    def add(self, other):
        self.troubled += other.troubled
        self.dry += other.dry
        self.velocity_limited += other.velocity_limited


def _limit_pass(disc, ws, cfg, bottom, h, m, g, eps_avg, counts):
    """Dry-cell flatten -> characteristic TVB on (h+b, m) -> positivity."""
    h, m, dry = lim.dry_cell_limit(disc, h, m, cfg.eps_d, cfg.h_max0)
    counts.dry += len(dry)

    eta = h + bottom.coeff
    ind = lim.fu_shu_indicator(ws, eta)
    troubled = ind > cfg.tol
    counts.troubled += int(np.count_nonzero(troubled))
    if np.any(troubled):
        h_avg = disc.cell_averages(h)
        eta, m, _ = lim.tvb_limit(
            disc, ws, eta.copy(), m.copy(), h_avg, troubled, g, cfg.nu
        )
        h = eta - bottom.coeff

    h, _ = lim.positivity_limit(disc, h, eps_avg)
    return h, m


def _vel_pass(disc, ws, cfg, h, m, counts):
    u = op.velocity_update(disc, h, m)
    if np.isfinite(cfg.v_max):
        u, n = lim.velocity_limit(disc, ws, u, cfg.v_max)
        counts.velocity_limited += n
    return u


def ssp_rk3_full(state, dt, bc, ws, cfg, ctrl, reconstruct=None):
    """SSP-RK3 with the full limiter pipeline after stage 1 and after each
    convex combination, and velocity limiting after every velocity update.

    Returns (new state, stage counts).  Raises PositivityError (caught by
    adaptive_advance) when a stage produces a negative average.
    """
    disc = state.disc
    if reconstruct is None:
        reconstruct = not state.bottom.continuous
    counts = StageCounts()
    g = state.g
    bot = state.bottom

    h1, m1 = forward_euler_stage(state, dt, bc, reconstruct)
    h1, m1 = _limit_pass(disc, ws, cfg, bot, h1, m1, g, ctrl.eps_avg, counts)
    u1 = _vel_pass(disc, ws, cfg, h1, m1, counts)

    s1 = op.SimState(disc, h1, u1, m1, bot, g)
    h2s, m2s = forward_euler_stage(s1, dt, bc, reconstruct)
    h2, m2 = convex_combine((state.h, state.m), (h2s, m2s), 0.75, 0.25)
    h2, m2 = _limit_pass(disc, ws, cfg, bot, h2, m2, g, ctrl.eps_avg, counts)
    u2 = _vel_pass(disc, ws, cfg, h2, m2, counts)

    s2 = op.SimState(disc, h2, u2, m2, bot, g)
    h3s, m3s = forward_euler_stage(s2, dt, bc, reconstruct)
    hn, mn = convex_combine((state.h, state.m), (h3s, m3s), 1.0 / 3.0, 2.0 / 3.0)
    hn, mn = _limit_pass(disc, ws, cfg, bot, hn, mn, g, ctrl.eps_avg, counts)
    un = _vel_pass(disc, ws, cfg, hn, mn, counts)

    new = op.SimState(disc, hn, un, mn, bot, g, state.t + dt)
    return new, counts


def compute_dt(state, ctrl, bc, t_stops=()):
    """CFL time step: cfl * min_K tau_K / alpha_K, optionally intersected with
    the hard positivity bound alpha dt |dK|/|K| <= (2/3) w1; clipped to land
    exactly on the next stop time."""
    disc = state.disc
    mesh = disc.mesh
    alpha = op.facet_max_speeds(disc, state.h, state.u, state.bottom, state.g, bc)
    with np.errstate(divide="ignore"):
        ratios = np.where(alpha > 0, mesh.elem_tau / np.where(alpha > 0, alpha, 1.0), np.inf)
    dt = ctrl.cfl * float(ratios.min())
    if ctrl.hard_positivity:
        w1 = lobatto_w1(disc.degree)
        bound = (2.0 / 3.0) * w1 * mesh.elem_measure / (
            np.where(alpha > 0, alpha, 1e-300) * mesh.elem_perimeter
        )
        dt = min(dt, float(bound.min()))
    for ts in sorted(t_stops):
        if ts > state.t + 1e-14 * max(1.0, abs(ts)):
            remaining = ts - state.t
            if dt >= remaining:
                return remaining
            # avoid a tiny final sliver step
            nsteps = int(np.ceil(remaining / dt - 1e-12))
            return remaining / nsteps
    return dt


@dataclass
class Diagnostics:
    t: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    momentum: list = field(default_factory=list)
    troubled: list = field(default_factory=list)
    dry: list = field(default_factory=list)
    velocity_limited: list = field(default_factory=list)
    retries: int = 0

    def record(self, state, dt, counts):
        disc = state.disc
        self.t.append(state.t)
        self.dt.append(dt)
        self.entropy.append(
            op.total_entropy(disc, state.h, state.u, state.bottom, state.g)
        )
        self.mass.append(op.total_mass(disc, state.h))
        mom = op.total_momentum(disc, state.m)
        self.momentum.append(float(np.linalg.norm(mom)))
        self.troubled.append(counts.troubled if counts else 0)
        self.dry.append(counts.dry if counts else 0)
        self.velocity_limited.append(counts.velocity_limited if counts else 0)


def adaptive_advance(
    state,
    t_final,
    ctrl,
    bc,
    ws=None,
    cfg=None,
    plain=False,
    output_times=(),
    on_output=None,
    reconstruct=None,
    max_steps=10**7,
):
    """Advance to t_final with CFL-adaptive steps; on a positivity failure the
    step is redone from the saved state with half the step size.

    ``on_output(state)`` fires whenever the trajectory lands on an output time.
    Returns (final state, Diagnostics).
    """
    diag = Diagnostics()
    diag.record(state, 0.0, None)
    stops = sorted(set(list(output_times) + [t_final]))
    pending = [ts for ts in stops if ts > state.t + 1e-14]
    if on_output is not None and any(
        abs(state.t - ts) <= 1e-14 * max(1.0, abs(ts)) for ts in stops
    ):
        on_output(state)

    steps = 0
    while state.t < t_final - 1e-13 * max(1.0, t_final) and steps < max_steps:
        dt = compute_dt(state, ctrl, bc, pending)
        counts = None
        for attempt in range(ctrl.retry_limit + 1):
            try:
                if plain:
                    new = ssp_rk3_plain(state, dt, bc, bool(reconstruct))
                    counts = StageCounts()
                else:
                    new, counts = ssp_rk3_full(
                        state, dt, bc, ws, cfg, ctrl, reconstruct
                    )
                break
            except (lim.PositivityError, op.NonSPDMassMatrixError):
                if attempt == ctrl.retry_limit:
                    raise StepFailure(
                        f"step at t={state.t:.6e} failed after "
                        f"{ctrl.retry_limit} halvings",
                        diag,
                    ) from None
                dt *= 0.5
                diag.retries += 1
        state = new
        steps += 1
        diag.record(state, dt, counts)
        while pending and state.t >= pending[0] - 1e-12 * max(1.0, pending[0]):
            pending.pop(0)
            if on_output is not None:
                on_output(state)
    return state, diag
