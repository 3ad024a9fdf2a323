"""Pointwise shallow-water quantities.

All functions are vectorized: scalar trace quantities have an arbitrary
leading shape ``(...)`` and vector quantities ``(..., dim)``.  Trace pairs are
ordered (plus, minus) with the unit normal pointing from plus to minus, and
jumps follow the convention [[f]] = f_plus - f_minus.
"""

import numpy as np

_dry_clamp_count = 0


def dry_clamp_count():
    """Number of negative-height inputs clamped to zero so far (diagnostic)."""
    return _dry_clamp_count


def _clamp_h(h):
    global _dry_clamp_count
    h = np.asarray(h, dtype=float)
    neg = h < 0
    if np.any(neg):
        _dry_clamp_count += int(np.count_nonzero(neg))
        h = np.where(neg, 0.0, h)
    return h


def hydrostatic_reconstruct(h_p, h_m, b_p, b_m):
    """Facet-wise height reconstruction removing the bottom jump.

    Returns (h*_plus, h*_minus), both non-negative and bounded by the input
    heights; preserves [[h*]] = [[h+b]] on lake-at-rest states.
    """
    db = np.asarray(b_p) - np.asarray(b_m)
    hs_p = np.maximum(0.0, h_p + np.minimum(0.0, db))
    hs_m = np.maximum(0.0, h_m - np.maximum(0.0, db))
    return hs_p, hs_m


def max_wave_speed(h_p, h_m, u_p, u_m, normal, g):
    """Local Lax-Friedrichs speed estimate max(sqrt(g h) + |u.n|) over both
    sides.  Negative heights are clamped to zero (and counted)."""
    h_p, h_m = _clamp_h(h_p), _clamp_h(h_m)
    un_p = np.sum(u_p * normal, axis=-1)
    un_m = np.sum(u_m * normal, axis=-1)
    return np.maximum(
        np.sqrt(g * h_p) + np.abs(un_p), np.sqrt(g * h_m) + np.abs(un_m)
    )


def _facet_speed_and_heights(h_p, h_m, u_p, u_m, b_p, b_m, normal, g, reconstruct):
    if reconstruct:
        hs_p, hs_m = hydrostatic_reconstruct(_clamp_h(h_p), _clamp_h(h_m), b_p, b_m)
        eta_jump = hs_p - hs_m
    else:
        hs_p, hs_m = _clamp_h(h_p), _clamp_h(h_m)
        eta_jump = (hs_p + np.asarray(b_p)) - (hs_m + np.asarray(b_m))
    alpha = max_wave_speed(hs_p, hs_m, u_p, u_m, normal, g)
    return hs_p, hs_m, eta_jump, alpha


def mass_flux(h_p, h_m, u_p, u_m, b_p, b_m, normal, g, reconstruct=False):
    """Numerical mass flux {{h u}}.n + alpha/2 [[h+b]] (plain) or the
    hydrostatically reconstructed variant {{h* u}}.n + alpha*/2 [[h*]]."""
    hs_p, hs_m, eta_jump, alpha = _facet_speed_and_heights(
        h_p, h_m, u_p, u_m, b_p, b_m, normal, g, reconstruct
    )
    hu_avg = 0.5 * (hs_p[..., None] * u_p + hs_m[..., None] * u_m)
    return np.sum(hu_avg * normal, axis=-1) + 0.5 * alpha * eta_jump


def momentum_flux(h_p, h_m, u_p, u_m, b_p, b_m, normal, g, reconstruct=False):
    """Numerical momentum flux {{h u}}.n {{u}} + alpha/2 [[(h+b) u]] (plain),
    with h*, alpha* and [[h* u]] in the reconstructed variant."""
    hs_p, hs_m, _, alpha = _facet_speed_and_heights(
        h_p, h_m, u_p, u_m, b_p, b_m, normal, g, reconstruct
    )
    hu_avg = 0.5 * (hs_p[..., None] * u_p + hs_m[..., None] * u_m)
    hun = np.sum(hu_avg * normal, axis=-1)
    u_avg = 0.5 * (np.asarray(u_p) + np.asarray(u_m))
    if reconstruct:
        etau_jump = hs_p[..., None] * u_p - hs_m[..., None] * u_m
    else:
        etau_jump = (hs_p + np.asarray(b_p))[..., None] * u_p - (
            hs_m + np.asarray(b_m)
        )[..., None] * u_m
    return hun[..., None] * u_avg + 0.5 * alpha[..., None] * etau_jump


def entropy_density(h, u, b, g):
    """Total energy density E = h|u|^2/2 + g h^2/2 + g h b."""
    h = np.asarray(h, dtype=float)
    usq = np.sum(np.square(u), axis=-1)
    return 0.5 * h * usq + 0.5 * g * h**2 + g * h * np.asarray(b)

def entropy_variable(h, u, b, g):
    """Gradient of the energy w.r.t. (h, m): (g(h+b) - |u|^2/2, u)."""
    u = np.atleast_2d(u)
    usq = np.sum(np.square(u), axis=-1)
    first = g * (np.asarray(h) + np.asarray(b)) - 0.5 * usq
    return np.concatenate([first[..., None], u], axis=-1)


def characteristic_basis(h, u, g, normal=None):
    """Right/left eigenvector matrices of the directional flux Jacobian in
    conservative variables (h, m), evaluated at a positive mean state.

    1D: 2x2 system with eigenvalues u -+ c.  2D: 3x3 with eigenvalues
    u.n - c, u.n, u.n + c.  Batched over a leading axis.
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    u = np.atleast_2d(u)
    if np.any(h <= 0):
        raise ValueError("characteristic basis requires positive height")
    c = np.sqrt(g * h)
    n = len(h)
    dim = u.shape[-1]
    if dim == 1:
        R = np.empty((n, 2, 2))
        R[:, 0, 0] = 1.0
        R[:, 0, 1] = 1.0
        R[:, 1, 0] = u[:, 0] - c
        R[:, 1, 1] = u[:, 0] + c
    else:
        if normal is None:
            raise ValueError("2D characteristic basis needs a direction")
        nv = np.broadcast_to(np.asarray(normal, dtype=float), (n, 2))
        R = np.empty((n, 3, 3))
        R[:, 0, 0] = 1.0
        R[:, 1, 0] = u[:, 0] - c * nv[:, 0]
        R[:, 2, 0] = u[:, 1] - c * nv[:, 1]
        R[:, 0, 1] = 0.0
        R[:, 1, 1] = -nv[:, 1]
        R[:, 2, 1] = nv[:, 0]
        R[:, 0, 2] = 1.0
        R[:, 1, 2] = u[:, 0] + c * nv[:, 0]
        R[:, 2, 2] = u[:, 1] + c * nv[:, 1]
    return R, np.linalg.inv(R)


def swe_flux(h, u, b, g):
    """Exact flux of the balance-law form: returns (mass flux vector h u,
    momentum flux tensor h u (x) u + g h^2/2 I); used by oracles and tests."""
    h = np.asarray(h, dtype=float)
    u = np.atleast_2d(u)
    dim = u.shape[-1]
    hu = h[..., None] * u
    mom = h[..., None, None] * u[..., :, None] * u[..., None, :]
    mom = mom + 0.5 * g * h[..., None, None] ** 2 * np.eye(dim)
    return hu, mom
