"""Post-processing limiters: troubled-cell indicator, characteristic TVB
slope limiter, positivity-preserving scaling limiter, and the wetting/drying
pair (dry-cell flattening + velocity limiter).

All limiters preserve cell averages of h and m exactly; the velocity limiter
touches only u and therefore never affects conservation.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import physics
from .mesh import BOUNDARY


class PositivityError(RuntimeError):
    """A negative water-height cell average: the step must be retried."""

    def __init__(self, element, average):
        self.element = element
        self.average = average
        super().__init__(
            f"negative water-height average {average:.3e} on element {element}"
        )


@dataclass
class LimiterConfig:
    tol: float = 0.02
    tvb_M: float = 0.0
    eps_d: float = 0.0
    v_max: float = np.inf
    h_max0: float = 1.0
    nu: float = 1.5

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("indicator threshold must be positive")
        if not 0 <= self.eps_d < 1:
            raise ValueError("dry-cell fraction must lie in [0, 1)")
        if self.v_max <= 0:
            raise ValueError("velocity cap must be positive")


_KIND_INTERIOR, _KIND_WALL, _KIND_OUTFLOW = 0, 1, 2

# reference edge midpoints, ordered as the local edges (v0v1, v1v2, v2v0)
_REF_EDGE_MID = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])


class LimiterWorkspace:
    """Static mesh/degree-dependent tables shared by indicator and limiters.

    Holds, per element and local edge: the neighbor element (or a boundary
    ghost rule), the shift-corrected neighbor centroid, the outward normal,
    the geometric expansion coefficients of the Cockburn-Shu limiter, and the
    linear-basis extension table used by the troubled-cell indicator.
    """

    def __init__(self, disc, bc_kinds=None):
        self.disc = disc
        mesh = disc.mesh
        dim = mesh.dim
        nE = mesh.n_elements
        L = dim + 1
        self.lsize = disc.basis.linear_size
        bc_kinds = bc_kinds or {}

        self.nbr = np.full((nE, L), -1, dtype=np.int64)
        self.kind = np.zeros((nE, L), dtype=np.int64)
        self.nbr_centroid = np.zeros((nE, L, dim))
        self.normal = np.zeros((nE, L, dim))
        mid = np.zeros((nE, L, dim))  # physical edge midpoints / endpoints

        cent = mesh.elem_centroid
        for e in range(nE):
            for slot, f in enumerate(mesh.elem_facets[e]):
                is_plus = mesh.elem_facet_sign[e, slot] > 0
                n = mesh.facet_normal[f] * (1.0 if is_plus else -1.0)
                xm = mesh.facet_points(np.array([0.5]))[f, 0]
                if not is_plus:
                    xm = xm - mesh.facet_shift[f]
                l = self._local_edge(e, xm) if dim == 2 else slot
                mid[e, l] = xm
                self.normal[e, l] = n
                other = mesh.facet_elems[f, 1 if is_plus else 0]
                if other == BOUNDARY:
                    kind = bc_kinds.get(mesh.facet_tag[f], "wall")
                    self.kind[e, l] = (
                        _KIND_OUTFLOW if kind == "outflow" else _KIND_WALL
                    )
                    self.nbr_centroid[e, l] = 2.0 * xm - cent[e]
                else:
                    self.nbr[e, l] = other
                    shift = mesh.facet_shift[f] * (-1.0 if is_plus else 1.0)
                    self.nbr_centroid[e, l] = cent[other] - shift
        self.mid = mid

        # indicator extension table: linear basis of neighbor T at K's centroid
        self.ext_tab = np.zeros((nE, L, self.lsize))
        for l in range(L):
            T = self.nbr[:, l]
            mask = T >= 0
            # position of K's centroid in T's (possibly shifted) frame
            x = cent + (mesh.elem_centroid[T] - self.nbr_centroid[:, l])
            rel = x - disc.origin[T]
            ref = np.einsum("esd,ed->es", disc.Jinv[T], rel)
            vals = disc.basis.values(ref)[:, : self.lsize]
            self.ext_tab[mask, l] = vals[mask] / disc.sqrtj[T][mask, None]

        if dim == 2:
            self._setup_cs_geometry()

    def _local_edge(self, e, xm):
        disc = self.disc
        ref = disc.Jinv[e] @ (xm - disc.origin[e])
        d = np.abs(_REF_EDGE_MID - ref).sum(axis=1)
        l = int(np.argmin(d))
        if d[l] > 1e-10:
            raise RuntimeError("facet midpoint does not match any local edge")
        return l

    def _setup_cs_geometry(self):
        """Expansion m_i - x_K = a1 (x_{j1} - x_K) + a2 (x_{j2} - x_K) with
        non-negative coefficients, per element and edge midpoint."""
        nE = self.disc.mesh.n_elements
        cent = self.disc.mesh.elem_centroid
        self.cs_pair = np.zeros((nE, 3, 2), dtype=np.int64)
        self.cs_coef = np.zeros((nE, 3, 2))
        pairs = [(0, 1), (1, 2), (0, 2)]
        for e in range(nE):
            D = self.nbr_centroid[e] - cent[e]  # (3, 2) neighbor directions
            for i in range(3):
                v = self.mid[e, i] - cent[e]
                best = None
                for j1, j2 in pairs:
                    M = np.column_stack([D[j1], D[j2]])
                    try:
                        a = np.linalg.solve(M, v)
                    except np.linalg.LinAlgError:
                        continue
                    if a[0] >= -1e-12 and a[1] >= -1e-12:
                        best = (j1, j2, max(a[0], 0.0), max(a[1], 0.0))
                        break
                if best is None:
                    # fall back to least-restrictive pair (clipped)
                    j1, j2 = pairs[i]
                    M = np.column_stack([D[j1], D[j2]])
                    a = np.linalg.lstsq(M, v, rcond=None)[0]
                    best = (j1, j2, max(a[0], 0.0), max(a[1], 0.0))
                self.cs_pair[e, i] = best[:2]
                self.cs_coef[e, i] = best[2:]

    # -- neighbor averages with boundary ghosts -------------------------------

    def ghost_averages(self, slot, eta_avg, m_avg):
        """(eta, m) cell averages of the neighbor across local edge ``slot``,
        with wall/outflow ghost values on boundary edges."""
        T = self.nbr[:, slot]
        kind = self.kind[:, slot]
        eta_n = np.where(T >= 0, eta_avg[T], eta_avg)
        m_n = np.where((T >= 0)[:, None], m_avg[T], m_avg)
        wall = kind == _KIND_WALL
        if np.any(wall):
            n = self.normal[:, slot]
            mn = np.einsum("ed,ed->e", m_avg, n)
            m_wall = m_avg - 2.0 * mn[:, None] * n
            m_n = np.where(wall[:, None], m_wall, m_n)
        return eta_n, m_n


def fu_shu_indicator(ws, p):
    """Troubled-cell indicator I_K = sum_T |pbar_T->K - pbar_K| / global range,
    using the linear part of p; T ranges over edge neighbors."""
    disc = ws.disc
    lin = p[:, : ws.lsize]
    avg = disc.cell_averages(p)
    num = np.zeros(len(p))
    for l in range(ws.nbr.shape[1]):
        T = ws.nbr[:, l]
        mask = T >= 0
        ext = np.einsum("ei,ei->e", lin[T], ws.ext_tab[:, l])
        num += np.where(mask, np.abs(ext - avg), 0.0)
    pmax, pmin = avg.max(), avg.min()
    eps_den = 1e-12 * max(1.0, abs(pmax))
    if pmax - pmin < eps_den:
        return np.zeros(len(p))
    return num / (pmax - pmin)


def _minmod(*args):
    """Componentwise minmod of equally-shaped arrays."""
    stacked = np.stack(args)
    signs = np.sign(stacked)
    agree = np.all(signs == signs[0], axis=0)
    return np.where(agree, signs[0] * np.min(np.abs(stacked), axis=0), 0.0)


_CHANGE_TOL = 1e-10


def tvb_limit(disc, ws, eta, m, h_avg, troubled, g, nu=1.5):
    """Characteristic-wise slope limiter on (eta = h+b, m) for the flagged
    cells; averages preserved, higher moments zeroed when a slope changes.

    Returns (eta, m) with the flagged cells possibly modified, plus the set of
    actually modified cells.
    """
    idx = np.nonzero(troubled)[0] if troubled.dtype == bool else np.asarray(troubled)
    if len(idx) == 0:
        return eta, m, idx
    if disc.dim == 1:
        return _tvb_1d(disc, ws, eta, m, h_avg, idx, g)
    return _tvb_2d(disc, ws, eta, m, h_avg, idx, g, nu)


def _char_matrices(h_s, u_s, g, normal, ok):
    """Batched (R, R^-1) with identity fallback where ok is False or the
    transform would be ill-conditioned (near-dry cells with extreme u)."""
    ncomp = u_s.shape[-1] + 1
    speed = np.abs(u_s).max(axis=-1)
    ok = ok & np.isfinite(speed) & (np.sqrt(g * np.maximum(h_s, 0.0)) > 1e-6 * speed)
    h_safe = np.where(ok, h_s, 1.0)
    u_s = np.where(ok[..., None], u_s, 0.0)
    R, Ri = physics.characteristic_basis(
        h_safe, u_s, g, normal if u_s.shape[-1] == 2 else None
    )
    eye = np.eye(ncomp)
    R = np.where(ok[:, None, None], R, eye)
    Ri = np.where(ok[:, None, None], Ri, eye)
    return R, Ri


def _tvb_1d(disc, ws, eta, m, h_avg, idx, g):
    eta_avg = disc.cell_averages(eta)
    m_avg = disc.cell_averages(m)
    # slot order: identify left/right by outward normal sign
    right_slot = np.where(ws.normal[idx, 0, 0] > 0, 0, 1)
    nbrs, h_nb, u_nb = [], [], []
    state_h = np.zeros((len(idx), 2))
    state_m = np.zeros((len(idx), 2, 1))
    diffs = np.zeros((len(idx), 2, 2))  # (cell, fwd/bwd, comp)
    for which in range(2):  # 0 = right, 1 = left
        slots = right_slot if which == 0 else 1 - right_slot
        eta_n = np.empty(len(idx))
        m_n = np.empty((len(idx), 1))
        h_n = np.empty(len(idx))
        for l in (0, 1):
            sel = slots == l
            if not np.any(sel):
                continue
            e_sel = idx[sel]
            en, mn = ws.ghost_averages(l, eta_avg, m_avg)
            eta_n[sel], m_n[sel] = en[e_sel], mn[e_sel]
            T = ws.nbr[e_sel, l]
            h_n[sel] = np.where(T >= 0, h_avg[np.maximum(T, 0)], h_avg[e_sel])
        sgn = 1.0 if which == 0 else -1.0
        diffs[:, which, 0] = sgn * (eta_n - eta_avg[idx])
        diffs[:, which, 1] = sgn * (m_n[:, 0] - m_avg[idx, 0])
        state_h[:, which] = h_n
        state_m[:, which, 0] = m_n[:, 0]
    # deviation of the linear part at the right endpoint
    phi_r = disc.phi_edge_mid[1, 1]  # linear mode at the right end
    delta = np.stack(
        [eta[idx, 1] * phi_r, m[idx, 1, 0] * phi_r], axis=-1
    ) / disc.sqrtj[idx, None]

    h_s = state_h.mean(axis=1)
    ok = h_s > 0
    u_s = np.where(
        (state_h > 0), state_m[:, :, 0] / np.where(state_h > 0, state_h, 1.0), 0.0
    ).mean(axis=1)[:, None]
    R, Ri = _char_matrices(h_s, u_s, g, None, ok)

    w = np.einsum("eij,ej->ei", Ri, delta)
    wf = np.einsum("eij,ej->ei", Ri, diffs[:, 0])
    wb = np.einsum("eij,ej->ei", Ri, diffs[:, 1])
    what = _minmod(w, wf, wb)
    dhat = np.einsum("eij,ej->ei", R, what)

    scale = np.maximum(1.0, np.abs(delta).max(axis=1))
    changed = np.abs(dhat - delta).max(axis=1) > _CHANGE_TOL * scale
    ch = idx[changed]
    if len(ch):
        c1 = dhat[changed] * disc.sqrtj[ch, None] / phi_r
        eta[ch, 1] = c1[:, 0]
        m[ch, 1, 0] = c1[:, 1]
        eta[ch, 2:] = 0.0
        m[ch, 2:, 0] = 0.0
    return eta, m, ch


def _tvb_2d(disc, ws, eta, m, h_avg, idx, g, nu):
    eta_avg = disc.cell_averages(eta)
    m_avg = disc.cell_averages(m)
    nT = len(idx)
    pbar = np.concatenate([eta_avg[:, None], m_avg], axis=1)  # (nE, 3)

    # linear deviations at the three edge midpoints
    phi_lin = disc.phi_edge_mid[:, : ws.lsize]  # (3 midpoints, 3 linear modes)
    lin = np.concatenate([eta[:, :, None], m], axis=2)[idx, : ws.lsize]  # (nT,3,3c)
    vals = np.einsum("pi,eic->epc", phi_lin, lin) / disc.sqrtj[idx, None, None]
    delta = vals - pbar[idx][:, None, :]  # (nT, 3 mid, 3 comp)

    # neighbor differences and characteristic transforms per edge
    dbar = np.zeros_like(delta)
    nbr_diff = np.zeros((nT, 3, 3))
    h_nbr = np.zeros((nT, 3))
    for l in range(3):
        en, mn = ws.ghost_averages(l, eta_avg, m_avg)
        nbr_diff[:, l, 0] = en[idx] - eta_avg[idx]
        nbr_diff[:, l, 1:] = mn[idx] - m_avg[idx]
        T = ws.nbr[idx, l]
        h_nbr[:, l] = np.where(T >= 0, h_avg[np.maximum(T, 0)], h_avg[idx])
    for i in range(3):
        j1, j2 = ws.cs_pair[idx, i, 0], ws.cs_pair[idx, i, 1]
        a1, a2 = ws.cs_coef[idx, i, 0], ws.cs_coef[idx, i, 1]
        rows = np.arange(nT)
        dbar[:, i] = (
            a1[:, None] * nbr_diff[rows, j1] + a2[:, None] * nbr_diff[rows, j2]
        )

    dhat = np.empty_like(delta)
    for i in range(3):
        hK = h_avg[idx]
        hT = h_nbr[:, i]
        ok = (hK > 0) & (hT > 0)
        h_s = 0.5 * (hK + hT)
        uK = m_avg[idx] / np.where(hK > 0, hK, 1.0)[:, None]
        # ghost velocity equals the reflected/copied ghost discharge state
        uT = np.where(
            (ws.nbr[idx, i] >= 0)[:, None],
            m_avg[np.maximum(ws.nbr[idx, i], 0)]
            / np.where(hT > 0, hT, 1.0)[:, None],
            uK,
        )
        u_s = 0.5 * (uK + uT)
        n_i = ws.normal[idx, i]
        R, Ri = _char_matrices(h_s, u_s, g, n_i, ok)
        w = np.einsum("eij,ej->ei", Ri, delta[:, i])
        wb = np.einsum("eij,ej->ei", Ri, dbar[:, i])
        dhat[:, i] = np.einsum("eij,ej->ei", R, _minmod(w, nu * wb))

    # restore zero mean of the midpoint deviations per component
    pos = np.maximum(dhat, 0.0).sum(axis=1)
    neg = np.maximum(-dhat, 0.0).sum(axis=1)
    tp = np.where(pos > 0, np.minimum(1.0, neg / np.where(pos > 0, pos, 1.0)), 0.0)
    tm_ = np.where(neg > 0, np.minimum(1.0, pos / np.where(neg > 0, neg, 1.0)), 0.0)
    dhat = (
        tp[:, None, :] * np.maximum(dhat, 0.0)
        - tm_[:, None, :] * np.maximum(-dhat, 0.0)
    )

    scale = np.maximum(1.0, np.abs(delta).max(axis=(1, 2)))
    changed = np.abs(dhat - delta).max(axis=(1, 2)) > _CHANGE_TOL * scale
    ch = idx[changed]
    if len(ch):
        t = pbar[ch][:, None, :] + dhat[changed]  # target midpoint values
        Minv = np.linalg.inv(phi_lin)  # (3 modes x 3 midpoints)
        coef = np.einsum("ip,epc->eic", Minv, t) * disc.sqrtj[ch, None, None]
        coef[:, 0, :] = np.stack([eta[ch, 0], m[ch, 0, 0], m[ch, 0, 1]], axis=-1)
        eta[ch, :3] = coef[:, :, 0]
        m[ch, :3] = coef[:, :, 1:]
        eta[ch, 3:] = 0.0
        m[ch, 3:] = 0.0
    return eta, m, ch


def positivity_limit(disc, h, eps_avg=1e-12):
    """Linear scaling about the cell average enforcing h >= 0 on the control
    point set; raises PositivityError on averages below -eps_avg."""
    avg = disc.cell_averages(h)
    if np.any(avg < -eps_avg):
        e = int(np.argmin(avg))
        raise PositivityError(e, float(avg[e]))
    vals = disc.eval_at(h, disc.phi_pos)
    hmin = vals.min(axis=1)
    denom = avg - hmin
    theta = np.where(
        hmin < 0,
        np.where(
            denom > 0,
            np.minimum(1.0, np.maximum(avg, 0.0) / np.where(denom > 0, denom, 1.0)),
            1.0,
        ),
        1.0,
    )
    theta = np.where(avg <= 0, 0.0, theta)
    out = h * theta[:, None]
    out[:, 0] = h[:, 0]  # keep the average mode untouched
    return out, theta


def dry_cell_limit(disc, h, m, eps_d, h_max0):
    """Flatten cells with average height at or below eps_d * h_max0 to their
    cell averages (height and discharge)."""
    avg = disc.cell_averages(h)
    thresh = eps_d * h_max0
    dry = avg <= thresh if thresh > 0 else avg <= 0.0
    if np.any(dry):
        h = h.copy()
        m = m.copy()
        h[dry, 1:] = 0.0
        m[dry, 1:, :] = 0.0
    return h, m, np.nonzero(dry)[0]


def velocity_limit(disc, ws, u, v_max):
    """Cap extreme velocities: cells whose sampled |component| exceeds v_max
    are refilled with the mean of calm neighbors' cell averages, iterating
    until the troubled set empties.  Returns (u, n_limited_cells)."""
    vals = disc.eval_at(u, disc.phi_samples)  # (nE, ns, dim)
    total = 0
    u = u.copy()
    for c in range(u.shape[2]):
        troubled = np.abs(vals[:, :, c]).max(axis=1) > v_max
        if not np.any(troubled):
            continue
        total += int(np.count_nonzero(troubled))
        avg = disc.cell_averages(u[:, :, c])
        while np.any(troubled):
            updated = []
            new_vals = {}
            for e in np.nonzero(troubled)[0]:
                nb = ws.nbr[e]
                nb = nb[(nb >= 0)]
                calm = nb[~troubled[nb]]
                if len(calm):
                    new_vals[e] = float(avg[calm].mean())
                    updated.append(e)
            if not updated:
                warnings.warn(
                    "velocity limiter stalled: clamping troubled cells",
                    RuntimeWarning,
                )
                for e in np.nonzero(troubled)[0]:
                    val = np.sign(avg[e]) * min(abs(avg[e]), v_max)
                    u[e, :, c] = 0.0
                    u[e, 0, c] = val * disc.sqrtj[e] / disc.phi_centroid[0]
                break
            for e in updated:
                avg[e] = new_vals[e]
                u[e, :, c] = 0.0
                u[e, 0, c] = new_vals[e] * disc.sqrtj[e] / disc.phi_centroid[0]
                troubled[e] = False
    return u, total
