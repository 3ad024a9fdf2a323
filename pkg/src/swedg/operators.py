"""Semi-discrete DG operators for the shallow water system.

The solution is stored in an orthonormal modal basis normalized per element so
that the (unweighted) mass matrix is exactly the identity: the physical basis
on element K is phi_i(x) = phihat_i(Fk^{-1}(x)) / sqrt(J_K) with J_K the
affine Jacobian determinant.  All residuals returned here are therefore both
dual-space representers and coefficient increments.
"""

from dataclasses import dataclass, field

import numpy as np

from . import physics
from .basis import BasisSet, facet_rule, lattice_points, positivity_point_set, volume_rule
from . import fastpath
from .mesh import BOUNDARY, MeshTopology


class DiscretizationError(ValueError):
    pass


class NonSPDMassMatrixError(RuntimeError):
    """Height-weighted mass matrix lost positive definiteness."""

    def __init__(self, element):
        self.element = element
        super().__init__(f"height-weighted mass matrix on element {element} is not SPD")


class _TraceOp:
    """Evaluates element traces on facet quadrature points.

    Facets whose basis-trace matrices coincide (structured meshes have only a
    handful of distinct facet/element configurations) are grouped so the
    evaluation reduces to a few dense GEMMs.
    """

    def __init__(self, elems, B):
        self.elems = elems
        self.B = B  # (nF, nq, nb)
        nf, nq, nb = B.shape
        flat = np.round(B.reshape(nf, nq * nb), 12)
        _, inv = np.unique(flat, axis=0, return_inverse=True)
        ngroups = inv.max() + 1 if nf else 0
        if ngroups <= 64:
            self.groups = [
                (np.nonzero(inv == gi)[0], B[np.argmax(inv == gi)])
                for gi in range(ngroups)
            ]
        else:
            self.groups = None

    def trace(self, coeff):
        """coeff (nE, nb) -> values (nF, nq)."""
        nf, nq, _ = self.B.shape
        if self.groups is None:
            return np.einsum("fqi,fi->fq", self.B, coeff[self.elems])
        out = np.empty((nf, nq))
        for rows, mat in self.groups:
            out[rows] = coeff[self.elems[rows]] @ mat.T
        return out

    def project(self, z):
        """z (nF, nq) -> modal contributions (nF, nb): sum_q z B."""
        nf, nq, nb = self.B.shape
        if self.groups is None:
            return np.einsum("fq,fqi->fi", z, self.B)
        out = np.empty((nf, nb))
        for rows, mat in self.groups:
            out[rows] = z[rows] @ mat
        return out


@dataclass
class Discretization:
    """Mesh + degree + all tabulated quadrature/basis data."""

    mesh: MeshTopology
    degree: int
    quad_exactness: int | None = None
    fast: bool | None = None  # compiled 2D kernels; None = auto

    def __post_init__(self):
        mesh, k = self.mesh, self.degree
        dim = mesh.dim
        self.dim = dim
        if self.fast is None:
            self.fast = fastpath.AVAILABLE
        self.fast = bool(self.fast and fastpath.AVAILABLE)
        self.basis = BasisSet(k, dim)
        self.nb = self.basis.size
        ref_measure = 1.0 if dim == 1 else 0.5
        self.jac = mesh.elem_measure / ref_measure
        self.sqrtj = np.sqrt(self.jac)

        vol = volume_rule(k, dim, exactness=self.quad_exactness)
        self.wq = vol.weights
        self.nq = len(vol.weights)
        self.phi_vol = self.basis.values(vol.points)
        self.dphi_vol = self.basis.gradients(vol.points)
        # projection / weak-gradient GEMM tables
        self.proj_tab = self.wq[:, None] * self.phi_vol                    # (nq, nb)
        self.grad_tab = (self.dphi_vol * self.wq[:, None, None]).transpose(0, 2, 1)
        self.grad_tab = np.ascontiguousarray(self.grad_tab.reshape(self.nq * dim, self.nb))

        # element affine maps
        v = mesh.vertices[mesh.elem_vertices]
        self.origin = v[:, 0]
        if dim == 1:
            J = (v[:, 1] - v[:, 0])[:, :, None]
        else:
            J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        self.J = J
        self.Jinv = np.linalg.inv(J)  # maps physical to reference increments
        self.x_vol = self.origin[:, None, :] + np.einsum(
            "eds,qs->eqd", J, vol.points
        )

        # facet quadrature
        if dim == 1:
            fq_ref, fq_w = np.array([0.5]), np.array([1.0])
        else:
            fr = facet_rule(k)
            fq_ref, fq_w = fr.points[:, 0], fr.weights
        self.nqf = len(fq_w)
        xf = mesh.facet_points(fq_ref)  # (nF, nqf, dim)
        self.x_facet = xf
        self.wf = fq_w[None, :] * mesh.facet_measure[:, None]
        ep, em = mesh.facet_elems[:, 0], mesh.facet_elems[:, 1]
        self.facet_plus, self.facet_minus = ep, em
        bmask = mesh.boundary_mask
        self.interior = np.nonzero(~bmask)[0]
        self.boundary = np.nonzero(bmask)[0]
        self.tag_groups = {}
        for f in self.boundary:
            self.tag_groups.setdefault(mesh.facet_tag[f], []).append(f)
        self.tag_groups = {t: np.array(fs) for t, fs in self.tag_groups.items()}

        Bp = self._trace_basis(xf, ep)
        em_safe = np.where(bmask, ep, em)
        Bm = self._trace_basis(xf - mesh.facet_shift[:, None, :], em_safe)
        Bm[bmask] = 0.0
        self.trace_plus = _TraceOp(ep, Bp)
        self.trace_minus = _TraceOp(em_safe, Bm)

        # positivity / limiter sample tables (reference values; divide by
        # sqrt(J) for physical values)
        self.phi_pos = self.basis.values(positivity_point_set(k, dim))
        self.phi_centroid = self.basis.values(
            np.full((1, dim), 1.0 / (dim + 1.0))
        )[0]
        if dim == 1:
            samples = np.array([[0.0], [0.5], [1.0]])
        else:
            samples = np.array(
                [[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]], dtype=float
            )
        self.phi_samples = self.basis.values(samples)
        if dim == 2:
            mids = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
            self.phi_edge_mid = self.basis.values(mids)
        else:
            self.phi_edge_mid = self.basis.values(np.array([[0.0], [1.0]]))
        # cell average of a field = coeff[:, 0] * avg_factor
        self.avg_factor = self.phi_centroid[0] / self.sqrtj

    def _trace_basis(self, pts, elems):
        """Basis values of the given elements at physical points (nF, nq, dim),
        including the 1/sqrt(J) normalization."""
        rel = pts - self.origin[elems][:, None, :]
        ref = np.einsum("fsd,fqd->fqs", self.Jinv[elems], rel)
        nf, nq, _ = pts.shape
        vals = self.basis.values(ref.reshape(nf * nq, self.dim))
        return vals.reshape(nf, nq, self.nb) / self.sqrtj[elems][:, None, None]

    # -- field evaluation ----------------------------------------------------

    def eval_volume(self, coeff):
        """Values at the volume quadrature points; (nE, nq) per component."""
        if coeff.ndim == 2:
            return (coeff @ self.phi_vol.T) / self.sqrtj[:, None]
        return np.stack(
            [self.eval_volume(coeff[:, :, c]) for c in range(coeff.shape[2])], axis=-1
        )

    def eval_gradient(self, coeff):
        """Physical gradients at volume points: (nE, nq, dim) per component."""
        if coeff.ndim == 3:
            return np.stack(
                [self.eval_gradient(coeff[:, :, c]) for c in range(coeff.shape[2])],
                axis=-1,
            )
        ref = np.stack(
            [coeff @ self.dphi_vol[:, :, d].T for d in range(self.dim)], axis=-1
        )
        out = np.einsum("esd,eqs->eqd", self.Jinv, ref)
        return out / self.sqrtj[:, None, None]

    def eval_at(self, coeff, table):
        """Evaluate at tabulated reference points; table = basis.values(pts)."""
        if coeff.ndim == 3:
            return np.stack(
                [self.eval_at(coeff[:, :, c], table) for c in range(coeff.shape[2])],
                axis=-1,
            )
        return (coeff @ table.T) / self.sqrtj[:, None]

    def project_volume(self, vals):
        """Modal representer of pointwise volume data: R[e,i] = int f phi_i."""
        if vals.ndim == 3:
            return np.stack(
                [self.project_volume(vals[:, :, c]) for c in range(vals.shape[2])],
                axis=-1,
            )
        return self.sqrtj[:, None] * (vals @ self.proj_tab)

    def project_weak_gradient(self, z):
        """R[e,i] = int z . grad(phi_i) for pointwise vector data z (nE,nq,dim)."""
        zr = np.einsum("esd,eqd->eqs", self.Jinv, z) * self.jac[:, None, None]
        out = zr.reshape(len(z), self.nq * self.dim) @ self.grad_tab
        return out / self.sqrtj[:, None]

    def traces(self, coeff):
        """(plus, minus) traces at facet quadrature points; boundary minus
        traces are zero-filled (ghosts are the boundary handler's job)."""
        if coeff.ndim == 3:
            ps, ms = zip(*(self.traces(coeff[:, :, c]) for c in range(coeff.shape[2])))
            return np.stack(ps, axis=-1), np.stack(ms, axis=-1)
        return self.trace_plus.trace(coeff), self.trace_minus.trace(coeff)

    def scatter_facets(self, contrib_plus, contrib_minus, out):
        """Accumulate per-facet-side modal contributions into elements."""
        ef = self.mesh.elem_facets
        isplus = self.mesh.elem_facet_sign > 0
        for l in range(ef.shape[1]):
            rows = ef[:, l]
            sel = isplus[:, l]
            pick = np.where(
                sel[(...,) + (None,) * (out.ndim - 1)],
                contrib_plus[rows],
                contrib_minus[rows],
            )
            out += pick
        return out

    # -- reductions ----------------------------------------------------------

    def cell_averages(self, coeff):
        if coeff.ndim == 3:
            return coeff[:, 0, :] * self.avg_factor[:, None]
        return coeff[:, 0] * self.avg_factor

    def integrate(self, vals):
        """Integral over the domain of pointwise volume data."""
        return float(np.sum(self.jac[:, None] * self.wq[None, :] * vals))

    def l2_norm(self, vals):
        return np.sqrt(self.integrate(vals**2))

    def project_function(self, func, components=1):
        """Elementwise L2 projection of a callable f(x) (x shape (..., dim))."""
        vals = func(self.x_vol)
        vals = np.asarray(vals, dtype=float)
        if components == 1 and vals.ndim == 2:
            return self.project_volume(vals)
        return self.project_volume(vals.reshape(len(self.jac), self.nq, components))

    def interpolate_continuous(self, func):
        """Continuous piecewise-P_k nodal interpolant of a scalar function
        (equispaced lattice; traces of adjacent elements coincide)."""
        nodes = lattice_points(self.degree, self.dim)
        if len(nodes) != self.nb:
            raise DiscretizationError("lattice is not unisolvent for this degree")
        xn = self.origin[:, None, :] + np.einsum("eds,qs->eqd", self.J, nodes)
        vals = func(xn)
        V = self.basis.values(nodes)
        coeff = np.linalg.solve(V, np.asarray(vals, dtype=float).T).T
        return coeff * self.sqrtj[:, None]


@dataclass
class DGField:
    """Modal coefficient table for a scalar or vector quantity."""

    disc: Discretization
    coeff: np.ndarray  # (nE, nb) or (nE, nb, c)

    @classmethod
    def zeros(cls, disc, components=1):
        shape = (disc.mesh.n_elements, disc.nb)
        if components > 1:
            shape += (components,)
        return cls(disc, np.zeros(shape))

    @property
    def components(self):
        return 1 if self.coeff.ndim == 2 else self.coeff.shape[2]

    def averages(self):
        return self.disc.cell_averages(self.coeff)

    def copy(self):
        return DGField(self.disc, self.coeff.copy())


@dataclass
class BottomData:
    """Static bottom-topography tabulations shared by all residual calls."""

    coeff: np.ndarray
    vol: np.ndarray        # (nE, nq)
    grad: np.ndarray       # (nE, nq, dim)
    trace_p: np.ndarray    # (nF, nqf)
    trace_m: np.ndarray
    continuous: bool

    @classmethod
    def build(cls, disc, b_func, continuous):
        if continuous and disc.degree >= 1:
            coeff = disc.interpolate_continuous(b_func)
        else:
            coeff = disc.project_function(b_func)
            continuous = False
        vol = disc.eval_volume(coeff)
        grad = disc.eval_gradient(coeff)
        tp, tm = disc.traces(coeff)
        bmask = disc.mesh.boundary_mask
        tm[bmask] = tp[bmask]
        return cls(coeff, vol, grad, tp, tm, continuous)

    @classmethod
    def flat(cls, disc):
        return cls.build(disc, lambda x: np.zeros(x.shape[:-1]), True)


@dataclass
class SimState:
    """Water height, velocity and discharge fields plus fixed bottom data."""

    disc: Discretization
    h: np.ndarray          # (nE, nb)
    u: np.ndarray          # (nE, nb, dim)
    m: np.ndarray          # (nE, nb, dim)
    bottom: BottomData
    g: float
    t: float = 0.0

    def copy(self):
        return SimState(
            self.disc, self.h.copy(), self.u.copy(), self.m.copy(),
            self.bottom, self.g, self.t,
        )


@dataclass
class FacetState:
    """Traces of (h, u, b) on all facet quadrature points, ghosts applied."""

    h_p: np.ndarray
    h_m: np.ndarray
    u_p: np.ndarray
    u_m: np.ndarray
    b_p: np.ndarray
    b_m: np.ndarray
    alpha: np.ndarray = field(init=False, default=None)


def facet_state(disc, h, u, bottom, bc):
    hp, hm = disc.traces(h)
    up, um = disc.traces(u)
    bp, bm = bottom.trace_p, bottom.trace_m
    if len(disc.boundary) and bc is None:
        raise DiscretizationError("mesh has boundary facets but no boundary handler")
    for tag, rows in disc.tag_groups.items():
        n = disc.mesh.facet_normal[rows][:, None, :]
        gh, gu, gb = bc.ghost(tag, hp[rows], up[rows], bp[rows], n)
        hm[rows], um[rows], bm[rows] = gh, gu, gb
    return FacetState(hp, hm, up, um, bp, bm)


@dataclass
class Residuals:
    A: np.ndarray             # (nE, nb)
    BC: np.ndarray            # (nE, nb, dim): B_h + C_h
    Amix: np.ndarray          # (nE, nb, dim): A_h tested with u_d phi_i
    mass_flux: np.ndarray     # (nF, nqf) numerical mass flux values
    alpha: np.ndarray         # (nF, nqf) wave speed estimates


def assemble_residuals(disc, h, u, bottom, g, bc, reconstruct=False, need_mix=True):
    """Evaluate the spatial operators for the current (h, u) state.

    Returns modal residual tables: the mass operator A, the combined momentum
    operators B + C, and (with ``need_mix``) the A-with-velocity-weighted
    test-function table used by the skew-symmetric momentum update.
    """
    mesh = disc.mesh
    dim = disc.dim
    nE, nb = h.shape

    # volume contributions -----------------------------------------------
    hv = disc.eval_volume(h)                     # (nE, nq)
    uv = disc.eval_volume(u)                     # (nE, nq, dim)
    ghv = disc.eval_gradient(h)                  # (nE, nq, dim)
    guv = disc.eval_gradient(u) if need_mix else None  # (nE, nq, dim, dim)

    hu = hv[..., None] * uv
    A = -disc.project_weak_gradient(hu)

    BC = np.empty((nE, nb, dim))
    Amix = np.empty((nE, nb, dim)) if need_mix else None
    surf = g * hv[..., None] * (ghv + bottom.grad)   # g h grad(h+b)
    for d in range(dim):
        z = hu * uv[:, :, d : d + 1]             # h u_d u
        grad_part = disc.project_weak_gradient(z)
        BC[:, :, d] = -grad_part + disc.project_volume(surf[:, :, d])
        if need_mix:
            # A((h,u), u_d phi) = -int h u . grad(u_d) phi - int h u_d u . grad(phi)
            adv = np.einsum("eqd,eqd->eq", hu, guv[:, :, :, d])
            Amix[:, :, d] = -disc.project_volume(adv) - grad_part

    # facet contributions --------------------------------------------------
    fs = facet_state(disc, h, u, bottom, bc)
    n = mesh.facet_normal[:, None, :]
    Fm = physics.mass_flux(
        fs.h_p, fs.h_m, fs.u_p, fs.u_m, fs.b_p, fs.b_m, n, g, reconstruct
    )
    F2 = physics.momentum_flux(
        fs.h_p, fs.h_m, fs.u_p, fs.u_m, fs.b_p, fs.b_m, n, g, reconstruct
    )
    fs.alpha = physics.max_wave_speed(fs.h_p, fs.h_m, fs.u_p, fs.u_m, n, g)

    wFm = disc.wf * Fm                           # quadrature-weighted
    # A facet: sum_F int Fhat [[phi]]; jump = plus - minus
    a_p = disc.trace_plus.project(wFm)
    a_m = -disc.trace_minus.project(wFm)
    disc.scatter_facets(a_p, a_m, A)

    # C facet: -int g [[h+b]] {h v}.n ; same-side h and no jump sign on v
    jump_eta = (fs.h_p + fs.b_p) - (fs.h_m + fs.b_m)
    cp = -0.5 * g * disc.wf * jump_eta * fs.h_p
    cm = -0.5 * g * disc.wf * jump_eta * fs.h_m
    bc_p = np.empty((len(fs.h_p), nb, dim))
    bc_m = np.empty_like(bc_p)
    am_p = np.empty_like(bc_p) if need_mix else None
    am_m = np.empty_like(bc_p) if need_mix else None
    for d in range(dim):
        nd = n[:, :, d]
        wF2 = disc.wf * F2[:, :, d]
        bc_p[:, :, d] = disc.trace_plus.project(wF2 + cp * nd)
        bc_m[:, :, d] = -disc.trace_minus.project(wF2) + disc.trace_minus.project(cm * nd)
        if need_mix:
            am_p[:, :, d] = disc.trace_plus.project(wFm * fs.u_p[:, :, d])
            am_m[:, :, d] = -disc.trace_minus.project(wFm * fs.u_m[:, :, d])
    disc.scatter_facets(bc_p, bc_m, BC)
    if need_mix:
        disc.scatter_facets(am_p, am_m, Amix)

    return Residuals(A, BC, Amix, Fm, fs.alpha)


def facet_max_speeds(disc, h, u, bottom, g, bc):
    """Per-element maximum facet wave speed, for time step selection."""
    if disc.fast:
        amax = fastpath.facet_alpha(disc, h, u, g, bc)
    else:
        fs = facet_state(disc, h, u, bottom, bc)
        n = disc.mesh.facet_normal[:, None, :]
        alpha = physics.max_wave_speed(fs.h_p, fs.h_m, fs.u_p, fs.u_m, n, g)
        amax = alpha.max(axis=1)
    out = np.zeros(disc.mesh.n_elements)
    ef = disc.mesh.elem_facets
    for l in range(ef.shape[1]):
        out = np.maximum(out, amax[ef[:, l]])
    return out


def velocity_update(disc, h, m):
    """Recover velocity u from (h, m): solve int h u.w = int m.w per element.

    The height-weighted mass matrix is assembled with the volume rule and
    factorized by Cholesky; a failure indicates loss of positivity and is
    reported with the offending element.
    """
    if disc.fast:
        u, bad = fastpath.velocity_update(disc, h, m)
        if bad >= 0:
            raise NonSPDMassMatrixError(bad)
        return u
    hv = disc.eval_volume(h)                                # (nE, nq)
    w = disc.wq[None, :] * hv
    W = np.einsum("eq,qi,qj->eij", w, disc.phi_vol, disc.phi_vol)
    # the element Jacobian scalings on the two sides cancel, and the right
    # hand side reduces to the discharge coefficients (orthonormal basis)
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise NonSPDMassMatrixError(_first_non_spd(W)) from None
    return np.linalg.solve(W, m)


def _first_non_spd(W):
    for e in range(len(W)):
        try:
            np.linalg.cholesky(W[e])
        except np.linalg.LinAlgError:
            return e
    return -1


# -- entropy diagnostics ------------------------------------------------------


def total_entropy(disc, h, u, bottom, g):
    hv = disc.eval_volume(h)
    uv = disc.eval_volume(u)
    return disc.integrate(physics.entropy_density(hv, uv, bottom.vol, g))


def total_mass(disc, h):
    return disc.integrate(disc.eval_volume(h))


def total_momentum(disc, m):
    mv = disc.eval_volume(m)
    return disc.jac @ (disc.wq @ mv)


def entropy_rate(disc, h, u, m, bottom, g, bc, reconstruct=False):
    """Instantaneous dE/dt of the semi-discrete scheme (chain rule through
    the h and m evolution with the skew-symmetric kinetic correction)."""
    res = assemble_residuals(disc, h, u, bottom, g, bc, reconstruct)
    h_t = -res.A
    m_t = -res.BC + 0.5 * res.Amix
    ht_vals = disc.eval_volume(h_t)
    uv = disc.eval_volume(u)
    ke = 0.5 * np.einsum("eqd,eqd->eq", uv, uv)
    m_t += 0.5 * disc.project_volume(ht_vals[..., None] * uv)
    # dE/dt = <h_t, g(h+b)> - int h_t |u|^2/2 + <m_t, u>
    rate = g * float(np.sum(h_t * (h + bottom.coeff)))
    rate -= disc.integrate(ht_vals * ke)
    rate += float(np.sum(m_t * u))
    return rate


def entropy_dissipation(disc, h, u, bottom, g, bc):
    """Facet dissipation functional: the analytic value of dE/dt for the
    unreconstructed scheme."""
    fs = facet_state(disc, h, u, bottom, bc)
    n = disc.mesh.facet_normal[:, None, :]
    alpha = physics.max_wave_speed(fs.h_p, fs.h_m, fs.u_p, fs.u_m, n, g)
    jump_eta = (fs.h_p + fs.b_p) - (fs.h_m + fs.b_m)
    mean_eta = 0.5 * ((fs.h_p + fs.b_p) + (fs.h_m + fs.b_m))
    ju = fs.u_p - fs.u_m
    ju2 = np.einsum("fqd,fqd->fq", ju, ju)
    integ = 0.5 * alpha * (g * jump_eta**2 + mean_eta * ju2)
    return -float(np.sum(disc.wf * integ))
