"""Reference-element bases and quadrature rules.

The 1D reference element is the interval [0, 1]; the 2D reference element is
the triangle with vertices (0,0), (1,0), (0,1).  All bases are orthonormal
modal bases (scaled Legendre in 1D, Dubiner-type on the triangle), ordered by
total degree so the leading entries span the piecewise-linear subspace.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi

MAX_DEGREE = 4


class UnsupportedDegreeError(ValueError):
    pass


def _check_degree(k):
    if not (0 <= k <= MAX_DEGREE):
        raise UnsupportedDegreeError(f"polynomial degree {k} not supported (0..{MAX_DEGREE})")


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature points and weights on a reference element."""

    points: np.ndarray   # (n, dim)
    weights: np.ndarray  # (n,)
    exactness: int       # exact for all polynomials up to this total degree


def _gauss01(n):
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def volume_rule(k, dim, exactness=None):
    """Volume quadrature for degree-k spaces, exact to degree 2k+1 by default.

    The triangle rule is a collapsed (Duffy) tensor product of Gauss-Legendre
    and Gauss-Jacobi(1,0) rules; all points are interior and weights positive.
    An explicit ``exactness`` overrides the default target degree.
    """
    _check_degree(k)
    deg = 2 * k + 1 if exactness is None else exactness
    n = deg // 2 + 1
    if dim == 1:
        x, w = _gauss01(n)
        return QuadratureRule(x[:, None], w, 2 * n - 1)
    if dim == 2:
        xa, wa = np.polynomial.legendre.leggauss(n)
        xb, wb = roots_jacobi(n, 1.0, 0.0)
        a, b = np.meshgrid(xa, xb, indexing="ij")
        x = 0.25 * (1.0 + a) * (1.0 - b)
        y = 0.5 * (1.0 + b)
        w = np.outer(wa, wb) / 8.0
        return QuadratureRule(
            np.column_stack([x.ravel(), y.ravel()]), w.ravel(), 2 * n - 1
        )
    raise ValueError(f"unsupported dimension {dim}")


def facet_rule(k):
    """(k+1)-point Gauss rule on the reference facet [0, 1]."""
    _check_degree(k)
    x, w = _gauss01(k + 1)
    return QuadratureRule(x[:, None], w, 2 * k + 1)


def lobatto_w1(k):
    """First quadrature weight of the ceil((k+3)/2)-point Gauss-Lobatto rule
    on [-1/2, 1/2], as required by the positivity CFL bound."""
    _check_degree(k)
    n = -(-(k + 3) // 2)
    # endpoint weight of the n-point Lobatto rule on [-1,1] is 2/(n(n-1));
    # rescaling to a length-1 interval halves it.
    return 1.0 / (n * (n - 1))


def positivity_point_set(k, dim):
    """Reference points where water-height non-negativity is enforced.

    Union of the (k+1)-point Gauss points on each facet and all volume
    quadrature points (the latter guard the height-weighted mass matrix).
    """
    _check_degree(k)
    vol = volume_rule(k, dim).points
    if dim == 1:
        pts = np.vstack([[[0.0]], [[1.0]], vol])
    else:
        s = facet_rule(k).points[:, 0]
        e0 = np.column_stack([s, np.zeros_like(s)])            # (0,0)-(1,0)
        e1 = np.column_stack([1.0 - s, s])                     # (1,0)-(0,1)
        e2 = np.column_stack([np.zeros_like(s), 1.0 - s])      # (0,1)-(0,0)
        pts = np.vstack([e0, e1, e2, vol])
    _, idx = np.unique(np.round(pts, 12), axis=0, return_index=True)
    return pts[np.sort(idx)]


def lattice_points(k, dim):
    """Equispaced interpolation lattice of degree k (incl. boundary nodes).

    Used to build continuous nodal interpolants; k=0 degenerates to the
    element centroid.
    """
    _check_degree(k)
    if dim == 1:
        if k == 0:
            return np.array([[0.5]])
        return np.linspace(0.0, 1.0, k + 1)[:, None]
    if k == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    pts = [
        (i / k, j / k)
        for j in range(k + 1)
        for i in range(k + 1 - j)
    ]
    return np.array(pts)


def _legendre_val_der(m, x):
    v = eval_jacobi(m, 0.0, 0.0, x)
    d = 0.5 * (m + 1) * eval_jacobi(m - 1, 1.0, 1.0, x) if m >= 1 else np.zeros_like(x)
    return v, d


def _jacobi_val_der(n, alpha, x):
    v = eval_jacobi(n, alpha, 0.0, x)
    d = 0.5 * (n + alpha + 1) * eval_jacobi(n - 1, alpha + 1.0, 1.0, x) if n >= 1 else np.zeros_like(x)
    return v, d


class BasisSet:
    """Orthonormal modal basis on the reference element.

    ``values(points)`` and ``gradients(points)`` tabulate the basis; indexing
    is by total degree so ``linear_size`` leading functions form the P1 part.
    """

    def __init__(self, degree, dim):
        _check_degree(degree)
        if dim not in (1, 2):
            raise ValueError(f"unsupported dimension {dim}")
        self.degree = degree
        self.dim = dim
        if dim == 1:
            self.size = degree + 1
            self.orders = [(i,) for i in range(degree + 1)]
        else:
            self.size = (degree + 1) * (degree + 2) // 2
            self.orders = [
                (m, d - m) for d in range(degree + 1) for m in range(d, -1, -1)
            ]
        self.linear_size = min(self.size, dim + 1)

    def values(self, points):
        pts = np.atleast_2d(points)
        if self.dim == 1:
            x = 2.0 * pts[:, 0] - 1.0
            out = np.empty((len(pts), self.size))
            for i in range(self.size):
                out[:, i] = np.sqrt(2 * i + 1.0) * eval_jacobi(i, 0.0, 0.0, x)
            return out
        return self._tri_values(pts)

    def gradients(self, points):
        pts = np.atleast_2d(points)
        if self.dim == 1:
            x = 2.0 * pts[:, 0] - 1.0
            out = np.empty((len(pts), self.size, 1))
            for i in range(self.size):
                _, d = _legendre_val_der(i, x)
                out[:, i, 0] = 2.0 * np.sqrt(2 * i + 1.0) * d
            return out
        return self._tri_gradients(pts)

    # -- Dubiner basis on the reference triangle ----------------------------
    #
    # phi_{mn}(x,y) = c_{mn} P_m(eta1) (1-y)^m P_n^{(2m+1,0)}(eta2)
    # with eta1 = 2x/(1-y) - 1, eta2 = 2y - 1 and
    # c_{mn} = sqrt(2 (2m+1) (m+n+1)), orthonormal w.r.t. the area measure.

    @staticmethod
    def _collapsed(pts):
        x, y = pts[:, 0], pts[:, 1]
        g = 1.0 - y
        safe = g > 1e-12
        eta1 = np.where(safe, 2.0 * x / np.where(safe, g, 1.0) - 1.0, -1.0)
        eta2 = 2.0 * y - 1.0
        return x, y, g, eta1, eta2, safe

    def _tri_values(self, pts):
        x, y, g, eta1, eta2, safe = self._collapsed(pts)
        out = np.empty((len(pts), self.size))
        for idx, (m, n) in enumerate(self.orders):
            c = np.sqrt(2.0 * (2 * m + 1) * (m + n + 1))
            pm = eval_jacobi(m, 0.0, 0.0, eta1)
            pn = eval_jacobi(n, 2 * m + 1.0, 0.0, eta2)
            v = c * pm * g**m * pn
            if not safe.all():
                # apex (0,1): the (1-y)^m factor kills all m>=1 modes and
                # P_n^{(1,0)}(1) = n+1 for the m=0 modes.
                lim = c * (n + 1.0) if m == 0 else 0.0
                v = np.where(safe, v, lim)
            out[:, idx] = v
        return out

    def _tri_gradients(self, pts):
        x, y, g, eta1, eta2, safe = self._collapsed(pts)
        if not safe.all():
            raise ValueError("triangle basis gradients are not tabulated at the apex y=1")
        out = np.empty((len(pts), self.size, 2))
        for idx, (m, n) in enumerate(self.orders):
            c = np.sqrt(2.0 * (2 * m + 1) * (m + n + 1))
            pm, dpm = _legendre_val_der(m, eta1)
            pn, dpn = _jacobi_val_der(n, 2 * m + 1.0, eta2)
            gm = g**m
            gm1 = g ** (m - 1) if m >= 1 else np.zeros_like(g)
            # d(eta1)/dx = 2/g, d(eta1)/dy = 2x/g^2, d(eta2)/dy = 2
            out[:, idx, 0] = c * (dpm * 2.0 * gm1 * pn if m >= 1 else dpm * (2.0 / g) * pn)
            out[:, idx, 1] = c * (
                dpm * (2.0 * x / g**2) * gm * pn
                - (m * gm1 * pm * pn if m >= 1 else 0.0)
                + pm * gm * dpn * 2.0
            )
        return out
