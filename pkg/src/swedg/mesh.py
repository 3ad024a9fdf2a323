"""Interval and conforming triangular meshes with facet connectivity.

A facet stores its two adjacent elements as (plus, minus) where the plus side
is the lower element id; the unit normal points from plus to minus.  Boundary
facets have minus = -1 and carry a tag ('wall' or 'outflow').  Periodic pairs
are merged into single interior facets with a coordinate ``shift`` such that
minus-side trace points are obtained as (plus-side points - shift).
"""

from dataclasses import dataclass, field

import numpy as np

BOUNDARY = -1


class MeshError(ValueError):
    pass


@dataclass
class MeshTopology:
    dim: int
    vertices: np.ndarray        # (nV, dim)
    elem_vertices: np.ndarray   # (nE, dim+1)
    facet_vertices: np.ndarray  # (nF, dim)  endpoint ids (1D: one vertex id)
    facet_elems: np.ndarray     # (nF, 2), minus = -1 on the boundary
    facet_normal: np.ndarray    # (nF, dim), unit, plus -> minus
    facet_measure: np.ndarray   # (nF,)
    facet_shift: np.ndarray     # (nF, dim), zero except merged periodic pairs
    facet_tag: list             # str for boundary facets, None otherwise
    elem_measure: np.ndarray = field(init=False)
    elem_perimeter: np.ndarray = field(init=False)
    elem_tau: np.ndarray = field(init=False)
    elem_centroid: np.ndarray = field(init=False)
    elem_facets: np.ndarray = field(init=False)      # (nE, dim+1)
    elem_facet_sign: np.ndarray = field(init=False)  # +1 if element is plus side
    structured: dict | None = None

    def __post_init__(self):
        self._compute_geometry()
        self._compute_incidence()

    @property
    def n_elements(self):
        return len(self.elem_vertices)

    @property
    def n_facets(self):
        return len(self.facet_elems)

    @property
    def boundary_mask(self):
        return self.facet_elems[:, 1] == BOUNDARY

    def _compute_geometry(self):
        v = self.vertices[self.elem_vertices]
        if self.dim == 1:
            self.elem_measure = np.abs(v[:, 1, 0] - v[:, 0, 0])
            self.elem_perimeter = np.full(self.n_elements, 2.0)
            self.elem_tau = self.elem_measure.copy()
        else:
            d1 = v[:, 1] - v[:, 0]
            d2 = v[:, 2] - v[:, 0]
            self.elem_measure = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
            if np.any(self.elem_measure <= 0):
                bad = int(np.argmax(self.elem_measure <= 0))
                raise MeshError(f"element {bad} has non-positive area")
            per = np.zeros(self.n_elements)
            for i in range(3):
                per += np.linalg.norm(v[:, (i + 1) % 3] - v[:, i], axis=1)
            self.elem_perimeter = per
            self.elem_tau = 2.0 * self.elem_measure / per
        self.elem_centroid = v.mean(axis=1)

    def _compute_incidence(self):
        nf = self.dim + 1
        self.elem_facets = np.full((self.n_elements, nf), -1, dtype=np.int64)
        self.elem_facet_sign = np.zeros((self.n_elements, nf))
        fill = np.zeros(self.n_elements, dtype=np.int64)
        for f, (ep, em) in enumerate(self.facet_elems):
            self.elem_facets[ep, fill[ep]] = f
            self.elem_facet_sign[ep, fill[ep]] = 1.0
            fill[ep] += 1
            if em != BOUNDARY:
                self.elem_facets[em, fill[em]] = f
                self.elem_facet_sign[em, fill[em]] = -1.0
                fill[em] += 1
        if np.any(fill != nf):
            bad = int(np.argmax(fill != nf))
            raise MeshError(f"element {bad} touches {fill[bad]} facets, expected {nf}")

    def facet_points(self, ref_points):
        """Physical coordinates of facet quadrature points, parametrized from
        the plus side; shape (nF, nq, dim)."""
        s = np.asarray(ref_points).reshape(-1)
        if self.dim == 1:
            return self.vertices[self.facet_vertices[:, 0]][:, None, :].repeat(len(s), axis=1)
        a = self.vertices[self.facet_vertices[:, 0]]
        b = self.vertices[self.facet_vertices[:, 1]]
        return a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]

    def neighbor_lists(self):
        """Edge-neighbor element ids per element (-1 where the facet is a
        physical boundary) and the centroid offset to each neighbor."""
        nb = np.full_like(self.elem_facets, -1)
        offs = np.zeros(self.elem_facets.shape + (self.dim,))
        for e in range(self.n_elements):
            for l, f in enumerate(self.elem_facets[e]):
                ep, em = self.facet_elems[f]
                if em == BOUNDARY:
                    continue
                other = em if ep == e else ep
                nb[e, l] = other
                d = self.elem_centroid[other] - self.elem_centroid[e]
                if ep == e:
                    d += self.facet_shift[f]
                else:
                    d -= self.facet_shift[f]
                offs[e, l] = d
        return nb, offs


def build_interval_mesh(a, b, n, periodic=False, tags=("wall", "wall")):
    """Uniform mesh of [a, b] with n cells."""
    if n < 1:
        raise MeshError(f"need at least one cell, got {n}")
    if not a < b:
        raise MeshError(f"degenerate interval [{a}, {b}]")
    x = np.linspace(a, b, n + 1)
    verts = x[:, None]
    elems = np.column_stack([np.arange(n), np.arange(n) + 1])
    f_verts, f_elems, f_norm, f_shift, f_tag = [], [], [], [], []
    for i in range(1, n):
        f_verts.append([i])
        f_elems.append([i - 1, i])
        f_norm.append([1.0])
        f_shift.append([0.0])
        f_tag.append(None)
    if periodic:
        if n == 1:
            raise MeshError("periodic interval mesh needs at least two cells")
        # merged facet lives at x=a on the plus side (element 0)
        f_verts.append([0])
        f_elems.append([0, n - 1])
        f_norm.append([-1.0])
        f_shift.append([a - b])
        f_tag.append(None)
    else:
        f_verts.append([0])
        f_elems.append([0, BOUNDARY])
        f_norm.append([-1.0])
        f_shift.append([0.0])
        f_tag.append(tags[0])
        f_verts.append([n])
        f_elems.append([n - 1, BOUNDARY])
        f_norm.append([1.0])
        f_shift.append([0.0])
        f_tag.append(tags[1])
    mesh = MeshTopology(
        dim=1,
        vertices=verts,
        elem_vertices=elems,
        facet_vertices=np.array(f_verts, dtype=np.int64),
        facet_elems=np.array(f_elems, dtype=np.int64),
        facet_normal=np.array(f_norm),
        facet_measure=np.ones(len(f_verts)),
        facet_shift=np.array(f_shift),
        facet_tag=f_tag,
    )
    mesh.structured = {"kind": "interval", "a": float(a), "b": float(b), "n": int(n)}
    return mesh


def _assemble_2d(verts, tris, boundary_tags, periodic_pairs):
    """Shared connectivity construction for structured and loaded meshes.

    ``boundary_tags`` maps a sorted vertex pair to a tag string;
    ``periodic_pairs`` is a list of (edge_a, edge_b) sorted-pair tuples to be
    merged into interior facets.
    """
    tris = np.asarray(tris, dtype=np.int64)
    # repair clockwise triangles
    v = verts[tris]
    area2 = (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (
        v[:, 1, 1] - v[:, 0, 1]
    ) * (v[:, 2, 0] - v[:, 0, 0])
    if np.any(area2 == 0):
        raise MeshError("degenerate (zero-area) triangle")
    flip = area2 < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    edge_elems = {}
    for e, tri in enumerate(tris):
        for i in range(3):
            key = tuple(sorted((tri[i], tri[(i + 1) % 3])))
            edge_elems.setdefault(key, []).append(e)
    for key, els in edge_elems.items():
        if len(els) > 2:
            raise MeshError(f"edge {key} shared by {len(els)} elements")

    merged = {}
    for ea, eb in periodic_pairs:
        if len(edge_elems[ea]) != 1 or len(edge_elems[eb]) != 1:
            raise MeshError("periodic tag on an interior edge")
        merged[ea] = eb
        merged[eb] = ea

    centroids = verts[tris].mean(axis=1)
    f_verts, f_elems, f_norm, f_meas, f_shift, f_tag = [], [], [], [], [], []
    done = set()
    for key, els in sorted(edge_elems.items()):
        if key in done:
            continue
        done.add(key)
        if len(els) == 2:
            ep, em = min(els), max(els)
            shift = np.zeros(2)
            kp = key
        elif key in merged:
            other = merged[key]
            done.add(other)
            e1, e2 = edge_elems[key][0], edge_elems[other][0]
            if e1 <= e2:
                ep, em, kp, km = e1, e2, key, other
            else:
                ep, em, kp, km = e2, e1, other, key
            shift = 0.5 * (verts[kp[0]] + verts[kp[1]]) - 0.5 * (verts[km[0]] + verts[km[1]])
        else:
            ep, em, kp = els[0], BOUNDARY, key
            shift = np.zeros(2)
        a, b = verts[kp[0]], verts[kp[1]]
        t = b - a
        length = np.hypot(*t)
        nrm = np.array([t[1], -t[0]]) / length
        mid = 0.5 * (a + b)
        if np.dot(nrm, mid - centroids[ep]) < 0:
            nrm = -nrm
        f_verts.append(list(kp))
        f_elems.append([ep, em])
        f_norm.append(nrm)
        f_meas.append(length)
        f_shift.append(shift)
        f_tag.append(boundary_tags.get(key) if em == BOUNDARY else None)
    return MeshTopology(
        dim=2,
        vertices=verts,
        elem_vertices=tris,
        facet_vertices=np.array(f_verts, dtype=np.int64),
        facet_elems=np.array(f_elems, dtype=np.int64),
        facet_normal=np.array(f_norm),
        facet_measure=np.array(f_meas),
        facet_shift=np.array(f_shift),
        facet_tag=f_tag,
    )


def build_structured_triangular(
    nx,
    ny,
    bounds=((0.0, 1.0), (0.0, 1.0)),
    periodic=(False, False),
    tags=None,
):
    """Structured mesh of a rectangle: nx*ny cells each split along the
    lower-left/upper-right diagonal into two triangles.

    ``tags`` maps sides 'left'/'right'/'bottom'/'top' to boundary tags
    (default 'wall'); periodic directions override the respective sides.
    """
    if nx < 1 or ny < 1:
        raise MeshError("need at least one cell per direction")
    (x0, x1), (y0, y1) = bounds
    if not (x0 < x1 and y0 < y1):
        raise MeshError("degenerate rectangle")
    tags = {"left": "wall", "right": "wall", "bottom": "wall", "top": "wall", **(tags or {})}

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = lambda i, j: i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append([v00, v10, v11])
            tris.append([v00, v11, v01])
    tris = np.array(tris, dtype=np.int64)

    boundary_tags = {}
    periodic_pairs = []
    for j in range(ny):
        kl = tuple(sorted((vid(0, j), vid(0, j + 1))))
        kr = tuple(sorted((vid(nx, j), vid(nx, j + 1))))
        if periodic[0]:
            periodic_pairs.append((kl, kr))
        else:
            boundary_tags[kl] = tags["left"]
            boundary_tags[kr] = tags["right"]
    for i in range(nx):
        kb = tuple(sorted((vid(i, 0), vid(i + 1, 0))))
        kt = tuple(sorted((vid(i, ny), vid(i + 1, ny))))
        if periodic[1]:
            periodic_pairs.append((kb, kt))
        else:
            boundary_tags[kb] = tags["bottom"]
            boundary_tags[kt] = tags["top"]

    mesh = _assemble_2d(verts, tris, boundary_tags, periodic_pairs)
    mesh.structured = {
        "kind": "tri",
        "nx": int(nx),
        "ny": int(ny),
        "bounds": ((float(x0), float(x1)), (float(y0), float(y1))),
    }
    return mesh


def save_mesh(mesh, path):
    """Write the minimal ASCII mesh format."""
    bmask = mesh.boundary_mask
    nbf = int(bmask.sum())
    with open(path, "w") as fp:
        fp.write(f"{mesh.dim} {len(mesh.vertices)} {mesh.n_elements} {nbf}\n")
        for v in mesh.vertices:
            fp.write(" ".join(f"{float(c)!r}" for c in v) + "\n")
        for ev in mesh.elem_vertices:
            fp.write(" ".join(str(i) for i in ev) + "\n")
        for f in np.nonzero(bmask)[0]:
            ids = " ".join(str(i) for i in mesh.facet_vertices[f])
            fp.write(f"{ids} {mesh.facet_tag[f]}\n")


def load_mesh(path):
    """Read the minimal ASCII mesh format (see save_mesh)."""
    with open(path) as fp:
        tokens = [ln.split() for ln in fp if ln.strip()]
    try:
        dim, nv, ne, nbf = (int(t) for t in tokens[0])
        rows = iter(tokens[1:])
        verts = np.array([[float(c) for c in next(rows)][:dim] for _ in range(nv)])
        elems = np.array([[int(c) for c in next(rows)] for _ in range(ne)], dtype=np.int64)
        bfacets = [next(rows) for _ in range(nbf)]
    except (StopIteration, ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse mesh file {path}: {exc}") from None

    if dim == 1:
        return _load_interval(verts, elems, bfacets)

    boundary_tags = {}
    periodic_groups = {}
    for row in bfacets:
        v0, v1, tag = int(row[0]), int(row[1]), row[2]
        key = tuple(sorted((v0, v1)))
        if tag.startswith("periodic:"):
            periodic_groups.setdefault(tag.split(":", 1)[1], []).append(key)
        elif tag in ("wall", "outflow"):
            boundary_tags[key] = tag
        else:
            boundary_tags[key] = tag  # case-specific tags are allowed
    pairs = []
    for pid, keys in periodic_groups.items():
        if len(keys) != 2:
            raise MeshError(f"periodic pair {pid} has {len(keys)} facets")
        pairs.append(tuple(keys))
    return _assemble_2d(verts, elems, boundary_tags, pairs)


def _load_interval(verts, elems, bfacets):
    x = verts.ravel()
    left = np.minimum(x[elems[:, 0]], x[elems[:, 1]])
    order = np.argsort(left)
    elems = elems[order]
    ne = len(elems)
    # verify the cells tile an interval
    lo = np.minimum(x[elems[:, 0]], x[elems[:, 1]])
    hi = np.maximum(x[elems[:, 0]], x[elems[:, 1]])
    if not np.allclose(lo[1:], hi[:-1]):
        raise MeshError("interval cells do not tile the domain")
    tags = {}
    periodic = False
    for row in bfacets:
        if len(row) == 2:
            vi, tag = int(row[0]), row[1]
        else:
            vi, tag = int(row[0]), row[2]
        if tag.startswith("periodic:"):
            periodic = True
        else:
            tags[0 if np.isclose(x[vi], lo[0]) else 1] = tag
    mesh = build_interval_mesh(
        lo[0], hi[-1], ne, periodic=periodic,
        tags=(tags.get(0, "wall"), tags.get(1, "wall")),
    )
    if not np.allclose(mesh.elem_measure, hi - lo):
        # nonuniform: rebuild vertices in place
        xs = np.concatenate([lo, [hi[-1]]])
        mesh.vertices = xs[:, None]
        mesh._compute_geometry()
        mesh.structured = None
    return mesh
