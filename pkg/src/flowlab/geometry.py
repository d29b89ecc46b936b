"""Discretized flat model manifolds with boundary.

Three model geometries are supported, chosen because every quantity the rest
of the package needs (distances, curvature of the boundary, heat kernels) has
a closed form on them:

* ``FlatCylinder``  -- [0, L] x S^1(circumference l), totally geodesic boundary;
* ``FlatSlab3D``    -- [0, L] x T^2(l1 x l2), totally geodesic boundary;
* ``FlatDisk``      -- Euclidean disk of radius R, convex boundary (normal
  curvature 1/R).

Meshes are finite-volume: each vertex carries a dual volume weight, each edge
a stiffness (dual-face measure / length).  The Laplacian assembled from these
is symmetric in the volume-weighted inner product, annihilates constants
exactly, and reproduces the ghost-mirror Neumann closure at the boundary
without any special-cased rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp


# --------------------------------------------------------------------------- #
# descriptors
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class FlatCylinder:
    """[0, length] x circle(circumference), uniform nx x ny grid."""
    length: float = 1.0
    circumference: float = 1.0
    nx: int = 32
    ny: int = 32

    def validate(self) -> None:
        if min(self.nx, self.ny) < 4:
            raise ValueError(
                f"degenerate grid {self.nx}x{self.ny}: all counts must be >= 4")
        if min(self.length, self.circumference) <= 0:
            raise ValueError("all lengths must be > 0")


@dataclass(frozen=True)
class FlatSlab3D:
    """[0, length] x torus(side1 x side2), uniform nx x ny x nz grid."""
    length: float = 1.0
    side1: float = 1.0
    side2: float = 1.0
    nx: int = 16
    ny: int = 16
    nz: int = 16

    def validate(self) -> None:
        if min(self.nx, self.ny, self.nz) < 4:
            raise ValueError(
                f"degenerate grid {self.nx}x{self.ny}x{self.nz}: "
                "all counts must be >= 4")
        if min(self.length, self.side1, self.side2) <= 0:
            raise ValueError("all lengths must be > 0")


@dataclass(frozen=True)
class FlatDisk:
    """Euclidean disk of given radius, polar grid: nr rings x na angles."""
    radius: float = 1.0
    nr: int = 16
    na: int = 48

    def validate(self) -> None:
        if min(self.nr, self.na) < 4:
            raise ValueError(
                f"degenerate grid {self.nr}x{self.na}: all counts must be >= 4")
        if self.radius <= 0:
            raise ValueError("radius must be > 0")


ManifoldDescriptor = Union[FlatCylinder, FlatSlab3D, FlatDisk]


# --------------------------------------------------------------------------- #
# mesh container
# --------------------------------------------------------------------------- #

@dataclass
class Mesh:
    """Finite-volume mesh of a model manifold.

    Vertex arrays have length V, edge arrays length E, plaquette arrays
    length P.  ``plaq_edges``/``plaq_signs`` list each 2-cell's boundary in
    traversal order (pad entry -1 for triangular cells); holonomies multiply
    right-to-left in that order.  All arrays are frozen after construction
    (shared freely across threads).
    """

    kind: str
    descriptor: Optional[ManifoldDescriptor]
    dim: int
    coords: np.ndarray            # (V, dim)
    weights: np.ndarray           # (V,) dual volumes
    boundary_mask: np.ndarray     # (V,) bool
    normals: np.ndarray           # (V, dim); zero rows for interior vertices
    principal_curvatures: np.ndarray  # (V, dim-1); NaN rows for interior
    edges: np.ndarray             # (E, 2) vertex ids, stored orientation
    edge_lengths: np.ndarray      # (E,)
    edge_stiffness: np.ndarray    # (E,) dual-face measure / length
    edge_tangent_boundary: np.ndarray  # (E,) bool: edge lies inside dM
    plaq_edges: np.ndarray        # (P, 4) edge ids, -1 pad
    plaq_signs: np.ndarray        # (P, 4) +-1 (0 on pad)
    plaq_areas: np.ndarray        # (P,)
    plaq_weights: np.ndarray      # (P,) FV volume share of the 2-cell
    plaq_vertices: np.ndarray     # (P, 4) vertex ids, -1 pad
    plaq_tangent_boundary: np.ndarray  # (P,) bool: 2-cell inside dM
    plaq_plane: np.ndarray        # (P,) axis-pair code a * dim + b, a < b
    grid_shape: Optional[tuple]   # structured index shape, None for disk
    periodic: Optional[tuple]     # per-axis periodicity flags
    spacing: Optional[tuple]      # per-axis spacing for structured grids
    volume: float
    # boundary normal-line stencil: dn f = (3 f[b] - 4 f[i1] + f[i2]) / (2 h)
    bnd_vertices: np.ndarray
    bnd_inner1: np.ndarray
    bnd_inner2: np.ndarray
    bnd_spacing: np.ndarray
    # set by double_manifold on the doubled mesh: parent-vertex -> double-vertex
    double_map_copy1: Optional[np.ndarray] = None
    double_map_copy2: Optional[np.ndarray] = None
    _laplacian: Optional[sp.csr_matrix] = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.coords.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def n_plaquettes(self) -> int:
        return self.plaq_edges.shape[0]

    def _freeze(self) -> None:
        for name in ("coords", "weights", "boundary_mask", "normals",
                     "principal_curvatures", "edges", "edge_lengths",
                     "edge_stiffness", "edge_tangent_boundary", "plaq_edges",
                     "plaq_signs", "plaq_areas", "plaq_weights",
                     "plaq_vertices", "plaq_tangent_boundary", "plaq_plane",
                     "bnd_vertices", "bnd_inner1", "bnd_inner2",
                     "bnd_spacing"):
            getattr(self, name).setflags(write=False)


# --------------------------------------------------------------------------- #
# structured product meshes (cylinder / slab / tori)
# --------------------------------------------------------------------------- #

def _product_mesh(kind, descriptor, axis_n, axis_len, axis_periodic):
    """Tensor-product FV mesh.

    axis_n[a] counts cells along axis a; a non-periodic axis has axis_n[a]+1
    vertex columns (boundary at both ends), a periodic axis axis_n[a].
    """
    dim = len(axis_n)
    spacing = tuple(L / n for L, n in zip(axis_len, axis_n))
    shape = tuple(n + (0 if per else 1) for n, per in zip(axis_n, axis_periodic))
    V = int(np.prod(shape))

    idx = np.arange(V).reshape(shape)
    grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
    coords = np.stack([g * h for g, h in zip(grids, spacing)],
                      axis=-1).reshape(V, dim).astype(float)

    # dual volumes: product of per-axis dual lengths (half cells at walls)
    bnd = np.zeros(V, dtype=bool)
    w = np.ones(shape)
    for a, (h, per) in enumerate(zip(spacing, axis_periodic)):
        line = np.full(shape[a], h)
        if not per:
            line[0] = line[-1] = h / 2
        w = w * line.reshape([-1 if b == a else 1 for b in range(dim)])
    w = w.reshape(V)
    for a, per in enumerate(axis_periodic):
        if not per:
            sl = [slice(None)] * dim
            for end in (0, -1):
                sl[a] = end
                bnd.reshape(shape)[tuple(sl)] = True

    # transverse dual measure of an axis-a edge / face weight factors
    def _dual_line(a):
        """Per-axis dual length profile used for transverse measures."""
        h, per = spacing[a], axis_periodic[a]
        line = np.full(shape[a], h)
        if not per:
            line[0] = line[-1] = h / 2
        return line

    edges, elens, estiff, etan = [], [], [], []
    for a in range(dim):
        h, per = spacing[a], axis_periodic[a]
        # tail slices along a
        tails = np.moveaxis(idx, a, 0)
        heads = np.roll(tails, -1, axis=0)
        if not per:
            tails, heads = tails[:-1], heads[:-1]
        tails, heads = tails.reshape(-1), heads.reshape(-1)
        # transverse dual measure: product over other axes' dual lines at the
        # tail's transverse index (the edge keeps the tail's transverse cell)
        tmeas = np.ones(tails.shape[0])
        # recompute per-edge from vertex indices
        multi = np.array(np.unravel_index(tails, shape)).T
        for b in range(dim):
            if b == a:
                continue
            tmeas *= _dual_line(b)[multi[:, b]]
        edges.append(np.stack([tails, heads], axis=1))
        elens.append(np.full(tails.shape[0], h))
        estiff.append(tmeas / h)
        # tangential boundary edge: all transverse coords on a wall
        on_wall = np.zeros(tails.shape[0], dtype=bool)
        for b in range(dim):
            if b == a or axis_periodic[b]:
                continue
            on_wall |= (multi[:, b] == 0) | (multi[:, b] == shape[b] - 1)
        etan.append(on_wall)
    edges = np.concatenate(edges, axis=0)
    edge_lengths = np.concatenate(elens)
    edge_stiffness = np.concatenate(estiff)
    edge_tangent_boundary = np.concatenate(etan)

    # edge lookup table: (axis, tail multi-index) -> edge id
    edge_offsets = np.cumsum(
        [0] + [(shape[a] - (0 if axis_periodic[a] else 1))
               * V // shape[a] for a in range(dim)])

    def edge_id(a, M):
        """Edge ids along axis a for an (nP, dim) array of tail indices."""
        sh = list(shape)
        sh[a] -= 0 if axis_periodic[a] else 1
        # tails were built with axis a moved to front
        order = [a] + [b for b in range(dim) if b != a]
        lin = np.ravel_multi_index(tuple(M[:, b] for b in order),
                                   tuple(sh[b] for b in order))
        return edge_offsets[a] + lin

    def vert_id(M):
        return np.ravel_multi_index(tuple(M.T), shape)

    # plaquettes: all axis pairs (a < b); cell anchored at multi-index m
    pe, ps, pa, pw, pv, ptan, pplane = [], [], [], [], [], [], []
    for a in range(dim):
        for b in range(a + 1, dim):
            ha, hb = spacing[a], spacing[b]
            ranges = []
            for c in range(dim):
                if c in (a, b):
                    ranges.append(np.arange(axis_n[c]))
                else:
                    ranges.append(np.arange(shape[c]))
            mesh_idx = np.meshgrid(*ranges, indexing="ij")
            anchors = np.stack([g.reshape(-1) for g in mesh_idx], axis=1)
            nP = anchors.shape[0]
            ma = anchors.copy()
            ma[:, a] = (ma[:, a] + 1) % shape[a]
            mb = anchors.copy()
            mb[:, b] = (mb[:, b] + 1) % shape[b]
            mab = ma.copy()
            mab[:, b] = (mab[:, b] + 1) % shape[b]
            e1 = edge_id(a, anchors)   # along a from m
            e2 = edge_id(b, ma)        # along b from m+a
            e3 = edge_id(a, mb)        # along a from m+b (traversed -)
            e4 = edge_id(b, anchors)   # along b from m   (traversed -)
            v1, v2, v3, v4 = (vert_id(anchors), vert_id(ma),
                              vert_id(mab), vert_id(mb))
            pe.append(np.stack([e1, e2, e3, e4], axis=1))
            ps.append(np.tile([1, 1, -1, -1], (nP, 1)))
            pa.append(np.full(nP, ha * hb))
            # FV share: plaquette dual volume = area x transverse dual lengths
            share = np.full(nP, ha * hb)
            for c in range(dim):
                if c in (a, b):
                    continue
                share *= _dual_line(c)[anchors[:, c]]
            pw.append(share)
            pv.append(np.stack([v1, v2, v3, v4], axis=1))
            tangent = np.zeros(nP, dtype=bool)
            for c in range(dim):
                if c in (a, b) or axis_periodic[c]:
                    continue
                tangent |= ((anchors[:, c] == 0)
                            | (anchors[:, c] == shape[c] - 1))
            ptan.append(tangent)
            pplane.append(np.full(nP, a * dim + b))

    normals = np.zeros((V, dim))
    if not axis_periodic[0]:
        g = normals.reshape(shape + (dim,))
        g[0, ..., 0] = -1.0
        g[-1, ..., 0] = 1.0
    curv = np.full((V, max(dim - 1, 1)), np.nan)
    curv[bnd] = 0.0  # flat products: totally geodesic boundary

    # boundary normal-line stencil along axis 0
    bv, b1, b2, bh = [], [], [], []
    if not axis_periodic[0]:
        arr = idx
        for end, i1, i2 in ((0, 1, 2), (shape[0] - 1, shape[0] - 2,
                                        shape[0] - 3)):
            bv.append(arr[end].reshape(-1))
            b1.append(arr[i1].reshape(-1))
            b2.append(arr[i2].reshape(-1))
            bh.append(np.full(arr[end].size, spacing[0]))
    bv = np.concatenate(bv) if bv else np.empty(0, dtype=int)
    b1 = np.concatenate(b1) if b1 else np.empty(0, dtype=int)
    b2 = np.concatenate(b2) if b2 else np.empty(0, dtype=int)
    bh = np.concatenate(bh) if bh else np.empty(0)

    m = Mesh(
        kind=kind, descriptor=descriptor, dim=dim, coords=coords, weights=w,
        boundary_mask=bnd, normals=normals, principal_curvatures=curv,
        edges=edges, edge_lengths=edge_lengths, edge_stiffness=edge_stiffness,
        edge_tangent_boundary=edge_tangent_boundary,
        plaq_edges=np.concatenate(pe), plaq_signs=np.concatenate(ps),
        plaq_areas=np.concatenate(pa), plaq_weights=np.concatenate(pw),
        plaq_vertices=np.concatenate(pv),
        plaq_tangent_boundary=np.concatenate(ptan),
        plaq_plane=np.concatenate(pplane),
        grid_shape=shape, periodic=tuple(axis_periodic), spacing=spacing,
        volume=float(np.prod(axis_len)),
        bnd_vertices=bv, bnd_inner1=b1, bnd_inner2=b2, bnd_spacing=bh,
    )
    m._freeze()
    return m


# --------------------------------------------------------------------------- #
# disk mesh
# --------------------------------------------------------------------------- #

def _disk_mesh(d: FlatDisk) -> Mesh:
    R, nr, na = d.radius, d.nr, d.na
    dr = R / nr
    dth = 2 * np.pi / na
    V = 1 + nr * na

    def vid(j, i):
        """Ring j in 1..nr, angle index i (wrapped); center is vertex 0."""
        return 1 + (j - 1) * na + (i % na)

    radii = dr * np.arange(1, nr + 1)
    th = dth * np.arange(na)
    coords = np.zeros((V, 2))
    coords[1:, 0] = np.repeat(radii, na) * np.tile(np.cos(th), nr)
    coords[1:, 1] = np.repeat(radii, na) * np.tile(np.sin(th), nr)

    w = np.empty(V)
    w[0] = np.pi * (dr / 2) ** 2
    for j in range(1, nr):
        w[vid(j, 0):vid(j, 0) + na] = radii[j - 1] * dr * dth
    # outer ring dual cell: radial extent [R - dr/2, R]
    w[vid(nr, 0):vid(nr, 0) + na] = (R - dr / 4) * (dr / 2) * dth

    bnd = np.zeros(V, dtype=bool)
    bnd[vid(nr, 0):] = True
    normals = np.zeros((V, 2))
    normals[bnd] = coords[bnd] / np.linalg.norm(coords[bnd], axis=1,
                                               keepdims=True)
    curv = np.full((V, 1), np.nan)
    curv[bnd] = 1.0 / R

    edges, elens, estiff, etan = [], [], [], []
    # radial edges center -> ring 1 (flux arc at r = dr/2)
    for i in range(na):
        edges.append((0, vid(1, i)))
        elens.append(dr)
        estiff.append((dr / 2) * dth / dr)
        etan.append(False)
    # radial edges ring j -> j+1 (flux arc at r_{j+1/2})
    for j in range(1, nr):
        rmid = (radii[j - 1] + radii[j]) / 2
        for i in range(na):
            edges.append((vid(j, i), vid(j + 1, i)))
            elens.append(dr)
            estiff.append(rmid * dth / dr)
            etan.append(False)
    # angular edges on ring j (flux segment radial, clipped at outer ring)
    for j in range(1, nr + 1):
        seg = dr if j < nr else dr / 2
        for i in range(na):
            edges.append((vid(j, i), vid(j, i + 1)))
            elens.append(radii[j - 1] * dth)
            estiff.append(seg / (radii[j - 1] * dth))
            etan.append(j == nr)
    edges = np.array(edges)
    edge_lengths = np.array(elens)
    edge_stiffness = np.array(estiff)
    edge_tangent_boundary = np.array(etan)

    def rad_eid(j, i):
        """Radial edge from ring j to ring j+1 (j=0 means center spoke)."""
        return j * na + (i % na)

    def ang_eid(j, i):
        """Angular edge on ring j from angle i to i+1."""
        return nr * na + (j - 1) * na + (i % na)

    pe, ps, pa, pv = [], [], [], []
    # center sector cells: center -> (1,i) -> (1,i+1) -> center
    for i in range(na):
        pe.append((rad_eid(0, i), ang_eid(1, i), rad_eid(0, i + 1), -1))
        ps.append((1, 1, -1, 0))
        pa.append(dr * dr * dth / 2)
        pv.append((0, vid(1, i), vid(1, i + 1), -1))
    # annulus cells between rings j, j+1
    for j in range(1, nr):
        rmid = (radii[j - 1] + radii[j]) / 2
        for i in range(na):
            pe.append((rad_eid(j, i), ang_eid(j + 1, i),
                       rad_eid(j, i + 1), ang_eid(j, i)))
            ps.append((1, 1, -1, -1))
            pa.append(rmid * dr * dth)
            pv.append((vid(j, i), vid(j + 1, i),
                       vid(j + 1, i + 1), vid(j, i + 1)))
    plaq_edges = np.array(pe)
    plaq_signs = np.array(ps)
    plaq_areas = np.array(pa)
    plaq_vertices = np.array(pv)

    bv = np.array([vid(nr, i) for i in range(na)])
    b1 = np.array([vid(nr - 1, i) for i in range(na)])
    b2 = np.array([vid(nr - 2, i) for i in range(na)])

    m = Mesh(
        kind="disk", descriptor=d, dim=2, coords=coords, weights=w,
        boundary_mask=bnd, normals=normals, principal_curvatures=curv,
        edges=edges, edge_lengths=edge_lengths, edge_stiffness=edge_stiffness,
        edge_tangent_boundary=edge_tangent_boundary,
        plaq_edges=plaq_edges, plaq_signs=plaq_signs, plaq_areas=plaq_areas,
        plaq_weights=plaq_areas.copy(), plaq_vertices=plaq_vertices,
        plaq_tangent_boundary=np.zeros(plaq_edges.shape[0], dtype=bool),
        plaq_plane=np.ones(plaq_edges.shape[0], dtype=int),
        grid_shape=None, periodic=None, spacing=None,
        volume=np.pi * R ** 2,
        bnd_vertices=bv, bnd_inner1=b1, bnd_inner2=b2,
        bnd_spacing=np.full(na, dr),
    )
    m._freeze()
    return m


# --------------------------------------------------------------------------- #
# public operations
# --------------------------------------------------------------------------- #

def build_mesh(d: ManifoldDescriptor) -> Mesh:
    """Construct the finite-volume mesh of a model manifold."""
    d.validate()
    if isinstance(d, FlatCylinder):
        return _product_mesh("cylinder", d, (d.nx, d.ny),
                             (d.length, d.circumference), (False, True))
    if isinstance(d, FlatSlab3D):
        return _product_mesh("slab", d, (d.nx, d.ny, d.nz),
                             (d.length, d.side1, d.side2),
                             (False, True, True))
    if isinstance(d, FlatDisk):
        return _disk_mesh(d)
    raise TypeError(f"unknown descriptor {type(d).__name__}")


def laplace_beltrami(m: Mesh) -> sp.csr_matrix:
    """Discrete Neumann Laplacian  L = -diag(1/w) G^T diag(c) G.

    Symmetric w.r.t. the volume-weighted inner product, zero row sums, and
    the ghost-mirror closure 2(f1-f0)/h^2 at walls falls out of the
    half-weight boundary dual cells.
    """
    if m._laplacian is not None:
        return m._laplacian
    V, E = m.n_vertices, m.n_edges
    rows = np.concatenate([m.edges[:, 0], m.edges[:, 1]])
    cols = np.concatenate([np.arange(E), np.arange(E)])
    vals = np.concatenate([-np.ones(E), np.ones(E)])
    G = sp.csc_matrix((vals, (cols, rows)), shape=(E, V))
    K = (G.T @ sp.diags(m.edge_stiffness) @ G).tocsr()  # stiffness, SPD
    L = (-sp.diags(1.0 / m.weights) @ K).tocsr()
    m._laplacian = L
    return L


def boundary_normal_derivative(m: Mesh, f: np.ndarray) -> np.ndarray:
    """Outward normal derivative at boundary vertices.

    One-sided second-order difference along the inward normal line, negated:
    (3 f_b - 4 f_1 + f_2) / (2 h), ordered like ``m.bnd_vertices``.
    """
    f = np.asarray(f)
    if f.shape[0] != m.n_vertices:
        raise ValueError("field size does not match vertex count")
    return (3 * f[m.bnd_vertices] - 4 * f[m.bnd_inner1]
            + f[m.bnd_inner2]) / (2 * m.bnd_spacing)


def double_manifold(m: Mesh) -> Mesh:
    """Glue two copies of a totally-geodesic-boundary mesh along the boundary.

    The cylinder doubles to the flat torus (2L) x l, the slab to a 3-torus.
    The doubled mesh carries index maps ``double_map_copy1/2`` sending each
    parent vertex to its image in the two copies (boundary vertices map to
    the same image), so symmetric extension is ``ext[map1] = ext[map2] = f``.
    """
    d = m.descriptor
    if isinstance(d, FlatCylinder):
        t = _product_mesh("torus2d", None, (2 * d.nx, d.ny),
                          (2 * d.length, d.circumference), (True, True))
        shape_t, shape_m = t.grid_shape, m.grid_shape
        idx_t = np.arange(t.n_vertices).reshape(shape_t)
        ii = np.arange(shape_m[0])
        map1 = idx_t[ii][:, :].reshape(-1)
        map2 = idx_t[(-ii) % shape_t[0]][:, :].reshape(-1)
    elif isinstance(d, FlatSlab3D):
        t = _product_mesh("torus3d", None, (2 * d.nx, d.ny, d.nz),
                          (2 * d.length, d.side1, d.side2),
                          (True, True, True))
        shape_t, shape_m = t.grid_shape, m.grid_shape
        idx_t = np.arange(t.n_vertices).reshape(shape_t)
        ii = np.arange(shape_m[0])
        map1 = idx_t[ii].reshape(-1)
        map2 = idx_t[(-ii) % shape_t[0]].reshape(-1)
    else:
        raise ValueError(
            "doubling requires a totally geodesic boundary; the disk's "
            "boundary is convex but not geodesic, so the smooth gluing "
            "hypothesis fails")
    t.double_map_copy1 = map1
    t.double_map_copy2 = map2
    return t


def symmetric_extension(double: Mesh, f: np.ndarray) -> np.ndarray:
    """Extend a parent-mesh field to the double by reflection symmetry."""
    if double.double_map_copy1 is None:
        raise ValueError("mesh was not produced by double_manifold")
    out = np.empty(double.n_vertices)
    out[double.double_map_copy1] = f
    out[double.double_map_copy2] = f
    return out


def geodesic_distance(m: Mesh, y: int) -> np.ndarray:
    """Closed-form geodesic distance from vertex y to every vertex."""
    p = m.coords[y]
    if m.kind == "disk":
        return np.linalg.norm(m.coords - p, axis=1)
    diff = np.abs(m.coords - p)
    if m.descriptor is not None:
        if isinstance(m.descriptor, FlatCylinder):
            periods = (None, m.descriptor.circumference)
        else:
            periods = (None, m.descriptor.side1, m.descriptor.side2)
    else:  # doubled torus: every axis periodic
        periods = tuple(m.spacing[a] * m.grid_shape[a]
                        for a in range(m.dim))
    for a, per in enumerate(periods):
        if per is not None:
            diff[:, a] = np.minimum(diff[:, a], per - diff[:, a])
    return np.linalg.norm(diff, axis=1)


def volume_integrate(m: Mesh, f: np.ndarray) -> float:
    """Integral of a vertex field against the dual volume weights."""
    return float(np.dot(m.weights, f))


@dataclass(frozen=True)
class ConvexityReport:
    min_principal_curvature: float
    convex: bool
    totally_geodesic: bool


def convexity_report(m: Mesh,
                     curvatures: Optional[np.ndarray] = None) -> ConvexityReport:
    """Boundary convexity classification from the second fundamental form.

    ``curvatures`` overrides the stored analytic values (used by tests to
    probe the sign logic).
    """
    lam = (m.principal_curvatures if curvatures is None else curvatures)
    lam = lam[m.boundary_mask] if curvatures is None else lam
    mn = float(np.nanmin(lam))
    mx = float(np.nanmax(np.abs(lam)))
    return ConvexityReport(min_principal_curvature=mn,
                           convex=mn >= 0, totally_geodesic=mx == 0)


# --------------------------------------------------------------------------- #
# serialization
# --------------------------------------------------------------------------- #

_JSON_FIELDS = ("kind", "dim", "volume")
_JSON_ARRAYS = ("coords", "weights", "boundary_mask", "normals",
                "principal_curvatures", "edges", "edge_lengths",
                "edge_stiffness")


def mesh_to_json(m: Mesh) -> str:
    """Serialize the mesh's geometric content to JSON.

    Schema (documented, versioned): {"schema": "flowlab-mesh/1",
    "kind", "dim", "volume", "descriptor": {...} | null, arrays...};
    arrays are nested lists (NaN encoded as null by ``allow_nan=False``
    avoidance -- NaNs only occur in principal_curvatures, mapped to null).
    """
    doc = {"schema": "flowlab-mesh/1"}
    for k in _JSON_FIELDS:
        doc[k] = getattr(m, k)
    if m.descriptor is not None:
        doc["descriptor"] = {"type": type(m.descriptor).__name__,
                             **m.descriptor.__dict__}
    else:
        doc["descriptor"] = None
    for k in _JSON_ARRAYS:
        arr = np.asarray(getattr(m, k), dtype=float)
        lst = np.where(np.isnan(arr), None, arr).tolist() \
            if np.issubdtype(arr.dtype, np.floating) and np.isnan(arr).any() \
            else arr.tolist()
        doc[k] = lst
    return json.dumps(doc)


def mesh_from_json(text: str) -> Mesh:
    """Rebuild a mesh from its descriptor recorded in the JSON document."""
    doc = json.loads(text)
    if doc.get("schema") != "flowlab-mesh/1":
        raise ValueError("unrecognized mesh schema")
    desc = doc["descriptor"]
    if desc is None:
        raise ValueError("cannot rebuild a derived (doubled) mesh from JSON")
    cls = {"FlatCylinder": FlatCylinder, "FlatSlab3D": FlatSlab3D,
           "FlatDisk": FlatDisk}[desc.pop("type")]
    return build_mesh(cls(**desc))
