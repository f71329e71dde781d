"""Structured 2D quadrilateral meshes: rectangles (optionally periodic and
randomly perturbed) and polar annuli.

Vertices are stored once per logical point: on a periodic axis the matching
boundary vertices are merged, so topology (shared dofs) is periodic by
construction.  Cells that wrap around a periodic axis carry their own corner
coordinates, offset by the domain extent, in ``cell_coords``.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "CellGeometry",
    "build_rect_mesh",
    "build_annulus_mesh",
    "cell_geometry",
    "cell_length_scale",
    "write_mesh_vtk",
]

# Reference square corners, counterclockwise; edge e joins corners (e, e+1).
_REF_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def _bilinear_tab(points):
    """Values and gradients of the 4 bilinear corner functions at `points`."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xi, eta = pts[:, 0], pts[:, 1]
    sx, sy = _REF_CORNERS[:, 0], _REF_CORNERS[:, 1]
    vals = 0.25 * (1.0 + xi[:, None] * sx) * (1.0 + eta[:, None] * sy)
    dxi = 0.25 * sx * (1.0 + eta[:, None] * sy)
    deta = 0.25 * sy * (1.0 + xi[:, None] * sx)
    return vals, np.stack([dxi, deta], axis=-1)  # (m,4), (m,4,2)


@dataclass
class Mesh:
    """Quadrilateral mesh with explicit edge topology.

    cells index into `vertices`; `cell_coords` holds the physical corner
    positions per cell (identical to the vertex coordinates except where a
    cell wraps a periodic axis).  Edges follow the lattice +x/+y (or +r/+theta)
    directions; `cell_edges` lists (bottom, right, top, left) per cell.
    """

    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 4) vertex ids, counterclockwise
    cell_coords: np.ndarray       # (nc, 4, 2)
    edges: np.ndarray             # (ne, 2) vertex ids, canonical direction
    cell_edges: np.ndarray        # (nc, 4) edge ids
    boundary_facets: dict         # tag -> (n, 2) array of (cell, local edge)
    periodic_maps: dict           # axis -> (vertex ids, image coordinates)
    extent: tuple                 # (Lx, Ly) for rectangles, None entries otherwise
    geometry_order: int = 1
    _caches: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    def cell_areas(self):
        """Shoelace area of every (straight-edge) cell."""
        x = self.cell_coords[:, :, 0]
        y = self.cell_coords[:, :, 1]
        xn = np.roll(x, -1, axis=1)
        yn = np.roll(y, -1, axis=1)
        return 0.5 * np.sum(x * yn - xn * y, axis=1)

    def cell_length_scales(self, mode="sqrt_area", b=None):
        if mode == "sqrt_area":
            if "dx" not in self._caches:
                self._caches["dx"] = np.sqrt(self.cell_areas())
            return self._caches["dx"]
        if mode == "field_aligned":
            if b is None:
                raise ValueError("field_aligned length scale needs a direction field")
            return _field_aligned_scales(self, b)  # depends on b: not cached
        raise ValueError(f"unknown length scale mode {mode!r}")

    def geometry_at(self, ref_points):
        """Jacobian data for all cells at shared reference points.

        Returns (x, jac, jac_inv, det) with shapes (nc,m,2), (nc,m,2,2),
        (nc,m,2,2), (nc,m).  Cached per distinct point set.
        """
        pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
        key = ("geom", pts.tobytes())
        if key in self._caches:
            return self._caches[key]
        vals, grads = _bilinear_tab(pts)
        x = np.einsum("cvd,mv->cmd", self.cell_coords, vals)
        jac = np.einsum("cvd,mve->cmde", self.cell_coords, grads)
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        inv = np.empty_like(jac)
        inv[..., 0, 0] = jac[..., 1, 1]
        inv[..., 0, 1] = -jac[..., 0, 1]
        inv[..., 1, 0] = -jac[..., 1, 0]
        inv[..., 1, 1] = jac[..., 0, 0]
        inv /= det[..., None, None]
        out = (x, jac, inv, det)
        self._caches[key] = out
        return out

    def mapping_mixed_derivative(self):
        """d2x/(dxi deta) per cell; the only nonzero mapping curvature."""
        c = self.cell_coords
        return 0.25 * (c[:, 0] - c[:, 1] + c[:, 2] - c[:, 3])


@dataclass
class CellGeometry:
    """Bilinear mapping data for one cell at chosen reference points."""

    corners: np.ndarray           # (4, 2)
    x: np.ndarray                 # (m, 2) mapped points
    jac: np.ndarray               # (m, 2, 2)
    jac_inv: np.ndarray           # (m, 2, 2)
    det: np.ndarray               # (m,)
    map_second: np.ndarray        # (2,) d2x/(dxi deta) per component
    length_scale: float


def _check_positive_jacobians(mesh, n=3):
    from numpy.polynomial.legendre import leggauss

    p1, _ = leggauss(n)
    pts = np.array([[a, b] for b in p1 for a in p1])
    _, _, _, det = mesh.geometry_at(pts)
    if det.min() <= 0.0:
        bad = np.argwhere(det <= 0.0)[0]
        raise ValueError(f"non-positive Jacobian in cell {bad[0]} (det={det.min():.3e})")


def _field_aligned_scales(mesh, b):
    """Chord length of the b-direction ray through each cell's center."""
    centers = mesh.cell_coords.mean(axis=1)
    if callable(b):
        bc = np.asarray(b(centers[:, 0], centers[:, 1]), dtype=float)
        if bc.ndim == 1:
            bc = np.broadcast_to(bc, (len(centers), 2)).copy()
    else:
        bc = np.broadcast_to(np.asarray(b, dtype=float), (len(centers), 2)).copy()
    bc /= np.linalg.norm(bc, axis=1, keepdims=True)
    out = np.empty(mesh.num_cells)
    for c in range(mesh.num_cells):
        out[c] = _poly_chord(mesh.cell_coords[c], centers[c], bc[c])
    return out


def _poly_chord(corners, p, d):
    # clip p + t d against the quad edges, return the chord length
    tmin, tmax = -np.inf, np.inf
    for e in range(4):
        a, bpt = corners[e], corners[(e + 1) % 4]
        edge = bpt - a
        nrm = np.array([edge[1], -edge[0]])  # outward for CCW corners
        denom = d @ nrm
        dist = (a - p) @ nrm
        if abs(denom) < 1e-14:
            continue
        t = dist / denom
        if denom > 0:
            tmax = min(tmax, t)
        else:
            tmin = max(tmin, t)
    if not np.isfinite(tmin) or not np.isfinite(tmax) or tmax <= tmin:
        return np.sqrt(abs(_shoelace(corners)))
    return tmax - tmin


def _shoelace(corners):
    x, y = corners[:, 0], corners[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def build_rect_mesh(nx, ny, Lx, Ly, periodic_x=False, periodic_y=False,
                    perturb_factor=0.0, seed=0):
    """Build an nx-by-ny quadrilateral mesh on [0,Lx] x [0,Ly].

    Interior vertices (all vertices along a periodic axis) are shifted by
    independent uniform offsets up to `perturb_factor` times the local edge
    length, drawn from a counter-based Philox stream keyed by `seed`.
    """
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ValueError("mesh needs at least one cell per direction")
    if Lx <= 0 or Ly <= 0:
        raise ValueError("domain extent must be positive")
    if not (0.0 <= perturb_factor < 0.5):
        raise ValueError("perturb_factor must lie in [0, 0.5) to avoid cell inversion")

    nvx = nx if periodic_x else nx + 1
    nvy = ny if periodic_y else ny + 1
    dx, dy = Lx / nx, Ly / ny

    ii, jj = np.meshgrid(np.arange(nvx), np.arange(nvy), indexing="ij")
    vertices = np.column_stack([(ii * dx).ravel(order="F"), (jj * dy).ravel(order="F")])
    # vertex id = j * nvx + i
    vid = lambda i, j: (j % nvy if periodic_y else j) * nvx + (i % nvx if periodic_x else i)

    if perturb_factor > 0.0:
        rng = np.random.Generator(np.random.Philox(key=int(seed)))
        offs = rng.uniform(-1.0, 1.0, size=(nvx * nvy, 2))
        offs *= np.array([perturb_factor * dx, perturb_factor * dy])
        i_flat = np.tile(np.arange(nvx), nvy)
        j_flat = np.repeat(np.arange(nvy), nvx)
        movable = np.ones(nvx * nvy, dtype=bool)
        if not periodic_x:
            movable &= (i_flat > 0) & (i_flat < nx)
        if not periodic_y:
            movable &= (j_flat > 0) & (j_flat < ny)
        vertices[movable] += offs[movable]

    cells = np.empty((nx * ny, 4), dtype=np.int64)
    cell_coords = np.empty((nx * ny, 4, 2))
    corner_ij = ((0, 0), (1, 0), (1, 1), (0, 1))
    for cj in range(ny):
        for ci in range(nx):
            c = cj * nx + ci
            for k, (oi, oj) in enumerate(corner_ij):
                gi, gj = ci + oi, cj + oj
                v = vid(gi, gj)
                cells[c, k] = v
                wrap = np.array([Lx if (periodic_x and gi == nx) else 0.0,
                                 Ly if (periodic_y and gj == ny) else 0.0])
                cell_coords[c, k] = vertices[v] + wrap

    # lattice edges: horizontal h(i,j) then vertical v(i,j)
    nhy = ny if periodic_y else ny + 1
    nvxv = nx if periodic_x else nx + 1
    n_horiz = nx * nhy
    hid = lambda i, j: (j % nhy if periodic_y else j) * nx + i
    gid = lambda i, j: n_horiz + j * nvxv + (i % nvxv if periodic_x else i)
    edges = np.empty((n_horiz + nvxv * ny, 2), dtype=np.int64)
    for j in range(nhy):
        for i in range(nx):
            edges[hid(i, j)] = (vid(i, j), vid(i + 1, j))
    for j in range(ny):
        for i in range(nvxv):
            edges[gid(i, j)] = (vid(i, j), vid(i, j + 1))

    cell_edges = np.empty((nx * ny, 4), dtype=np.int64)
    for cj in range(ny):
        for ci in range(nx):
            c = cj * nx + ci
            cell_edges[c] = (hid(ci, cj), gid(ci + 1, cj), hid(ci, cj + 1), gid(ci, cj))

    boundary = {}
    if not periodic_y:
        boundary["bottom"] = np.array([(ci, 0) for ci in range(nx)], dtype=np.int64)
        boundary["top"] = np.array([((ny - 1) * nx + ci, 2) for ci in range(nx)], dtype=np.int64)
    if not periodic_x:
        boundary["left"] = np.array([(cj * nx, 3) for cj in range(ny)], dtype=np.int64)
        boundary["right"] = np.array([(cj * nx + nx - 1, 1) for cj in range(ny)], dtype=np.int64)

    periodic_maps = {}
    if periodic_x:
        ids = np.array([vid(0, j) for j in range(nvy)], dtype=np.int64)
        periodic_maps["x"] = (ids, vertices[ids] + np.array([Lx, 0.0]))
    if periodic_y:
        ids = np.array([vid(i, 0) for i in range(nvx)], dtype=np.int64)
        periodic_maps["y"] = (ids, vertices[ids] + np.array([0.0, Ly]))

    mesh = Mesh(vertices, cells, cell_coords, edges, cell_edges, boundary,
                periodic_maps, (Lx, Ly))
    _check_positive_jacobians(mesh)
    return mesh


def build_annulus_mesh(nr, ntheta, r0, r1, perturb_factor=0.0, seed=0):
    """Polar annulus mesh, periodic in theta; circles tagged inner/outer.

    `perturb_factor` shifts interior vertices in the (r, theta) lattice by
    uniform offsets up to that fraction of the local spacing (the boundary
    circles stay exact), breaking the mesh/field alignment.
    """
    nr, ntheta = int(nr), int(ntheta)
    if r0 <= 0:
        raise ValueError("inner radius must be positive")
    if r1 <= r0:
        raise ValueError("outer radius must exceed inner radius")
    if ntheta < 8:
        raise ValueError("need at least 8 azimuthal cells")
    if nr < 1:
        raise ValueError("need at least one radial cell")
    if not (0.0 <= perturb_factor < 0.5):
        raise ValueError("perturb_factor must lie in [0, 0.5) to avoid cell inversion")

    rad_lattice = np.repeat(np.linspace(r0, r1, nr + 1), ntheta)
    th_lattice = np.tile(2.0 * np.pi * np.arange(ntheta) / ntheta, nr + 1)
    if perturb_factor > 0.0:
        rng = np.random.Generator(np.random.Philox(key=int(seed)))
        offs = rng.uniform(-1.0, 1.0, size=((nr + 1) * ntheta, 2))
        ring = np.repeat(np.arange(nr + 1), ntheta)
        interior = (ring > 0) & (ring < nr)
        rad_lattice = rad_lattice + np.where(
            interior, offs[:, 0] * perturb_factor * (r1 - r0) / nr, 0.0)
        th_lattice = th_lattice + np.where(
            interior, offs[:, 1] * perturb_factor * 2.0 * np.pi / ntheta, 0.0)
    vertices = np.column_stack([rad_lattice * np.cos(th_lattice),
                                rad_lattice * np.sin(th_lattice)])
    vid = lambda i, j: i * ntheta + (j % ntheta)

    cells = np.empty((nr * ntheta, 4), dtype=np.int64)
    cell_coords = np.empty((nr * ntheta, 4, 2))
    for i in range(nr):
        for j in range(ntheta):
            c = i * ntheta + j
            ids = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
            cells[c] = ids
            cell_coords[c] = vertices[list(ids)]

    # radial edges r(i,j), then azimuthal edges a(i,j)
    n_rad = nr * ntheta
    rid = lambda i, j: i * ntheta + (j % ntheta)
    aid = lambda i, j: n_rad + i * ntheta + (j % ntheta)
    edges = np.empty((n_rad + (nr + 1) * ntheta, 2), dtype=np.int64)
    for i in range(nr):
        for j in range(ntheta):
            edges[rid(i, j)] = (vid(i, j), vid(i + 1, j))
    for i in range(nr + 1):
        for j in range(ntheta):
            edges[aid(i, j)] = (vid(i, j), vid(i, j + 1))

    cell_edges = np.empty((nr * ntheta, 4), dtype=np.int64)
    for i in range(nr):
        for j in range(ntheta):
            c = i * ntheta + j
            cell_edges[c] = (rid(i, j), aid(i + 1, j), rid(i, j + 1), aid(i, j))

    boundary = {
        "inner": np.array([(j, 3) for j in range(ntheta)], dtype=np.int64),
        "outer": np.array([((nr - 1) * ntheta + j, 1) for j in range(ntheta)], dtype=np.int64),
    }
    periodic_maps = {"theta": (np.array([vid(i, 0) for i in range(nr + 1)], dtype=np.int64),
                               vertices[[vid(i, 0) for i in range(nr + 1)]])}

    mesh = Mesh(vertices, cells, cell_coords, edges, cell_edges, boundary,
                periodic_maps, (None, None))
    _check_positive_jacobians(mesh)
    return mesh


def cell_geometry(mesh, cell, ref_points):
    """Mapping data for one cell at the given reference points in [-1,1]^2."""
    cell = int(cell)
    if not 0 <= cell < mesh.num_cells:
        raise IndexError(f"cell {cell} out of range")
    pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
    corners = mesh.cell_coords[cell]
    vals, grads = _bilinear_tab(pts)
    x = vals @ corners
    jac = np.einsum("vd,mve->mde", corners, grads)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    if det.min() <= 0.0:
        raise ValueError(f"non-positive Jacobian in cell {cell}")
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 0, 1]
    inv[:, 1, 0] = -jac[:, 1, 0]
    inv[:, 1, 1] = jac[:, 0, 0]
    inv /= det[:, None, None]
    second = 0.25 * (corners[0] - corners[1] + corners[2] - corners[3])
    return CellGeometry(corners, x, jac, inv, det, second,
                        float(np.sqrt(_shoelace(corners))))


def cell_length_scale(mesh, cell, mode="sqrt_area", b=None):
    """Local cell length scale: sqrt(area) by default, or the field-aligned
    chord through the cell center when mode="field_aligned"."""
    cell = int(cell)
    if not 0 <= cell < mesh.num_cells:
        raise IndexError(f"cell {cell} out of range")
    return float(mesh.cell_length_scales(mode, b=b)[cell])


def write_mesh_vtk(mesh, path, point_data=None):
    """Dump the mesh (and optional per-vertex scalar fields) as legacy VTK."""
    lines = ["# vtk DataFile Version 3.0", "anisoflux mesh", "ASCII",
             "DATASET UNSTRUCTURED_GRID"]
    nv = mesh.num_vertices
    lines.append(f"POINTS {nv} double")
    for vx, vy in mesh.vertices:
        lines.append(f"{vx!r} {vy!r} 0.0")
    nc = mesh.num_cells
    lines.append(f"CELLS {nc} {5 * nc}")
    for c in mesh.cells:
        lines.append("4 " + " ".join(str(int(v)) for v in c))
    lines.append(f"CELL_TYPES {nc}")
    lines.extend(["9"] * nc)
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(repr(float(v)) for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
