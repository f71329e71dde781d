"""Tensor-product Lagrange elements on quadrilaterals, global dof maps,
field interpolation, and quadrature-based norms.

Continuous spaces (Q_k, equispaced nodes) share dofs across cell interfaces
and periodic identifications; discontinuous spaces (dQ_k) share nothing.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

__all__ = [
    "ReferenceElement",
    "Quadrature",
    "FunctionSpace",
    "Field",
    "gauss_quadrature",
    "tabulate_basis",
    "build_space",
    "interpolate",
    "l2_relative_error",
    "CellTabulation",
    "write_field_csv",
    "write_field_vtk",
]


class _Lagrange1D:
    """Nodal Lagrange basis on given 1D nodes, via monomial coefficients."""

    def __init__(self, nodes):
        self.nodes = np.asarray(nodes, dtype=float)
        n = len(self.nodes)
        vander = np.vander(self.nodes, n, increasing=True)
        self.coef = np.linalg.inv(vander).T  # coef[i, m]: x^m coefficient of phi_i

    def eval(self, x, deriv=0):
        c = self.coef
        for _ in range(deriv):
            if c.shape[1] == 1:
                return np.zeros((c.shape[0], len(np.atleast_1d(x))))
            c = c[:, 1:] * np.arange(1, c.shape[1])
        powers = np.vander(np.atleast_1d(np.asarray(x, dtype=float)),
                           c.shape[1], increasing=True)
        return c @ powers.T  # (nbasis, npts)


class ReferenceElement:
    """Q_k ("cg") or dQ_k ("dq") Lagrange element on [-1,1]^2.

    Node ordering is lexicographic, x fastest: node = iy*(k+1) + ix.
    """

    def __init__(self, family, degree):
        family = family.lower()
        if family not in ("cg", "dq"):
            raise ValueError(f"unknown element family {family!r}")
        if family == "cg" and degree < 1:
            raise ValueError("continuous spaces need degree >= 1")
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        if degree > 8:
            raise ValueError("degree capped at 8 (equispaced nodes)")
        self.family = family
        self.degree = int(degree)
        nodes_1d = np.array([0.0]) if degree == 0 else np.linspace(-1.0, 1.0, degree + 1)
        self._l1d = _Lagrange1D(nodes_1d)
        self.nodes_1d = nodes_1d
        n1 = len(nodes_1d)
        gx, gy = np.meshgrid(nodes_1d, nodes_1d)  # indexed [iy, ix]
        self.nodes = np.column_stack([gx.ravel(), gy.ravel()])
        self.n_basis = n1 * n1

    def tabulate(self, points, hessian=True):
        """Values, gradients and (optionally) second derivatives.

        Returns (values (nb, m), grads (nb, m, 2), hess (nb, m, 3)) with the
        hessian components ordered (xx, xy, yy); hess is None if not asked.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vx = self._l1d.eval(pts[:, 0])
        vy = self._l1d.eval(pts[:, 1])
        dvx = self._l1d.eval(pts[:, 0], deriv=1)
        dvy = self._l1d.eval(pts[:, 1], deriv=1)
        vals = np.einsum("ym,xm->yxm", vy, vx).reshape(self.n_basis, -1)
        gx = np.einsum("ym,xm->yxm", vy, dvx).reshape(self.n_basis, -1)
        gy = np.einsum("ym,xm->yxm", dvy, vx).reshape(self.n_basis, -1)
        grads = np.stack([gx, gy], axis=-1)
        hess = None
        if hessian:
            ddvx = self._l1d.eval(pts[:, 0], deriv=2)
            ddvy = self._l1d.eval(pts[:, 1], deriv=2)
            hxx = np.einsum("ym,xm->yxm", vy, ddvx).reshape(self.n_basis, -1)
            hxy = np.einsum("ym,xm->yxm", dvy, dvx).reshape(self.n_basis, -1)
            hyy = np.einsum("ym,xm->yxm", ddvy, vx).reshape(self.n_basis, -1)
            hess = np.stack([hxx, hxy, hyy], axis=-1)
        return vals, grads, hess


def tabulate_basis(elem, points):
    """Tabulate (values, gradients, second derivatives) of `elem` at `points`."""
    return elem.tabulate(points, hessian=True)


@dataclass
class Quadrature:
    """Tensor Gauss-Legendre rule: `points` on [-1,1]^2, `points_1d` on [-1,1]."""

    order: int
    points_1d: np.ndarray
    weights_1d: np.ndarray
    points: np.ndarray    # (n^2, 2), x fastest
    weights: np.ndarray   # (n^2,)


def gauss_quadrature(n):
    if not 1 <= n <= 10:
        raise ValueError("quadrature order must lie in [1, 10]")
    p, w = leggauss(n)
    px, py = np.meshgrid(p, p)     # [iy, ix]
    wx, wy = np.meshgrid(w, w)
    return Quadrature(n, p, w,
                      np.column_stack([px.ravel(), py.ravel()]),
                      (wx * wy).ravel())


@dataclass
class FunctionSpace:
    mesh: object
    element: ReferenceElement
    cell_dofs: np.ndarray          # (nc, nb)
    ndofs: int
    dof_coords: np.ndarray         # (ndofs, 2)
    boundary_dofs: dict            # tag -> sorted dof ids
    _caches: dict = field(default_factory=dict, repr=False)

    @property
    def degree(self):
        return self.element.degree

    @property
    def family(self):
        return self.element.family

    def tabulation(self, qorder=None):
        """Per-cell quadrature tabulation (geometry pushforwards), cached."""
        if qorder is None:
            qorder = self.element.degree + 2
        if qorder not in self._caches:
            self._caches[qorder] = CellTabulation(self, gauss_quadrature(qorder))
        return self._caches[qorder]

    def facet_tabulation(self, qorder=None):
        if qorder is None:
            qorder = self.element.degree + 2
        key = ("facet", qorder)
        if key not in self._caches:
            self._caches[key] = _facet_tables(self.element, qorder)
        return self._caches[key]


def build_space(mesh, family, degree, continuity=None):
    """Number the dofs of a Q_degree (cg) or dQ_degree (dq) space on `mesh`.

    `continuity=True` with a discontinuous family is rejected.
    """
    family = family.lower()
    if family == "dq" and continuity:
        raise ValueError("discontinuous spaces cannot provide inter-element continuity")
    elem = ReferenceElement(family, degree)
    nb = elem.n_basis
    nc = mesh.num_cells
    k = elem.degree

    if family == "dq":
        cell_dofs = np.arange(nc * nb, dtype=np.int64).reshape(nc, nb)
        ndofs = nc * nb
        boundary = {}
    else:
        nv, ne = mesh.num_vertices, mesh.num_edges
        n_edge = k - 1
        ndofs = nv + ne * n_edge + nc * (k - 1) ** 2
        cell_dofs = np.empty((nc, nb), dtype=np.int64)
        corner_of = {(0, 0): 0, (k, 0): 1, (k, k): 2, (0, k): 3}
        for c in range(nc):
            verts = mesh.cells[c]
            eids = mesh.cell_edges[c]
            for iy in range(k + 1):
                for ix in range(k + 1):
                    loc = iy * (k + 1) + ix
                    on_x = ix in (0, k)
                    on_y = iy in (0, k)
                    if on_x and on_y:
                        cell_dofs[c, loc] = verts[corner_of[(ix, iy)]]
                    elif on_y:  # horizontal edge, canonical +x direction
                        e = eids[0] if iy == 0 else eids[2]
                        cell_dofs[c, loc] = nv + e * n_edge + (ix - 1)
                    elif on_x:  # vertical edge, canonical +y direction
                        e = eids[1] if ix == k else eids[3]
                        cell_dofs[c, loc] = nv + e * n_edge + (iy - 1)
                    else:
                        s = (iy - 1) * (k - 1) + (ix - 1)
                        cell_dofs[c, loc] = nv + ne * n_edge + c * (k - 1) ** 2 + s
        boundary = {}
        for tag, facets in mesh.boundary_facets.items():
            dofs = []
            for cell, ledge in facets:
                dofs.extend(cell_dofs[cell, _edge_local_nodes(k, ledge)])
            boundary[tag] = np.unique(np.asarray(dofs, dtype=np.int64))

    # nodal coordinates via the bilinear geometry at element nodes
    vals, _ = _bilin_at(elem.nodes)
    node_xy = np.einsum("cvd,nv->cnd", mesh.cell_coords, vals)
    dof_coords = np.zeros((ndofs, 2))
    dof_coords[cell_dofs.ravel()] = node_xy.reshape(-1, 2)
    return FunctionSpace(mesh, elem, cell_dofs, int(ndofs), dof_coords, boundary)


def _edge_local_nodes(k, ledge):
    """Local node ids of the element lying on local edge `ledge`."""
    n1 = k + 1
    if ledge == 0:
        return [ix for ix in range(n1)]
    if ledge == 1:
        return [iy * n1 + k for iy in range(n1)]
    if ledge == 2:
        return [k * n1 + ix for ix in range(n1)]
    if ledge == 3:
        return [iy * n1 for iy in range(n1)]
    raise ValueError(f"bad local edge {ledge}")


def _bilin_at(points):
    from .mesh import _bilinear_tab

    return _bilinear_tab(points)


class CellTabulation:
    """Geometry and basis data at quadrature points for every cell.

    Attributes (m = points per cell):
        xq    (nc, m, 2)   physical quadrature points
        wdet  (nc, m)      weight * detJ
        phi   (m, nb)      reference basis values (cell independent)
        grad  (nc, m, nb, 2)  physical gradients
        lap   (nc, m, nb)     physical Laplacians (bilinear-map curvature included)
    """

    def __init__(self, space, quad):
        self.space = space
        self.quad = quad
        mesh = space.mesh
        elem = space.element
        x, jac, inv, det = mesh.geometry_at(quad.points)
        if det.min() <= 0.0:
            raise ValueError("non-positive Jacobian at quadrature points")
        vals, grads, hess = elem.tabulate(quad.points)
        self.xq = x
        self.wdet = quad.weights[None, :] * det
        self.phi = vals.T.copy()                       # (m, nb)
        # physical gradient: PG_m = sum_d inv[d, m] * refgrad_d
        self.grad = np.einsum("cqdm,iqd->cqim", inv, grads, optimize=True)
        # physical Hessian: H = J^-T (refH - sum_a PG_a Hx_a) J^-1, lap = trace
        refH = np.empty((elem.n_basis, quad.points.shape[0], 2, 2))
        refH[..., 0, 0] = hess[..., 0]
        refH[..., 0, 1] = hess[..., 1]
        refH[..., 1, 0] = hess[..., 1]
        refH[..., 1, 1] = hess[..., 2]
        d2map = mesh.mapping_mixed_derivative()        # (nc, 2)
        corr = np.zeros((mesh.num_cells, quad.points.shape[0], elem.n_basis, 2, 2))
        cross = np.einsum("ca,cqia->cqi", d2map, self.grad, optimize=True)
        corr[..., 0, 1] = cross
        corr[..., 1, 0] = cross
        inner = refH[None, ...].transpose(0, 2, 1, 3, 4) - corr  # (nc, m, nb, 2, 2)
        hphys = np.einsum("cqum,cqiuv,cqvn->cqimn", inv, inner, inv, optimize=True)
        self.lap = hphys[..., 0, 0] + hphys[..., 1, 1]

    @property
    def n_points(self):
        return self.quad.points.shape[0]

    def field_values(self, coeffs):
        local = coeffs[self.space.cell_dofs]           # (nc, nb)
        return np.einsum("qi,ci->cq", self.phi, local, optimize=True)

    def field_gradients(self, coeffs):
        local = coeffs[self.space.cell_dofs]
        return np.einsum("cqid,ci->cqd", self.grad, local, optimize=True)


def _facet_tables(elem, qorder):
    """Per-local-edge basis tabulations at edge quadrature points.

    Returns (sigma weights, list over edges of (ref_pts, vals, grads, dref)).
    dref is the constant reference tangent d(ref point)/d(sigma).
    """
    p1, w1 = leggauss(qorder)
    corners = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    tables = []
    for e in range(4):
        a, b = corners[e], corners[(e + 1) % 4]
        pts = 0.5 * (1 - p1)[:, None] * a + 0.5 * (1 + p1)[:, None] * b
        vals, grads, _ = elem.tabulate(pts, hessian=False)
        tables.append((pts, vals, grads, 0.5 * (b - a)))
    return w1, tables


@dataclass
class Field:
    """Coefficient vector over a function space."""

    space: FunctionSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.ndofs,):
            raise ValueError("coefficient vector length must equal the dof count")

    def copy(self):
        return Field(self.space, self.coeffs.copy())

    def at_quadrature(self, qorder=None):
        return self.space.tabulation(qorder).field_values(self.coeffs)


def interpolate(expr, space):
    """Nodal interpolant of `expr` (a float or a vectorized f(x, y))."""
    if callable(expr):
        vals, _ = _bilin_at(space.element.nodes)
        node_xy = np.einsum("cvd,nv->cnd", space.mesh.cell_coords, vals)
        fvals = np.asarray(expr(node_xy[..., 0], node_xy[..., 1]), dtype=float)
        fvals = np.broadcast_to(fvals, node_xy.shape[:2])
        if not np.all(np.isfinite(fvals)):
            raise ValueError("expression produced non-finite nodal values")
        coeffs = np.zeros(space.ndofs)
        coeffs[space.cell_dofs.ravel()] = fvals.ravel()
    else:
        coeffs = np.full(space.ndofs, float(expr))
    return Field(space, coeffs)


def integrate(space_or_tab, values, qorder=None):
    """Integral of per-quadrature-point `values` (shape (nc, m)) over the mesh."""
    tab = space_or_tab if isinstance(space_or_tab, CellTabulation) \
        else space_or_tab.tabulation(qorder)
    return float(np.sum(tab.wdet * values))


def l2_norm(field_or_fn, space=None, qorder=None):
    if isinstance(field_or_fn, Field):
        tab = field_or_fn.space.tabulation(qorder)
        vals = tab.field_values(field_or_fn.coeffs)
    else:
        tab = space.tabulation(qorder)
        vals = field_or_fn(tab.xq[..., 0], tab.xq[..., 1])
    return float(np.sqrt(np.sum(tab.wdet * np.asarray(vals) ** 2)))


def l2_relative_error(fld, oracle, reference, qorder=None):
    """|| field - oracle ||_2 / || reference ||_2 at quadrature points."""
    tab = fld.space.tabulation(qorder)
    diff = tab.field_values(fld.coeffs) - oracle(tab.xq[..., 0], tab.xq[..., 1])
    num = np.sqrt(np.sum(tab.wdet * diff ** 2))
    ref = np.asarray(reference(tab.xq[..., 0], tab.xq[..., 1]))
    den = np.sqrt(np.sum(tab.wdet * np.broadcast_to(ref, diff.shape) ** 2))
    if den == 0.0:
        raise ZeroDivisionError("reference norm is zero")
    return float(num / den)


def write_field_csv(fld, path):
    lines = ["dof,x,y,value"]
    for i, ((x, y), v) in enumerate(zip(fld.space.dof_coords, fld.coeffs)):
        lines.append(f"{i},{x!r},{y!r},{v!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_field_vtk(fld, path, name="T"):
    """Legacy VTK dump of the vertex values of a CG field."""
    from .mesh import write_mesh_vtk

    mesh = fld.space.mesh
    if fld.space.family != "cg":
        raise ValueError("VTK point data needs a continuous field")
    write_mesh_vtk(mesh, path, point_data={name: fld.coeffs[: mesh.num_vertices]})
