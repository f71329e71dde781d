"""Assembly of the bilinear forms and block systems for the three spatial
discretizations of the anisotropic heat flux problem:

  primal  -- single CG temperature equation with weak elliptic operators,
  mixed   -- auxiliary scaled directional derivative in dQ_{k-1},
  supg    -- both fields in Q_k with streamline-upwind modified test
             functions on the directional-derivative terms.

Matrices are scipy CSR; element kernels come from :mod:`anisoflux.kernels`
(numba or numpy backend).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import Field, build_space
from .kernels import kernels

__all__ = [
    "Coefficient",
    "Constant",
    "Expr",
    "TemperatureFn",
    "CoefficientSet",
    "BlockSystem",
    "assemble_mass",
    "assemble_perp_stiffness",
    "assemble_dir_gradient",
    "assemble_supg_blocks",
    "assemble_system",
    "schur_complement",
    "export_matrix_market",
]

_KDELTA_FLOOR = 0.0  # kappa_delta is clamped below at this before sqrt


# ----------------------------------------------------------------- coefficients

class Coefficient:
    """Scalar coefficient field: evaluate on (x, y) and optionally on T."""

    is_constant = False

    def eval(self, x, y, T=None):
        raise NotImplementedError

    def dT(self, x, y, T=None):
        """Derivative with respect to temperature (zero unless T-dependent)."""
        return np.zeros(np.shape(x))

    @property
    def temperature_dependent(self):
        return False


class Constant(Coefficient):
    is_constant = True

    def __init__(self, value):
        self.value = float(value)

    def eval(self, x, y, T=None):
        return np.full(np.shape(x), self.value)


class Expr(Coefficient):
    """Coefficient given by a vectorized expression f(x, y); `grad` may supply
    an analytic gradient callable returning (..., 2)."""

    def __init__(self, fn, grad=None):
        self.fn = fn
        self.grad = grad

    def eval(self, x, y, T=None):
        return np.asarray(self.fn(x, y), dtype=float)


class TemperatureFn(Coefficient):
    """Coefficient f(T) with an analytic derivative df(T)."""

    def __init__(self, fn, dfn):
        self.fn = fn
        self.dfn = dfn

    def eval(self, x, y, T=None):
        if T is None:
            raise ValueError("temperature-dependent coefficient needs T values")
        return np.asarray(self.fn(T), dtype=float)

    def dT(self, x, y, T=None):
        return np.asarray(self.dfn(T), dtype=float)

    @property
    def temperature_dependent(self):
        return True


def as_coefficient(obj):
    if isinstance(obj, Coefficient):
        return obj
    if callable(obj):
        return Expr(obj)
    return Constant(obj)


class BField:
    """Unit anisotropy direction b = B/|B|; accepts a constant pair or a
    vectorized B(x, y) returning shape (..., 2)."""

    def __init__(self, b):
        self._const = None
        self._fn = None
        if callable(b):
            self._fn = b
        else:
            v = np.asarray(b, dtype=float)
            self._const = v / np.linalg.norm(v)

    def eval(self, x, y):
        if self._const is not None:
            out = np.empty(np.shape(x) + (2,))
            out[...] = self._const
            return out
        raw = np.asarray(self._fn(x, y), dtype=float)
        norm = np.linalg.norm(raw, axis=-1, keepdims=True)
        return raw / norm


@dataclass
class CoefficientSet:
    """Conductivities, field direction, and stabilization controls.

    kappa_par/kappa_perp: float, f(x, y), or Coefficient (possibly f(T));
    b: constant pair or B(x, y).  tau defaults to the stabilization-parameter
    expression 1/(2/sqrt(dt) + k sqrt(kappa_delta)/dx); pass `tau` to override
    (e.g. Constant(0)).
    """

    kappa_par: object
    kappa_perp: object
    b: object
    tau: object = None
    length_scale_mode: str = "sqrt_area"
    kappa_perp_grad: object = None   # optional analytic grad of kappa_perp

    def __post_init__(self):
        self.kappa_par = as_coefficient(self.kappa_par)
        self.kappa_perp = as_coefficient(self.kappa_perp)
        if not isinstance(self.b, BField):
            self.b = BField(self.b)
        if self.tau is not None:
            self.tau = as_coefficient(self.tau)

    @property
    def temperature_dependent(self):
        return (self.kappa_par.temperature_dependent
                or self.kappa_perp.temperature_dependent)


@dataclass
class QPCoefficients:
    """Coefficient fields materialized at quadrature points."""

    kperp: np.ndarray           # (nc, m)
    kdelta: np.ndarray          # (nc, m)
    s: np.ndarray               # (nc, m, 2)
    sg_scale: np.ndarray        # sqrt(kdelta) (nc, m)
    tau: np.ndarray = None      # (nc, m) when SUPG data requested
    sdt: np.ndarray = None      # s . grad(tau)
    gkperp: np.ndarray = None   # (nc, m, 2)
    n_clamped: int = 0


def coefficients_at_qp(cset, tab, T_lag=None, dt=None, degree=None, supg=False):
    x, y = tab.xq[..., 0], tab.xq[..., 1]
    Tq = gTq = None
    if cset.temperature_dependent:
        if T_lag is None:
            raise ValueError("temperature-dependent coefficients need a lagged field")
        Tq = tab.field_values(T_lag.coeffs)
        gTq = tab.field_gradients(T_lag.coeffs)
    kpar = np.broadcast_to(cset.kappa_par.eval(x, y, Tq), x.shape).astype(float)
    kperp = np.broadcast_to(cset.kappa_perp.eval(x, y, Tq), x.shape).astype(float)
    kdelta = kpar - kperp
    n_clamped = int(np.count_nonzero(kdelta < _KDELTA_FLOOR))
    np.clip(kdelta, _KDELTA_FLOOR, None, out=kdelta)
    sqk = np.sqrt(kdelta)
    bq = cset.b.eval(x, y)
    out = QPCoefficients(kperp=kperp, kdelta=kdelta, s=sqk[..., None] * bq,
                         sg_scale=sqk, n_clamped=n_clamped)
    if not supg:
        return out

    mesh = tab.space.mesh
    if cset.tau is not None:
        out.tau = np.broadcast_to(cset.tau.eval(x, y, Tq), x.shape).astype(float)
        out.sdt = np.zeros_like(out.tau)  # overrides are constants/expressions in x
    else:
        if dt is None or dt <= 0:
            raise ValueError("the stabilization parameter needs a positive time step")
        k = degree if degree is not None else tab.space.degree
        dx = mesh.cell_length_scales(cset.length_scale_mode,
                                     b=None if cset.length_scale_mode == "sqrt_area"
                                     else cset.b.eval)[:, None]
        out.tau = 1.0 / (2.0 / np.sqrt(dt) + k * sqk / dx)
        # grad(tau) through kappa_delta(T) only; dx is cellwise constant
        if cset.temperature_dependent and gTq is not None:
            dkd = cset.kappa_par.dT(x, y, Tq) - cset.kappa_perp.dT(x, y, Tq)
            with np.errstate(divide="ignore", invalid="ignore"):
                dsqk = np.where(kdelta > 1e-300, 0.5 / sqk, 0.0) * dkd
            dtau = -(out.tau ** 2) * (k / dx) * dsqk
            gtau = dtau[..., None] * gTq
            out.sdt = np.einsum("cqd,cqd->cq", out.s, gtau, optimize=True)
        else:
            out.sdt = np.zeros_like(out.tau)
    if cset.kappa_perp_grad is not None:
        out.gkperp = np.asarray(cset.kappa_perp_grad(x, y), dtype=float)
    else:
        out.gkperp = np.zeros(x.shape + (2,))
    return out


# ------------------------------------------------------------------- scatter

def _scatter_pattern(space_t, space_u):
    key = ("scatter", id(space_u))
    pat = space_t._caches.get(key)
    if pat is None:
        rows = np.repeat(space_t.cell_dofs, space_u.cell_dofs.shape[1], axis=1).ravel()
        cols = np.tile(space_u.cell_dofs, (1, space_t.cell_dofs.shape[1])).ravel()
        pat = (rows, cols)
        space_t._caches[key] = pat
    return pat


def _to_csr(elem, space_t, space_u):
    rows, cols = _scatter_pattern(space_t, space_u)
    mat = sp.coo_matrix((elem.ravel(), (rows, cols)),
                        shape=(space_t.ndofs, space_u.ndofs)).tocsr()
    mat.sum_duplicates()
    return mat


def _sg(tab, qp):
    """Directional derivative s . grad(phi) of every basis function."""
    return np.einsum("cqd,cqid->cqi", qp.s, tab.grad, optimize=True)


# --------------------------------------------------------------------- forms

def assemble_mass(space, weight=1.0, qorder=None):
    """Weighted mass matrix M_ab = <phi_a, w phi_b>.  The unweighted matrix
    is cached on the space (it is reassembled every nonlinear iterate
    otherwise)."""
    unweighted = isinstance(weight, (int, float)) and float(weight) == 1.0
    key = ("mass", qorder)
    if unweighted and key in space._caches:
        return space._caches[key]
    tab = space.tabulation(qorder)
    w = as_coefficient(weight)
    wq = np.broadcast_to(w.eval(tab.xq[..., 0], tab.xq[..., 1]),
                         tab.wdet.shape).astype(float)
    elem = kernels.elem_mass(tab.wdet, tab.phi, tab.phi, wq)
    mat = _to_csr(elem, space, space)
    if unweighted:
        space._caches[key] = mat
    return mat


def assemble_perp_stiffness(space, kappa_perp, qorder=None):
    """Isotropic stiffness L_ab = <grad phi_a, kappa_perp grad phi_b>."""
    tab = space.tabulation(qorder)
    w = as_coefficient(kappa_perp)
    wq = np.broadcast_to(w.eval(tab.xq[..., 0], tab.xq[..., 1]),
                         tab.wdet.shape).astype(float)
    elem = kernels.elem_stiffness(tab.wdet, tab.grad, tab.grad, wq)
    return _to_csr(elem, space, space)


def assemble_dir_gradient(space_T, space_z, coeffs, T_lag=None, qorder=None):
    """Directional gradient D_ab = <psi_a, s . grad(phi_b)> mapping the
    temperature space into the auxiliary space."""
    if space_z.mesh is not space_T.mesh:
        raise ValueError("spaces must share a mesh")
    if qorder is None:
        qorder = max(space_T.degree, space_z.degree) + 2
    tab = space_T.tabulation(qorder)
    tabz = space_z.tabulation(qorder)
    qp = coefficients_at_qp(coeffs, tab, T_lag=T_lag)
    elem = kernels.elem_mixed_gradient(tab.wdet, tabz.phi, _sg(tab, qp))
    return _to_csr(elem, space_z, space_T)


def assemble_supg_blocks(space, coeffs, T_lag=None, dt=None, qorder=None):
    """All SUPG-modified operators on a continuous space.

    Returns {"M_a", "M_f", "G_f_par", "G_f_par_b", "L_f_perp"} where
    M_a(chi, v) = <chi + tau s.grad chi, v>, M_f(chi, v) = <chi, v + s.grad(tau v)>,
    G_f_par realizes M_f(s.grad ., .) tested in the auxiliary equation, and
    G_f_par_b is minus the boundary integral of tau eta (s.grad T)(n.s).
    """
    if space.family != "cg":
        raise ValueError("SUPG operators need a continuous space")
    tab = space.tabulation(qorder)
    qp = coefficients_at_qp(coeffs, tab, T_lag=T_lag, dt=dt, supg=True)
    sg = _sg(tab, qp)
    blocks = {
        "M_a": _to_csr(kernels.elem_supg_adv_mass(tab.wdet, tab.phi, sg, qp.tau),
                       space, space),
        "M_f": _to_csr(kernels.elem_supg_flux_mass(tab.wdet, tab.phi, sg, qp.tau, qp.sdt),
                       space, space),
        "G_f_par": _to_csr(kernels.elem_supg_gradient(tab.wdet, tab.phi, sg, qp.tau, qp.sdt),
                           space, space),
        "L_f_perp": _to_csr(kernels.elem_supg_perp(tab.wdet, tab.grad, sg, tab.lap,
                                                   qp.tau, qp.kperp, qp.gkperp),
                            space, space),
    }
    blocks["G_f_par_b"] = -_boundary_dir_gradient(space, coeffs, T_lag, dt, qorder)
    return blocks


def _boundary_dir_gradient(space, coeffs, T_lag, dt, qorder=None):
    """Facet matrix B_ab = int_dOmega tau phi_a (s.grad phi_b)(n.s) dS."""
    mesh = space.mesh
    if qorder is None:
        qorder = space.degree + 2
    w1, tables = space.facet_tabulation(qorder)
    n_edge_pts = len(w1)
    rows, cols, vals = [], [], []
    dx_all = mesh.cell_length_scales(coeffs.length_scale_mode)
    k = space.degree
    for facets in mesh.boundary_facets.values():
        for cell, ledge in facets:
            ref_pts, phiv, refgrad, dref = tables[ledge]
            corners = mesh.cell_coords[cell]
            from .mesh import _bilinear_tab

            bvals, bgrads = _bilinear_tab(ref_pts)
            xq = bvals @ corners
            jac = np.einsum("vd,mve->mde", corners, bgrads)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            inv = np.empty_like(jac)
            inv[:, 0, 0] = jac[:, 1, 1]
            inv[:, 0, 1] = -jac[:, 0, 1]
            inv[:, 1, 0] = -jac[:, 1, 0]
            inv[:, 1, 1] = jac[:, 0, 0]
            inv /= det[:, None, None]
            tang = np.einsum("mde,e->md", jac, dref)
            ds = np.linalg.norm(tang, axis=1)
            normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / ds[:, None]
            # coefficient data at the facet points
            xf, yf = xq[:, 0], xq[:, 1]
            Tq = None
            if coeffs.temperature_dependent:
                Tq = phiv.T @ T_lag.coeffs[space.cell_dofs[cell]]
            kpar = np.broadcast_to(coeffs.kappa_par.eval(xf, yf, Tq), xf.shape)
            kperp = np.broadcast_to(coeffs.kappa_perp.eval(xf, yf, Tq), xf.shape)
            kdelta = np.clip(kpar - kperp, _KDELTA_FLOOR, None)
            sfac = np.sqrt(kdelta)
            bq = coeffs.b.eval(xf, yf)
            s = sfac[:, None] * bq
            if coeffs.tau is not None:
                tau = np.broadcast_to(coeffs.tau.eval(xf, yf, Tq), xf.shape)
            else:
                tau = 1.0 / (2.0 / np.sqrt(dt) + k * sfac / dx_all[cell])
            ns = np.einsum("md,md->m", normal, s)
            pgrad = np.einsum("med,ime->imd", inv, refgrad)     # J^{-T} grad
            sg = np.einsum("md,imd->im", s, pgrad)              # (nb, m)
            w = w1 * ds * tau * ns
            elem = np.einsum("m,am,bm->ab", w, phiv, sg)
            dofs = space.cell_dofs[cell]
            rows.append(np.repeat(dofs, len(dofs)))
            cols.append(np.tile(dofs, len(dofs)))
            vals.append(elem.ravel())
    if not rows:
        return sp.csr_matrix((space.ndofs, space.ndofs))
    mat = sp.coo_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(space.ndofs, space.ndofs)).tocsr()
    mat.sum_duplicates()
    return mat


# --------------------------------------------------------------- block system

@dataclass
class BlockSystem:
    """Assembled (1x1 or 2x2) sparse system with Dirichlet data applied.

    For block systems the layout is [[A11, A12], [A21, A22]] acting on
    (T, zeta).  `time_mass` keeps the un-constrained (1/dt)-scaled mass block
    so the right-hand side can be rebuilt cheaply across time steps with an
    unchanged operator.
    """

    A11: sp.csr_matrix
    A12: sp.csr_matrix = None
    A21: sp.csr_matrix = None
    A22: sp.csr_matrix = None
    rhs_T: np.ndarray = None
    rhs_z: np.ndarray = None
    bc_dofs: np.ndarray = None
    bc_values: np.ndarray = None
    space_T: object = None
    space_z: object = None
    time_mass: sp.csr_matrix = None
    source_builder: object = None
    bc_correction: np.ndarray = None  # -A_pre g from symmetric Dirichlet elimination
    n_clamped: int = 0

    @property
    def is_block(self):
        return self.A22 is not None

    def matrix(self):
        if not self.is_block:
            return self.A11
        if getattr(self, "_matrix", None) is None:
            self._matrix = sp.bmat([[self.A11, self.A12], [self.A21, self.A22]],
                                   format="csr")
        return self._matrix

    def rhs(self):
        if not self.is_block:
            return self.rhs_T
        return np.concatenate([self.rhs_T, self.rhs_z])

    def split(self, x):
        n = self.space_T.ndofs
        if not self.is_block:
            return x, None
        return x[:n], x[n:]

    def rebuild_rhs(self, T_prev=None, source_qp=None):
        """Recompute the right-hand side for a new previous state / source."""
        rt = np.zeros(self.space_T.ndofs)
        if self.time_mass is not None and T_prev is not None:
            rt += self.time_mass @ T_prev.coeffs
        if source_qp is not None and self.source_builder is not None:
            rt += self.source_builder(source_qp)
        if self.bc_correction is not None:
            rt += self.bc_correction
        if self.bc_dofs is not None and len(self.bc_dofs):
            rt[self.bc_dofs] = self.bc_values
        self.rhs_T = rt
        if self.is_block:
            self.rhs_z = np.zeros(self.space_z.ndofs)
        return self


def _bc_data(space, bc):
    """Collect (dofs, values) for a {tag: value|callable} Dirichlet spec."""
    if not bc:
        return np.array([], dtype=np.int64), np.array([])
    dofs, vals = [], []
    for tag, val in bc.items():
        if tag not in space.boundary_dofs:
            raise ValueError(f"mesh has no boundary tag {tag!r}")
        d = space.boundary_dofs[tag]
        xy = space.dof_coords[d]
        v = val(xy[:, 0], xy[:, 1]) if callable(val) else np.full(len(d), float(val))
        dofs.append(d)
        vals.append(np.broadcast_to(v, d.shape))
    dofs = np.concatenate(dofs)
    vals = np.concatenate(vals)
    dofs, idx = np.unique(dofs, return_index=True)
    return dofs, vals[idx]


def _row_mask_matrices(n, bc_dofs):
    keep = np.ones(n)
    keep[bc_dofs] = 0.0
    D_keep = sp.diags(keep, format="csr")
    put = np.zeros(n)
    put[bc_dofs] = 1.0
    D_bc = sp.diags(put, format="csr")
    return D_keep, D_bc


def assemble_system(disc, coeffs, T_lag, dt=None, bc=None, source=None, *,
                    zeta_space=None, T_prev=None, qorder=None):
    """Assemble the full (block) system for one implicit solve.

    disc: "primal" | "mixed" | "supg".  `dt` scales the mass block by 1/dt
    (None assembles the spatial operator only).  `source` is a vectorized
    f(x, y) or a per-quadrature-point array; `T_prev` adds (1/dt) M T_prev to
    the right-hand side.  Strong Dirichlet rows are replaced by identity;
    the primal form is additionally column-symmetrized.
    """
    if disc not in ("primal", "mixed", "supg"):
        raise ValueError(f"unknown discretization {disc!r}")
    if dt is not None and dt <= 0:
        raise ValueError("time step must be positive")
    space = T_lag.space
    if space.family != "cg":
        raise ValueError("the temperature space must be continuous")
    k = space.degree
    tab = space.tabulation(qorder)
    bc_dofs, bc_vals = _bc_data(space, bc)

    source_qp = None
    if source is not None:
        if callable(source):
            source_qp = np.broadcast_to(
                np.asarray(source(tab.xq[..., 0], tab.xq[..., 1]), dtype=float),
                tab.wdet.shape)
        else:
            source_qp = np.asarray(source, dtype=float)

    if disc == "primal":
        qp = coefficients_at_qp(coeffs, tab, T_lag=T_lag)
        sg = _sg(tab, qp)
        K = _to_csr(kernels.elem_par_stiffness(tab.wdet, sg), space, space)
        A = K
        if np.any(qp.kperp):
            A = A + _to_csr(
                kernels.elem_stiffness(tab.wdet, tab.grad, tab.grad, qp.kperp),
                space, space)
        M = None
        if dt is not None:
            M = assemble_mass(space, qorder=qorder) / dt
            A = A + M

        def src_vec(sq, _tab=tab):
            return _gather_vec(kernels.vec_mass(_tab.wdet, _tab.phi, sq), space)

        rhs = np.zeros(space.ndofs)
        if M is not None and T_prev is not None:
            rhs += M @ T_prev.coeffs
        if source_qp is not None:
            rhs += src_vec(source_qp)
        # symmetric Dirichlet application keeps the operator SPD
        bc_corr = None
        if len(bc_dofs):
            g = np.zeros(space.ndofs)
            g[bc_dofs] = bc_vals
            bc_corr = -(A @ g)
            rhs += bc_corr
            D_keep, D_bc = _row_mask_matrices(space.ndofs, bc_dofs)
            A = D_keep @ A @ D_keep + D_bc
            rhs[bc_dofs] = bc_vals
        sys = BlockSystem(A11=A, rhs_T=rhs, bc_dofs=bc_dofs, bc_values=bc_vals,
                          space_T=space, time_mass=M, source_builder=src_vec,
                          bc_correction=bc_corr, n_clamped=qp.n_clamped)
        return sys

    # ---- block forms
    if disc == "mixed":
        if zeta_space is None:
            zeta_space = build_space(space.mesh, "dq", k - 1)
        if zeta_space.mesh is not space.mesh:
            raise ValueError("temperature and auxiliary spaces must share a mesh")
        if zeta_space.family == "dq" and zeta_space.degree != k - 1:
            raise ValueError("the mixed form pairs Q_k with dQ_(k-1)")
        if zeta_space.family == "cg" and zeta_space.degree != k:
            raise ValueError("a continuous auxiliary space must match the temperature degree")
        qp = coefficients_at_qp(coeffs, tab, T_lag=T_lag)
        sg = _sg(tab, qp)
        tabz = zeta_space.tabulation(qorder if qorder is not None else k + 2)
        D = _to_csr(kernels.elem_mixed_gradient(tab.wdet, tabz.phi, sg),
                    zeta_space, space)
        if np.any(qp.kperp):
            A11 = _to_csr(kernels.elem_stiffness(tab.wdet, tab.grad, tab.grad,
                                                 qp.kperp), space, space)
        else:
            A11 = sp.csr_matrix((space.ndofs, space.ndofs))
        Mz = assemble_mass(zeta_space, qorder=qorder if qorder is not None else k + 2)
        M = None
        if dt is not None:
            M = assemble_mass(space, qorder=qorder) / dt
            A11 = A11 + M
        A12 = D.T.tocsr()
        A21 = (-D).tocsr()
        A22 = Mz

        def src_vec(sq, _tab=tab):
            return _gather_vec(kernels.vec_mass(_tab.wdet, _tab.phi, sq), space)

        n_clamped = qp.n_clamped
    else:  # supg
        if zeta_space is None:
            zeta_space = space
        if zeta_space is not space:
            if zeta_space.family != "cg" or zeta_space.degree != k \
                    or zeta_space.mesh is not space.mesh:
                raise ValueError("the SUPG form uses the temperature space for zeta")
            zeta_space = space
        qp = coefficients_at_qp(coeffs, tab, T_lag=T_lag, dt=dt, supg=True)
        sg = _sg(tab, qp)
        Ma = _to_csr(kernels.elem_supg_adv_mass(tab.wdet, tab.phi, sg, qp.tau),
                     space, space)
        Mf = _to_csr(kernels.elem_supg_flux_mass(tab.wdet, tab.phi, sg, qp.tau, qp.sdt),
                     space, space)
        G = _to_csr(kernels.elem_supg_gradient(tab.wdet, tab.phi, sg, qp.tau, qp.sdt),
                    space, space)
        if np.any(qp.kperp) or np.any(qp.gkperp):
            Lf = _to_csr(kernels.elem_supg_perp(tab.wdet, tab.grad, sg, tab.lap,
                                                qp.tau, qp.kperp, qp.gkperp),
                         space, space)
        else:
            Lf = sp.csr_matrix((space.ndofs, space.ndofs))
        Gb = -_boundary_dir_gradient(space, coeffs, T_lag, dt, qorder)
        A11 = Lf
        M = None
        if dt is not None:
            M = Ma / dt
            A11 = A11 + M
        A12 = G.T.tocsr()
        A21 = (-G - Gb).tocsr()
        A22 = Mf

        def src_vec(sq, _tab=tab, _sg=sg, _tau=qp.tau):
            return _gather_vec(kernels.vec_supg_mass(_tab.wdet, _tab.phi, _sg, _tau, sq),
                               space)

        n_clamped = qp.n_clamped

    rhs_T = np.zeros(space.ndofs)
    if M is not None and T_prev is not None:
        rhs_T += M @ T_prev.coeffs
    if source_qp is not None:
        rhs_T += src_vec(source_qp)
    rhs_z = np.zeros(zeta_space.ndofs)
    if len(bc_dofs):
        D_keep, D_bc = _row_mask_matrices(space.ndofs, bc_dofs)
        A11 = (D_keep @ A11 + D_bc).tocsr()
        A12 = (D_keep @ A12).tocsr()
        rhs_T[bc_dofs] = bc_vals
    return BlockSystem(A11=A11, A12=A12, A21=A21, A22=A22, rhs_T=rhs_T, rhs_z=rhs_z,
                       bc_dofs=bc_dofs, bc_values=bc_vals, space_T=space,
                       space_z=zeta_space, time_mass=M, source_builder=src_vec,
                       n_clamped=n_clamped)


def _gather_vec(elem_vec, space):
    out = np.zeros(space.ndofs)
    np.add.at(out, space.cell_dofs.ravel(), elem_vec.ravel())
    return out


def schur_complement(sys, max_size=6000):
    """Temperature-only operator A11 - A12 A22^{-1} A21 (dense elimination;
    diagnostic use on small systems)."""
    if not sys.is_block:
        raise ValueError("the primal system has no auxiliary block")
    n = sys.A22.shape[0]
    if n > max_size:
        raise ValueError(f"A22 too large for dense elimination ({n} dofs)")
    A22 = sys.A22.toarray()
    try:
        X = np.linalg.solve(A22, sys.A21.toarray())
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular auxiliary mass block") from exc
    S = sys.A11.toarray() - sys.A12.toarray() @ X
    return sp.csr_matrix(S)


def export_matrix_market(mat, path):
    from scipy.io import mmwrite

    mmwrite(str(path), sp.coo_matrix(mat))
