"""Element-matrix kernels with a numba fast path and a pure-numpy fallback.

Every kernel maps tabulated basis data and coefficient fields at quadrature
points to per-cell dense element matrices (or vectors).  The numba versions
loop over cells in parallel; per-cell outputs are independent, so results do
not depend on the thread count.

Backend selection: set ``ANISOFLUX_BACKEND=numpy`` (or ``numba``) to force a
backend; the default is numba when it is importable.  ``ANISOFLUX_THREADS``
caps the numba thread pool.

Array shape conventions (c = cell, q = quadrature point, a/b/n = basis):
    wdet  (c, q)        quadrature weight times |det J|
    v     (q, n)        basis values on the reference cell
    g     (c, q, n, 2)  physical basis gradients
    sg    (c, q, n)     upwind-directional derivative s . grad(phi)
    lap   (c, q, n)     physical basis Laplacian
    tau   (c, q)        stabilization parameter
    sdt   (c, q)        s . grad(tau)
"""

import os
from types import SimpleNamespace

import numpy as np

__all__ = ["active_backend", "get_kernels", "kernels", "set_threads"]


# ---------------------------------------------------------------- numpy path

def _np_elem_mass(wdet, vt, vu, w):
    return np.einsum("cq,cq,qa,qb->cab", wdet, w, vt, vu, optimize=True)


def _np_elem_stiffness(wdet, gt, gu, w):
    return np.einsum("cq,cq,cqad,cqbd->cab", wdet, w, gt, gu, optimize=True)


def _np_elem_mixed_gradient(wdet, vt, sgu):
    return np.einsum("cq,qa,cqb->cab", wdet, vt, sgu, optimize=True)


def _np_elem_supg_adv_mass(wdet, v, sg, tau):
    # M^a_ab = <phi_a + tau s.grad(phi_a), phi_b>
    mod = v[None, :, :] + tau[:, :, None] * sg
    return np.einsum("cq,cqa,qb->cab", wdet, mod, v, optimize=True)


def _np_elem_supg_flux_mass(wdet, v, sg, tau, sdt):
    # M^f_ab = <phi_a, phi_b (1 + s.grad tau) + tau s.grad(phi_b)>
    mod = v[None, :, :] * (1.0 + sdt)[:, :, None] + tau[:, :, None] * sg
    return np.einsum("cq,qa,cqb->cab", wdet, v, mod, optimize=True)


def _np_elem_supg_gradient(wdet, v, sg, tau, sdt):
    # G_ab = <s.grad(phi_b), phi_a (1 + s.grad tau) + tau s.grad(phi_a)>
    mod = v[None, :, :] * (1.0 + sdt)[:, :, None] + tau[:, :, None] * sg
    return np.einsum("cq,cqa,cqb->cab", wdet, mod, sg, optimize=True)


def _np_elem_par_stiffness(wdet, sg):
    return np.einsum("cq,cqa,cqb->cab", wdet, sg, sg, optimize=True)


def _np_elem_supg_perp(wdet, g, sg, lap, tau, kperp, gk):
    # <grad(phi_a), kperp grad(phi_b)> - <tau s.grad(phi_a), div(kperp grad(phi_b))>
    out = np.einsum("cq,cq,cqad,cqbd->cab", wdet, kperp, g, g, optimize=True)
    div = kperp[:, :, None] * lap + np.einsum("cqd,cqbd->cqb", gk, g, optimize=True)
    out -= np.einsum("cq,cq,cqa,cqb->cab", wdet, tau, sg, div, optimize=True)
    return out


def _np_vec_mass(wdet, v, f):
    return np.einsum("cq,cq,qa->ca", wdet, f, v, optimize=True)


def _np_vec_supg_mass(wdet, v, sg, tau, f):
    mod = v[None, :, :] + tau[:, :, None] * sg
    return np.einsum("cq,cq,cqa->ca", wdet, f, mod, optimize=True)


_NUMPY = SimpleNamespace(
    name="numpy",
    elem_mass=_np_elem_mass,
    elem_stiffness=_np_elem_stiffness,
    elem_mixed_gradient=_np_elem_mixed_gradient,
    elem_supg_adv_mass=_np_elem_supg_adv_mass,
    elem_supg_flux_mass=_np_elem_supg_flux_mass,
    elem_supg_gradient=_np_elem_supg_gradient,
    elem_par_stiffness=_np_elem_par_stiffness,
    elem_supg_perp=_np_elem_supg_perp,
    vec_mass=_np_vec_mass,
    vec_supg_mass=_np_vec_supg_mass,
)


# ---------------------------------------------------------------- numba path

_NUMBA = None


def _build_numba():
    global _NUMBA
    if _NUMBA is not None:
        return _NUMBA
    from numba import njit, prange

    jit = njit(cache=True, parallel=True, fastmath=False)

    @jit
    def elem_mass(wdet, vt, vu, w):
        nc, nq = wdet.shape
        na, nb = vt.shape[1], vu.shape[1]
        out = np.zeros((nc, na, nb))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q] * w[c, q]
                for a in range(na):
                    va = s * vt[q, a]
                    for b in range(nb):
                        out[c, a, b] += va * vu[q, b]
        return out

    @jit
    def elem_stiffness(wdet, gt, gu, w):
        nc, nq = wdet.shape
        na, nb = gt.shape[2], gu.shape[2]
        out = np.zeros((nc, na, nb))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q] * w[c, q]
                for a in range(na):
                    gax = s * gt[c, q, a, 0]
                    gay = s * gt[c, q, a, 1]
                    for b in range(nb):
                        out[c, a, b] += gax * gu[c, q, b, 0] + gay * gu[c, q, b, 1]
        return out

    @jit
    def elem_mixed_gradient(wdet, vt, sgu):
        nc, nq = wdet.shape
        na, nb = vt.shape[1], sgu.shape[2]
        out = np.zeros((nc, na, nb))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q]
                for a in range(na):
                    va = s * vt[q, a]
                    for b in range(nb):
                        out[c, a, b] += va * sgu[c, q, b]
        return out

    @jit
    def elem_supg_adv_mass(wdet, v, sg, tau):
        nc, nq = wdet.shape
        n = v.shape[1]
        out = np.zeros((nc, n, n))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q]
                t = tau[c, q]
                for a in range(n):
                    mod = s * (v[q, a] + t * sg[c, q, a])
                    for b in range(n):
                        out[c, a, b] += mod * v[q, b]
        return out

    @jit
    def elem_supg_flux_mass(wdet, v, sg, tau, sdt):
        nc, nq = wdet.shape
        n = v.shape[1]
        out = np.zeros((nc, n, n))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q]
                t = tau[c, q]
                d = 1.0 + sdt[c, q]
                for a in range(n):
                    va = s * v[q, a]
                    for b in range(n):
                        out[c, a, b] += va * (d * v[q, b] + t * sg[c, q, b])
        return out

    @jit
    def elem_supg_gradient(wdet, v, sg, tau, sdt):
        nc, nq = wdet.shape
        n = v.shape[1]
        out = np.zeros((nc, n, n))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q]
                t = tau[c, q]
                d = 1.0 + sdt[c, q]
                for a in range(n):
                    mod = s * (d * v[q, a] + t * sg[c, q, a])
                    for b in range(n):
                        out[c, a, b] += mod * sg[c, q, b]
        return out

    @jit
    def elem_par_stiffness(wdet, sg):
        nc, nq = wdet.shape
        n = sg.shape[2]
        out = np.zeros((nc, n, n))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q]
                for a in range(n):
                    va = s * sg[c, q, a]
                    for b in range(n):
                        out[c, a, b] += va * sg[c, q, b]
        return out

    @jit
    def elem_supg_perp(wdet, g, sg, lap, tau, kperp, gk):
        nc, nq = wdet.shape
        n = g.shape[2]
        out = np.zeros((nc, n, n))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q]
                kp = kperp[c, q]
                ts = tau[c, q]
                gkx = gk[c, q, 0]
                gky = gk[c, q, 1]
                for a in range(n):
                    gax = g[c, q, a, 0]
                    gay = g[c, q, a, 1]
                    sa = ts * sg[c, q, a]
                    for b in range(n):
                        div = kp * lap[c, q, b] + gkx * g[c, q, b, 0] + gky * g[c, q, b, 1]
                        out[c, a, b] += s * (
                            kp * (gax * g[c, q, b, 0] + gay * g[c, q, b, 1]) - sa * div
                        )
        return out

    @jit
    def vec_mass(wdet, v, f):
        nc, nq = wdet.shape
        n = v.shape[1]
        out = np.zeros((nc, n))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q] * f[c, q]
                for a in range(n):
                    out[c, a] += s * v[q, a]
        return out

    @jit
    def vec_supg_mass(wdet, v, sg, tau, f):
        nc, nq = wdet.shape
        n = v.shape[1]
        out = np.zeros((nc, n))
        for c in prange(nc):
            for q in range(nq):
                s = wdet[c, q] * f[c, q]
                t = tau[c, q]
                for a in range(n):
                    out[c, a] += s * (v[q, a] + t * sg[c, q, a])
        return out

    _NUMBA = SimpleNamespace(
        name="numba",
        elem_mass=elem_mass,
        elem_stiffness=elem_stiffness,
        elem_mixed_gradient=elem_mixed_gradient,
        elem_supg_adv_mass=elem_supg_adv_mass,
        elem_supg_flux_mass=elem_supg_flux_mass,
        elem_supg_gradient=elem_supg_gradient,
        elem_par_stiffness=elem_par_stiffness,
        elem_supg_perp=elem_supg_perp,
        vec_mass=vec_mass,
        vec_supg_mass=vec_supg_mass,
    )
    return _NUMBA


# ------------------------------------------------------------------ selection

def set_threads(n):
    """Cap the numba thread pool; no-op on the numpy backend."""
    try:
        import numba
    except ImportError:
        return
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


def get_kernels(name=None):
    """Return the kernel namespace for `name` ("numpy" | "numba" | None=auto)."""
    if name is None:
        name = os.environ.get("ANISOFLUX_BACKEND", "").strip().lower() or "auto"
    if name == "numpy":
        return _NUMPY
    if name == "numba":
        return _build_numba()
    if name == "auto":
        try:
            return _build_numba()
        except ImportError:
            return _NUMPY
    raise ValueError(f"unknown kernel backend {name!r}")


kernels = get_kernels()

threads_env = os.environ.get("ANISOFLUX_THREADS", "").strip()
if threads_env and kernels.name == "numba":
    set_threads(threads_env)


def active_backend():
    return kernels.name
