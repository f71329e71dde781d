"""Sparse linear solves (direct with Krylov fallback) and the Picard
fixed-point loop for temperature-dependent conductivities."""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockSystem
from .fespace import Field

__all__ = [
    "SolveReport",
    "SingularSystemError",
    "SolverError",
    "Factorization",
    "solve_linear",
    "solve_picard",
]


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual: float
    seconds: float
    converged: bool
    method: str = "direct"
    history: list = field(default_factory=list)


class Factorization:
    """Reusable sparse LU of one operator; safe for many right-hand sides."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("factorization needs a square matrix")
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        self.shape = A.shape

    def solve(self, b):
        return self._lu.solve(b)

    def solve_refined(self, mat, rhs, tol, max_refine=80):
        """Solve mat x = rhs by iterative refinement with this (possibly
        stale) factorization as the inner solver.  Returns (x, residual,
        converged).  The contraction rate is the relative operator drift, so
        refinement beats refactorization even at drifts of tens of percent;
        it bails out once the projected effort stops paying off."""
        x = self._lu.solve(rhs)
        nrm = np.linalg.norm(rhs)
        scale = nrm if nrm > 0 else 1.0
        res = np.linalg.norm(mat @ x - rhs) / scale
        for _ in range(max_refine):
            if res <= tol:
                return x, res, True
            x = x + self._lu.solve(rhs - mat @ x)
            new_res = np.linalg.norm(mat @ x - rhs) / scale
            if new_res > 0.8 * res:  # drifted too far; refactorization is cheaper
                return x, new_res, new_res <= tol
            res = new_res
        return x, res, res <= tol


def _residual(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def solve_linear(A, rhs=None, tol=1e-10, factorization=None):
    """Solve A x = rhs to relative residual `tol`.

    `A` may be a sparse matrix or a BlockSystem (then `rhs` defaults to the
    system's right-hand side and the solution is returned split as (T, zeta)).
    Failures raise; they are never silent.
    """
    t0 = time.perf_counter()
    system = None
    if isinstance(A, BlockSystem):
        system = A
        mat = system.matrix()
        if rhs is None:
            rhs = system.rhs()
    else:
        mat = sp.csr_matrix(A)
        if rhs is None:
            raise ValueError("rhs required for a bare matrix")
    rhs = np.asarray(rhs, dtype=float)

    method = "direct"
    if factorization is None:
        factorization = Factorization(mat)
    x = factorization.solve(rhs)
    res = _residual(mat, x, rhs)
    if not np.isfinite(res) or res > tol:
        # direct factorization fell short; retry with preconditioned GMRES
        method = "gmres+ilu"
        try:
            ilu = spla.spilu(sp.csc_matrix(mat), drop_tol=1e-6, fill_factor=20)
            M = spla.LinearOperator(mat.shape, ilu.solve)
            x, info = spla.gmres(mat, rhs, rtol=tol, restart=200, maxiter=2000, M=M)
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        res = _residual(mat, x, rhs)
        if res > tol or not np.isfinite(res):
            raise SolverError(f"linear solve stalled at relative residual {res:.3e}")
    report = SolveReport(iterations=1, residual=float(res),
                         seconds=time.perf_counter() - t0, converged=True,
                         method=method)
    if system is not None:
        T, z = system.split(x)
        return (T, z), report
    return x, report


def solve_picard(assemble, T_init, rtol=1e-8, max_iter=25, tol_linear=1e-10,
                 lu_cache=None):
    """Fixed-point iteration T_{m+1} = solve(assemble(T_m)).

    Convergence is declared when the current iterate already satisfies the
    freshly assembled system (relative residual <= rtol) or when the update
    norm drops below rtol; for constant coefficients this costs exactly one
    solve.  A factorization handed in via `lu_cache` (a dict, key "lu") is
    reused through iterative refinement while the operator drift allows it.
    Returns ((T, zeta), report); report.converged is False when the iteration
    budget is exhausted, and clear divergence raises.
    """
    t0 = time.perf_counter()
    T = T_init.coeffs.copy()
    z = None
    history = []
    solves = 0
    converged = False
    res = np.inf
    system = None
    for _ in range(max_iter):
        system = assemble(Field(T_init.space, T))
        mat = system.matrix()
        rhs = system.rhs()
        if z is not None or not system.is_block:
            x_cur = T if not system.is_block else np.concatenate([T, z])
            res = _residual(mat, x_cur, rhs)
            if res <= rtol:
                converged = True
                break
        x = None
        if lu_cache is not None:
            stale = lu_cache.get("lu")
            if stale is not None and stale.shape == mat.shape:
                x, _r, ok = stale.solve_refined(mat, rhs, tol_linear)
                if not ok:
                    x = None
        if x is None:
            lu = Factorization(mat)
            if lu_cache is not None:
                lu_cache["lu"] = lu
            x = lu.solve(rhs)
        if _residual(mat, x, rhs) > tol_linear:
            x, _ = solve_linear(mat, rhs, tol=tol_linear)
        T_new, z = system.split(x)
        tn = np.linalg.norm(T)
        diff = np.linalg.norm(T_new - T) / (tn if tn > 0 else 1.0)
        history.append(diff)
        solves += 1
        T = T_new
        if diff <= rtol:
            converged = True
            res = diff
            break
        blowup = np.linalg.norm(T) > 1e8 * (1.0 + np.linalg.norm(T_init.coeffs))
        if blowup or not np.all(np.isfinite(T)):
            raise SolverError(
                f"Picard iteration diverging; update history: {history}")
    report = SolveReport(iterations=solves, residual=float(res),
                         seconds=time.perf_counter() - t0, converged=converged,
                         history=history)
    space_z = getattr(system, "space_z", None) if system is not None else None
    zeta = Field(space_z, z) if (z is not None and space_z is not None) else None
    return (Field(T_init.space, T), zeta), report
