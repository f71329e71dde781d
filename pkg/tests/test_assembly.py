import numpy as np
import pytest
import scipy.sparse.linalg as spla

from anisoflux.assembly import (CoefficientSet, Constant, assemble_dir_gradient,
                                assemble_mass, assemble_perp_stiffness,
                                assemble_supg_blocks, assemble_system,
                                export_matrix_market, schur_complement)
from anisoflux.fespace import build_space, interpolate
from anisoflux.mesh import build_rect_mesh

from helpers_dense import dense_boundary_supg, dense_form


def maxabs(mat):
    return 0.0 if mat.nnz == 0 else np.abs(mat.data).max()


def rel_diff(sparse, dense):
    ref = np.abs(dense).max()
    return np.abs(sparse.toarray() - dense).max() / (ref if ref > 0 else 1.0)


class TestMass:
    def test_unit_cell_entry_sum_is_area(self):
        sp1 = build_space(build_rect_mesh(1, 1, 1.0, 1.0), "cg", 1)
        assert assemble_mass(sp1).sum() == pytest.approx(1.0, abs=1e-14)

    def test_unit_cell_closed_form(self):
        mesh = build_rect_mesh(1, 1, 1.0, 1.0)
        sp1 = build_space(mesh, "cg", 1)
        M = assemble_mass(sp1).toarray()
        perm = mesh.cells[0]  # counterclockwise corner order
        ref = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36.0
        assert np.abs(M[np.ix_(perm, perm)] - ref).max() < 1e-15

    def test_zero_weight(self, q2_space):
        assert maxabs(assemble_mass(q2_space, weight=0.0)) == 0.0

    def test_symmetry(self, q2_space):
        M = assemble_mass(q2_space, weight=lambda x, y: 1.0 + x * y)
        assert maxabs(M - M.T) < 1e-15


class TestPerpStiffness:
    def test_constants_in_nullspace(self, q2_space):
        L = assemble_perp_stiffness(q2_space, 1.0)
        assert np.abs(L @ np.ones(q2_space.ndofs)).max() < 1e-12

    def test_symmetry(self, q2_space):
        L = assemble_perp_stiffness(q2_space, 0.7)
        assert maxabs(L - L.T) < 1e-13

    def test_linearity_in_coefficient(self, q2_space):
        L1 = assemble_perp_stiffness(q2_space, 1.0)
        L2 = assemble_perp_stiffness(q2_space, 2.0)
        assert maxabs(L2 - 2 * L1) < 1e-13


class TestDirGradient:
    def test_recovers_unit_slope(self, perturbed_mesh_3x3, q2_space):
        spz = build_space(perturbed_mesh_3x3, "dq", 1)
        cs = CoefficientSet(kappa_par=1.0, kappa_perp=0.0, b=(1.0, 0.0))
        D = assemble_dir_gradient(q2_space, spz, cs)
        T = interpolate(lambda x, y: x, q2_space)
        z = spla.spsolve(assemble_mass(spz).tocsc(), D @ T.coeffs)
        assert np.abs(z - 1.0).max() < 1e-10

    def test_orthogonal_field_annihilates(self, perturbed_mesh_3x3, q2_space):
        spz = build_space(perturbed_mesh_3x3, "dq", 1)
        cs = CoefficientSet(kappa_par=1.0, kappa_perp=0.0, b=(1.0, 0.0))
        D = assemble_dir_gradient(q2_space, spz, cs)
        T = interpolate(lambda x, y: y, q2_space)
        assert np.abs(D @ T.coeffs).max() < 1e-13

    def test_sqrt_kappa_scaling(self, perturbed_mesh_3x3, q2_space):
        spz = build_space(perturbed_mesh_3x3, "dq", 1)
        cs1 = CoefficientSet(kappa_par=1.0, kappa_perp=0.0, b=(0.8, 0.6))
        cs4 = CoefficientSet(kappa_par=4.0, kappa_perp=0.0, b=(0.8, 0.6))
        D1 = assemble_dir_gradient(q2_space, spz, cs1)
        D4 = assemble_dir_gradient(q2_space, spz, cs4)
        assert maxabs(D4 - 2.0 * D1) < 1e-12


class TestSupgBlocks:
    def test_tau_zero_reductions(self, q2_space):
        cs = CoefficientSet(kappa_par=1.3, kappa_perp=0.3, b=(0.6, 0.8),
                            tau=Constant(0.0))
        B = assemble_supg_blocks(q2_space, cs)
        M = assemble_mass(q2_space)
        L = assemble_perp_stiffness(q2_space, 0.3)
        assert maxabs(B["M_a"] - M) == 0.0
        assert maxabs(B["M_f"] - M) == 0.0
        assert maxabs(B["L_f_perp"] - L) < 1e-14
        assert maxabs(B["G_f_par_b"]) == 0.0

    def test_adjoint_identity_constant_tau(self, q2_space):
        cs = CoefficientSet(kappa_par=2.0, kappa_perp=0.5, b=(0.6, 0.8),
                            tau=Constant(0.07))
        B = assemble_supg_blocks(q2_space, cs)
        assert maxabs(B["M_f"] - B["M_a"].T) < 1e-13

    def test_gradient_annihilates_constants(self, q2_space):
        cs = CoefficientSet(kappa_par=2.0, kappa_perp=0.1, b=(0.6, 0.8),
                            tau=Constant(0.05))
        B = assemble_supg_blocks(q2_space, cs)
        assert np.abs(B["G_f_par"] @ np.ones(q2_space.ndofs)).max() < 1e-13

    def test_tau_scaling_of_flux_mass(self, q2_space):
        # entries of (M_f - M) scale linearly in a constant tau
        cs1 = CoefficientSet(kappa_par=2.0, kappa_perp=0.0, b=(0.6, 0.8),
                             tau=Constant(0.01))
        cs3 = CoefficientSet(kappa_par=2.0, kappa_perp=0.0, b=(0.6, 0.8),
                             tau=Constant(0.03))
        M = assemble_mass(q2_space)
        D1 = assemble_supg_blocks(q2_space, cs1)["M_f"] - M
        D3 = assemble_supg_blocks(q2_space, cs3)["M_f"] - M
        assert maxabs(D3 - 3.0 * D1) <= 1e-12 * maxabs(D1)


# --------- dense brute-force equivalence (independent oracle), <= 4x4 meshes

@pytest.fixture(scope="module", params=[(2, 2, 0.0, 0), (4, 4, 0.18, 3)],
                ids=["uniform2x2", "perturbed4x4"])
def dense_setup(request):
    nx, ny, f, seed = request.param
    mesh = build_rect_mesh(nx, ny, 1.0, 1.0, perturb_factor=f, seed=seed)
    space = build_space(mesh, "cg", 2)
    spz = build_space(mesh, "dq", 1)
    b = np.array([0.6, 0.8])
    kpar, kperp, tau = 2.0, 0.4, 0.05
    cs = CoefficientSet(kappa_par=kpar, kappa_perp=kperp, b=tuple(b),
                        tau=Constant(tau))
    s = np.sqrt(kpar - kperp) * b
    return mesh, space, spz, cs, s, kperp, tau


def test_dense_oracle_mass(dense_setup):
    mesh, space, _, _, _, _, _ = dense_setup
    ref = dense_form(mesh, 2, 2, 4, lambda x, vt, gt, lt, vu, gu, lu:
                     np.outer(vt, vu), space_t=space, space_u=space)
    assert rel_diff(assemble_mass(space), ref) < 1e-13


def test_dense_oracle_perp_stiffness(dense_setup):
    mesh, space, _, _, _, kperp, _ = dense_setup
    ref = dense_form(mesh, 2, 2, 4, lambda x, vt, gt, lt, vu, gu, lu:
                     kperp * gt @ gu.T, space_t=space, space_u=space)
    assert rel_diff(assemble_perp_stiffness(space, kperp), ref) < 1e-13


def test_dense_oracle_dir_gradient(dense_setup):
    mesh, space, spz, cs, s, _, _ = dense_setup
    ref = dense_form(mesh, 1, 2, 4, lambda x, vt, gt, lt, vu, gu, lu:
                     np.outer(vt, gu @ s), family_t="dq",
                     space_t=spz, space_u=space)
    assert rel_diff(assemble_dir_gradient(space, spz, cs), ref) < 1e-13


def test_dense_oracle_par_stiffness(dense_setup):
    mesh, space, _, cs, s, _, _ = dense_setup
    dummy = interpolate(0.0, space)
    sysb = assemble_system("primal", cs, dummy, dt=None)
    ref = dense_form(mesh, 2, 2, 4, lambda x, vt, gt, lt, vu, gu, lu:
                     np.outer(gt @ s, gu @ s), space_t=space, space_u=space)
    # kappa_perp contribution added separately
    ref += dense_form(mesh, 2, 2, 4, lambda x, vt, gt, lt, vu, gu, lu:
                      cs.kappa_perp.value * gt @ gu.T,
                      space_t=space, space_u=space)
    assert rel_diff(sysb.A11, ref) < 1e-13


def test_dense_oracle_supg_blocks(dense_setup):
    mesh, space, _, cs, s, kperp, tau = dense_setup
    B = assemble_supg_blocks(space, cs)

    ma = dense_form(mesh, 2, 2, 4, lambda x, vt, gt, lt, vu, gu, lu:
                    np.outer(vt + tau * (gt @ s), vu),
                    space_t=space, space_u=space)
    assert rel_diff(B["M_a"], ma) < 1e-13

    mf = dense_form(mesh, 2, 2, 4, lambda x, vt, gt, lt, vu, gu, lu:
                    np.outer(vt, vu + tau * (gu @ s)),
                    space_t=space, space_u=space)
    assert rel_diff(B["M_f"], mf) < 1e-13

    g = dense_form(mesh, 2, 2, 4, lambda x, vt, gt, lt, vu, gu, lu:
                   np.outer(vt + tau * (gt @ s), gu @ s),
                   space_t=space, space_u=space)
    assert rel_diff(B["G_f_par"], g) < 1e-13

    lf = dense_form(mesh, 2, 2, 4, lambda x, vt, gt, lt, vu, gu, lu:
                    kperp * gt @ gu.T - tau * np.outer(gt @ s, kperp * lu),
                    space_t=space, space_u=space)
    assert rel_diff(B["L_f_perp"], lf) < 1e-12

    bmat = dense_boundary_supg(mesh, space, 4, lambda x, y: s,
                               lambda x, y: tau)
    assert rel_diff(-B["G_f_par_b"], bmat) < 1e-13


def test_dense_oracle_dg_mass(dense_setup):
    mesh, _, spz, _, _, _, _ = dense_setup
    ref = dense_form(mesh, 1, 1, 4, lambda x, vt, gt, lt, vu, gu, lu:
                     np.outer(vt, vu), family_t="dq", family_u="dq",
                     space_t=spz, space_u=spz)
    assert rel_diff(assemble_mass(spz, qorder=4), ref) < 1e-13


# --------------------------------------------------------------- systems

class TestSystems:
    def test_supg_tau0_matches_cg_auxiliary_mixed(self, perturbed_mesh_3x3):
        space = build_space(perturbed_mesh_3x3, "cg", 2)
        cs0 = CoefficientSet(kappa_par=3.0, kappa_perp=0.2, b=(0.6, 0.8),
                             tau=Constant(0.0))
        T = interpolate(lambda x, y: 1.0 + x + y * y, space)
        bc = {t: 0.5 for t in ("left", "right", "bottom", "top")}
        sup = assemble_system("supg", cs0, T, dt=0.1, bc=bc, zeta_space=space,
                              T_prev=T)
        mix = assemble_system("mixed", cs0, T, dt=0.1, bc=bc, zeta_space=space,
                              T_prev=T)
        for a, b_ in ((sup.A11, mix.A11), (sup.A12, mix.A12),
                      (sup.A21, mix.A21), (sup.A22, mix.A22)):
            assert maxabs(a - b_) <= 1e-12 * max(maxabs(b_), 1.0)
        assert np.abs(sup.rhs_T - mix.rhs_T).max() < 1e-12

    def test_mixed_offdiagonal_antisymmetry(self, perturbed_mesh_3x3):
        space = build_space(perturbed_mesh_3x3, "cg", 2)
        spz = build_space(perturbed_mesh_3x3, "dq", 1)
        cs = CoefficientSet(kappa_par=5.0, kappa_perp=0.1, b=(0.6, 0.8))
        T = interpolate(1.0, space)
        bc = {t: 1.0 for t in ("left", "right", "bottom", "top")}
        sysb = assemble_system("mixed", cs, T, dt=0.2, bc=bc, zeta_space=spz)
        interior = np.setdiff1d(np.arange(space.ndofs), sysb.bc_dofs)
        diff = (sysb.A12 + sysb.A21.T)[interior, :]
        assert maxabs(diff) < 1e-13

    def test_primal_system_spd(self):
        mesh = build_rect_mesh(3, 3, 1.0, 1.0)
        space = build_space(mesh, "cg", 2)
        cs = CoefficientSet(kappa_par=4.0, kappa_perp=0.5, b=(0.6, 0.8))
        T = interpolate(0.0, space)
        bc = {t: 0.0 for t in ("left", "right", "bottom", "top")}
        sysb = assemble_system("primal", cs, T, dt=0.05, bc=bc)
        A = sysb.A11.toarray()
        assert np.abs(A - A.T).max() < 1e-12
        np.linalg.cholesky(A)  # SPD or raises

    def test_conservation_row_sums_periodic(self):
        mesh = build_rect_mesh(4, 4, 1.0, 1.0, periodic_x=True, periodic_y=True,
                               perturb_factor=0.1, seed=2)
        space = build_space(mesh, "cg", 2)
        ones = np.ones(space.ndofs)
        cs = CoefficientSet(kappa_par=3.0, kappa_perp=0.2, b=(0.6, 0.8))
        T = interpolate(lambda x, y: np.sin(2 * np.pi * x), space)
        for disc, spz in (("primal", None),
                          ("mixed", build_space(mesh, "dq", 1)),
                          ("supg", space)):
            sysb = assemble_system(disc, cs, T, dt=0.37 if disc == "supg" else None,
                                   zeta_space=spz)
            A11 = sysb.A11
            if disc == "supg":
                # remove the (1/dt) M_a part: test the spatial operator alone
                A11 = A11 - sysb.time_mass
            lhs = np.abs(ones @ A11).max()
            if sysb.is_block:
                lhs = max(lhs, np.abs(ones @ sysb.A12).max())
            assert lhs < 1e-12

    def test_rejects_bad_inputs(self, q2_space):
        cs = CoefficientSet(kappa_par=1.0, kappa_perp=0.0, b=(1.0, 0.0))
        T = interpolate(0.0, q2_space)
        with pytest.raises(ValueError):
            assemble_system("primal", cs, T, dt=-0.1)
        with pytest.raises(ValueError):
            assemble_system("upwind", cs, T, dt=0.1)
        spz_bad = build_space(q2_space.mesh, "dq", 0)
        with pytest.raises(ValueError):
            assemble_system("mixed", cs, T, dt=0.1, zeta_space=spz_bad)
        with pytest.raises(ValueError):
            assemble_system("supg", cs, T, dt=0.1,
                            zeta_space=build_space(q2_space.mesh, "cg", 1))


class TestSchur:
    def _mixed_system(self, nx=6, ny=6, dt=0.1):
        mesh = build_rect_mesh(nx, ny, 1.0, 1.0, periodic_x=True, periodic_y=True)
        space = build_space(mesh, "cg", 2)
        spz = build_space(mesh, "dq", 1)
        cs = CoefficientSet(kappa_par=8.0, kappa_perp=0.05, b=(0.6, 0.8))
        T = interpolate(1.0, space)
        return assemble_system("mixed", cs, T, dt=dt, zeta_space=spz)

    def test_mixed_schur_cholesky(self):
        S = schur_complement(self._mixed_system()).toarray()
        assert np.abs(S - S.T).max() < 1e-10 * np.abs(S).max()
        np.linalg.cholesky(0.5 * (S + S.T))

    def test_supg_tau0_schur_matches_mixed_cg_aux(self):
        mesh = build_rect_mesh(4, 4, 1.0, 1.0, periodic_x=True, periodic_y=True)
        space = build_space(mesh, "cg", 2)
        cs0 = CoefficientSet(kappa_par=8.0, kappa_perp=0.05, b=(0.6, 0.8),
                             tau=Constant(0.0))
        T = interpolate(1.0, space)
        sup = assemble_system("supg", cs0, T, dt=0.1, zeta_space=space)
        mix = assemble_system("mixed", cs0, T, dt=0.1, zeta_space=space)
        S1 = schur_complement(sup).toarray()
        S2 = schur_complement(mix).toarray()
        assert np.abs(S1 - S2).max() < 1e-12 * np.abs(S2).max()

    def test_supg_schur_asymmetry_grows_with_tau(self):
        mesh = build_rect_mesh(4, 4, 1.0, 1.0, periodic_x=True, periodic_y=True)
        space = build_space(mesh, "cg", 2)
        T = interpolate(1.0, space)
        asym = []
        for tau in (0.0, 1e-3, 1e-2):
            cs = CoefficientSet(kappa_par=8.0, kappa_perp=0.05, b=(0.6, 0.8),
                                tau=Constant(tau))
            S = schur_complement(
                assemble_system("supg", cs, T, dt=0.1, zeta_space=space)).toarray()
            asym.append(np.abs(S - S.T).max() / np.abs(S).max())
        assert asym[0] < 1e-12
        assert asym[0] < asym[1] < asym[2]

    def test_primal_has_no_schur(self, q2_space):
        cs = CoefficientSet(kappa_par=1.0, kappa_perp=0.0, b=(1.0, 0.0))
        sysb = assemble_system("primal", cs, interpolate(0.0, q2_space), dt=0.1)
        with pytest.raises(ValueError):
            schur_complement(sysb)


class TestConsistency:
    """Interior residual of the SUPG form for a smooth manufactured solution
    decays at order >= k under refinement (with zeta solved from its own
    equation)."""

    @staticmethod
    def residual_norm(n, k=2):
        mesh = build_rect_mesh(n, n, 1.0, 1.0)
        space = build_space(mesh, "cg", k)
        th = 0.535
        b = (np.cos(th), np.sin(th))
        kpar, kperp = 3.0, 0.1
        kd = kpar - kperp
        T_star = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)

        def lap(x, y):
            return -2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)

        def bb_dd(x, y):
            s, c = np.sin, np.cos
            txx = -np.pi ** 2 * s(np.pi * x) * s(np.pi * y)
            txy = np.pi ** 2 * c(np.pi * x) * c(np.pi * y)
            tyy = txx
            return b[0] ** 2 * txx + 2 * b[0] * b[1] * txy + b[1] ** 2 * tyy

        source = lambda x, y: -(kd * bb_dd(x, y) + kperp * lap(x, y))
        cs = CoefficientSet(kappa_par=kpar, kappa_perp=kperp, b=b)
        T_h = interpolate(T_star, space)
        sysb = assemble_system("supg", cs, T_h, dt=0.02, zeta_space=space,
                               source=source)
        # zeta from its own equation, then the temperature-row residual
        spatial = sysb.A11 - sysb.time_mass
        zeta = spla.spsolve(sysb.A22.tocsc(), -sysb.A21 @ T_h.coeffs)
        r = spatial @ T_h.coeffs + sysb.A12 @ zeta - sysb.rhs_T
        interior = np.ones(space.ndofs, dtype=bool)
        for tag in space.boundary_dofs.values():
            interior[tag] = False
        return float(np.linalg.norm(r[interior]))

    def test_order_at_least_k(self):
        k = 2
        norms = [self.residual_norm(n, k) for n in (8, 16, 32)]
        orders = np.log2(np.array(norms[:-1]) / norms[1:])
        assert (orders >= k).all(), (norms, orders)


def test_matrix_market_roundtrip(tmp_path, q2_space):
    from scipy.io import mmread

    M = assemble_mass(q2_space)
    export_matrix_market(M, tmp_path / "mass.mtx")
    back = mmread(tmp_path / "mass.mtx").tocsr()
    assert maxabs(M - back) < 1e-15
