#!/usr/bin/env python3
"""Benchmark the element-matrix kernels: numba backend vs numpy fallback.

Builds the flux-surface-sized tabulation (120x96 cells, Q2, 16 quadrature
points), times each kernel on both backends, checks the results agree, and
prints a per-kernel table.  Use --quick for a smaller mesh.
"""

import argparse
import time

import numpy as np

from anisoflux.fespace import build_space
from anisoflux.kernels import get_kernels
from anisoflux.mesh import build_rect_mesh


def build_inputs(nx, ny):
    mesh = build_rect_mesh(nx, ny, 5.0, 4.0, periodic_x=True, periodic_y=True,
                           perturb_factor=0.1, seed=7)
    space = build_space(mesh, "cg", 2)
    tab = space.tabulation()
    rng = np.random.default_rng(1)
    nc, nq = tab.wdet.shape
    nb = tab.phi.shape[1]
    sg = np.einsum("cqd,cqid->cqi", rng.normal(size=(nc, nq, 2)), tab.grad)
    return {
        "wdet": tab.wdet, "vt": tab.phi, "vu": tab.phi, "v": tab.phi,
        "w": rng.uniform(0.5, 1.5, (nc, nq)), "gt": tab.grad, "gu": tab.grad,
        "sg": sg, "sgu": sg[..., : nb], "lap": tab.lap,
        "tau": rng.uniform(0.0, 0.01, (nc, nq)),
        "sdt": rng.normal(scale=0.01, size=(nc, nq)),
        "kperp": rng.uniform(0.0, 0.1, (nc, nq)),
        "gk": rng.normal(scale=0.01, size=(nc, nq, 2)),
        "f": rng.normal(size=(nc, nq)),
    }


KERNELS = [
    ("elem_mass", ("wdet", "vt", "vu", "w")),
    ("elem_stiffness", ("wdet", "gt", "gu", "w")),
    ("elem_mixed_gradient", ("wdet", "vt", "sgu")),
    ("elem_supg_adv_mass", ("wdet", "v", "sg", "tau")),
    ("elem_supg_flux_mass", ("wdet", "v", "sg", "tau", "sdt")),
    ("elem_supg_gradient", ("wdet", "v", "sg", "tau", "sdt")),
    ("elem_par_stiffness", ("wdet", "sg")),
    ("elem_supg_perp", ("wdet", "gt", "sg", "lap", "tau", "kperp", "gk")),
    ("vec_mass", ("wdet", "v", "f")),
    ("vec_supg_mass", ("wdet", "v", "sg", "tau", "f")),
]


def best_of(fn, args, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true", help="use a 30x24 mesh")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    nx, ny = (30, 24) if args.quick else (120, 96)
    data = build_inputs(nx, ny)
    np_k = get_kernels("numpy")
    nb_k = get_kernels("numba")

    print(f"mesh {nx}x{ny}, Q2, {data['wdet'].shape[1]} quadrature points/cell")
    print(f"{'kernel':24s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    worst = 0.0
    for name, argnames in KERNELS:
        call_args = [data[a] for a in argnames]
        getattr(nb_k, name)(*call_args)  # compile outside the timing
        t_np, out_np = best_of(getattr(np_k, name), call_args, args.repeats)
        t_nb, out_nb = best_of(getattr(nb_k, name), call_args, args.repeats)
        scale = np.abs(out_np).max()
        dev = np.abs(out_nb - out_np).max() / (scale if scale > 0 else 1.0)
        worst = max(worst, dev)
        print(f"{name:24s} {t_np * 1e3:8.2f}ms {t_nb * 1e3:8.2f}ms "
              f"{t_np / t_nb:7.2f}x")
    print(f"max relative backend deviation: {worst:.2e}")
    if worst > 1e-12:
        raise SystemExit("backends disagree beyond roundoff")


if __name__ == "__main__":
    main()
