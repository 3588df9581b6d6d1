#!/usr/bin/env python3
"""Golden-value check on the straight segment: field at (0.17, 0.62), k = 3."""

import argparse

import numpy as np

from openarc.cli import EXPERIMENTS
from openarc.field import eval_field
from openarc.geometry import build_coarse_mesh, build_geometry
from openarc.solver import ProblemSpec, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nsub", type=int, default=40)
    ap.add_argument("--tol", type=float, default=np.finfo(float).eps)
    args = ap.parse_args()

    cfg = EXPERIMENTS["golden"]
    ref = complex(*cfg["reference"])
    geom = build_geometry(cfg["geometry"])
    mesh = build_coarse_mesh(geom, panels=cfg["mesh"]["panels"])
    poly = lambda z, n: 4 * z.real**3 + 2 * z.real**2 - 3 * z.real - 1
    sol = solve(ProblemSpec("dirichlet", cfg["k"], data=poly), geom, mesh, args.nsub, tol=args.tol)
    u = eval_field(np.array([0.17 + 0.62j]), sol, require_converged=False)[0]
    print(f"N          {mesh.n_nodes}")
    print(f"n_sub      {args.nsub}")
    print(f"iterations {sol.iterations} ({sol.gmres.status})")
    print(f"u          {u.real:.16f} {u.imag:+.16f}i")
    print(f"|u - ref|  {abs(u - ref):.3e}")
    for key, val in sol.timings.items():
        print(f"{key:10s} {val:.3f} s")


if __name__ == "__main__":
    main()
