"""Residual and objective traces of the ADMM solver for several rho values.

    python3 scripts/convergence.py --rhos 1e-4,1e-3,1e-2,0.1 --iters 2000 --out conv.csv
"""

import argparse
import csv

import numpy as np

from nlprfuse.linops import SpectralResponse, build_subspace
from nlprfuse.simkit import DegradationSpec, degrade, fusion_operators, make_phantom
from nlprfuse.solver import SolverConfig, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--bands", type=int, default=4)
    ap.add_argument("--rhos", default="1e-4,1e-3,1e-2,0.1")
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--lam2", type=float, default=1e-3)
    ap.add_argument("--out", default="convergence.csv")
    args = ap.parse_args()

    Z = make_phantom("texture", args.size, args.size, args.bands)
    spec = DegradationSpec(factor=2, R=SpectralResponse.gaussian_bands(args.bands, 2), snr_l=30, snr_h=30)
    Yl, Yh = degrade(Z, spec)
    L_s = min(4, args.bands)
    ops = fusion_operators(spec, Z.grid, build_subspace(Yl, L_s), args.bands)

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "iter", "objective", "r1", "r2", "r3"])
        for rho in (float(r) for r in args.rhos.split(",")):
            cfg = SolverConfig(lam1=0.8, lam2=args.lam2, rho=rho, h=0.15, L_s=L_s, max_iters=args.iters)
            res = solve(Yl, Yh, ops, None, cfg)
            for rec in res.log.records:
                w.writerow([rho, rec["iter"], rec["objective"], rec["r1"], rec["r2"], rec["r3"]])
            last = res.log.records[-1]
            print(f"rho={rho:g} iters={len(res.log)} converged={res.converged} "
                  f"objective={last['objective']:.10g} max residual={max(last['r1'], last['r2'], last['r3']):.2e}")
    print("wrote", args.out)


if __name__ == "__main__":
    main()
