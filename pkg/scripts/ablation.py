"""Regularizer ablation C1..C5 on the texture phantom, each case at its best lam2.

    python3 scripts/ablation.py --guide-bands 1 --h 0.3 --snr 25
"""

import argparse

from nlprfuse.cli import run_ablation
from nlprfuse.linops import SpectralResponse, build_subspace
from nlprfuse.metrics import MetricReport
from nlprfuse.simkit import DegradationSpec, degrade, fusion_operators, make_phantom
from nlprfuse.solver import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--bands", type=int, default=16)
    ap.add_argument("--guide-bands", type=int, default=1)
    ap.add_argument("--snr", type=float, default=25.0)
    ap.add_argument("--h", type=float, default=0.3)
    ap.add_argument("--ls", type=int, default=6)
    ap.add_argument("--rho", type=float, default=1e-2)
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--grid", default="1e-5,3e-5,1e-4,3e-4,1e-3,3e-3")
    args = ap.parse_args()

    Z = make_phantom("texture", args.size, args.size, args.bands)
    spec = DegradationSpec(factor=4, R=SpectralResponse.gaussian_bands(args.bands, args.guide_bands),
                           snr_l=args.snr, snr_h=args.snr, seed=args.seed)
    Yl, Yh = degrade(Z, spec)
    ops = fusion_operators(spec, Z.grid, build_subspace(Yl, args.ls), args.bands)
    base = SolverConfig(lam1=0.8, rho=args.rho, h=args.h, L_s=args.ls, max_iters=args.iters)
    table = run_ablation(Z, Yl, Yh, ops, 4, base, [float(v) for v in args.grid.split(",")])

    print("case,lam2," + ",".join(MetricReport.header()))
    for case, (lam2, rep) in table.items():
        print(f"{case},{lam2:g}," + ",".join(f"{v:.6g}" for v in rep.values()))


if __name__ == "__main__":
    main()
