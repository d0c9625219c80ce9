"""Guided vs unguided inpainting of the texture phantom with missing pixels.

    python3 scripts/inpainting.py --missing 0.3
"""

import argparse

from nlprfuse.metrics import psnr
from nlprfuse.simkit import make_inpainting_instance, make_phantom
from nlprfuse.solver import SolverConfig, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--missing", type=float, default=0.3)
    ap.add_argument("--bands", type=int, default=16)
    ap.add_argument("--grid", default="1e-5,1e-4,1e-3,3e-3")
    ap.add_argument("--iters", type=int, default=300)
    args = ap.parse_args()

    Z = make_phantom("texture", 32, 32, args.bands)
    inst = make_inpainting_instance(Z, 1.0 - args.missing, seed=0)
    print("mode,lam2,psnr_db")
    for mode, h in (("guided", 0.1), ("unit", 1.0)):
        for lam2 in (float(v) for v in args.grid.split(",")):
            cfg = SolverConfig(lam1=0.0, lam2=lam2, rho=0.1, h=h, L_s=args.bands, max_iters=args.iters,
                               weight_mode=mode)
            res = solve(inst.Y_low, inst.Y_high, inst.ops, None, cfg, guide=inst.guide)
            print(f"{mode},{lam2:g},{psnr(Z, res.Z):.3f}")


if __name__ == "__main__":
    main()
