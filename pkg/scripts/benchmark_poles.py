"""Poles of the single disk array (r=0.3, eps=2, kx=0) and their flux widths."""

import argparse

from siegert.poles import find_poles, width_from_flux
from siegert.structures import single_disk_array


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--order", type=int, default=10)
    ap.add_argument("--region", type=float, nargs=4, default=[30.0, 38.0, -3.0, -1e-3])
    args = ap.parse_args()
    s = single_disk_array(0.3, 2.0)
    res = find_poles(s, 0.0, 0.0, tuple(args.region), grid=(17, 7), order=args.order)
    print(f"{'re kappa':>22} {'gamma':>12} {'flux width':>12} {'residual':>10}")
    for p in res.poles:
        w = width_from_flux(p) if p.gamma > 1e-6 else 0.0
        print(f"{p.kappa_n.real:22.15f} {p.gamma:12.4e} {w:12.4e} {p.residual:10.1e}")
    for w in res.warnings:
        print("warning:", w)


if __name__ == "__main__":
    main()
