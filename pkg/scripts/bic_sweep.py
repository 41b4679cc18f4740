"""Follow the odd branch of the symmetric double disk array in h and locate its BIC."""

import argparse

from siegert.continuation import continue_pole, detect_bic
from siegert.poles import Candidate, refine_pole
from siegert.structures import double_disk_array


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--order", type=int, default=10)
    ap.add_argument("--stop", type=float, default=0.40)
    ap.add_argument("--step", type=float, default=0.01)
    args = ap.parse_args()
    s = double_disk_array(0.25, 2.0, (0.3, 3.0))
    start = refine_pole(Candidate(35.26362663649424 - 0.1650355197737983j, 0.0, s, 0.5, 0.0, args.order))
    br = continue_pole(s, start, args.stop, args.step)
    for smp in br.samples:
        print(f"h={smp.h:.4f}  kappa={smp.kappa_n.real:.10f}  gamma={smp.pole.gamma:.4e}")
    bic = detect_bic(br)
    if bic is None:
        print("no BIC on this branch")
    else:
        print(f"BIC: h_b={bic.h_b:.12f} kappa_b={bic.kappa_b:.12f} gamma_min={bic.gamma_min:.2e}")


if __name__ == "__main__":
    main()
