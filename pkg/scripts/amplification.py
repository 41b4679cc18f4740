"""Near-field amplification 1/sqrt(Gamma) on approach to the double-array BIC."""

import math

import numpy as np

from siegert.continuation import (BicRecord, amplification_curve, amplitude_scaling, limit_amplitudes,
                                  power_law_exponent, reduced_amplitude_limit, sample_near_bic)
from siegert.poles import Candidate, normalize_bic, refine_pole
from siegert.structures import double_disk_array

H_B = 0.43225992264570434
KAPPA_B = 36.48111792368035


def main():
    s = double_disk_array(0.25, 2.0, (0.3, 3.0))
    p = refine_pole(Candidate(KAPPA_B, 0.0, s, H_B, 0.0, 10), tol=1e-12)
    bic = BicRecord(H_B, p.kappa_n.real, normalize_bic(p), {}, 1, p.gamma)
    near = sample_near_bic(bic, np.geomspace(2e-4, 1.5e-2, 8), +1)
    limit_amplitudes(near, bic)
    sp, sm = bic.limit_amplitudes[0]
    xi = bic.kappa_b
    print(f"|S+_0b|^2 * 2 sqrt(xi) = {abs(sp) ** 2 * 2 * math.sqrt(xi):.6f}")
    print(f"a_tilde limit = {reduced_amplitude_limit(bic):.6f}")
    for r in amplitude_scaling(near, 0.0, bic)[1:]:
        print(f"h={r.h:.6f} gamma={r.gamma:.3e} |a_n|={abs(r.a_n):.3e} a_tilde={r.a_tilde:.5f}")
    rows = [r for r in amplification_curve(s, near, 0.0) if r.gamma > 0]
    for r in rows:
        print(f"gamma={r.gamma:.3e} near={r.near_norm:10.3f} far={r.far_norm:.4f}")
    slope = power_law_exponent([r.gamma for r in rows], [r.near_norm for r in rows])
    print(f"near-field slope {slope:.4f} (expected -0.5)")


if __name__ == "__main__":
    main()
