"""Direct and residue decay amplitudes for the single-array resonance."""

import argparse
import math

import numpy as np

from siegert.decay import (WavePacket, decay_constants, decay_trace, half_life, observation_window,
                           relative_deviation, transient_end)

KAPPA = 33.709929719519764 - 0.7844726109490588j


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma-scale", type=float, default=0.5, help="sigma in units of sqrt(Gamma)")
    ap.add_argument("--num", type=int, default=25)
    args = ap.parse_args()
    k_tilde, tau = decay_constants(KAPPA)
    packet = WavePacket(k_tilde, args.sigma_scale * math.sqrt(-KAPPA.imag))
    t_max, ok = observation_window(KAPPA, packet)
    print(f"k_tilde={k_tilde:.10f} tau={tau:.6f} t_max={t_max:.4f} sigma_ok={ok}")
    t = np.linspace(0.0, 1.5 * t_max, args.num)
    tr = decay_trace(KAPPA, packet, t)
    for ti, d, r, dev in zip(t, tr.omega_direct, tr.omega_residue, relative_deviation(tr)):
        print(f"t={ti:8.3f} |direct|={abs(d):.4e} |residue|={abs(r):.4e} rel.dev={dev:.2e}")
    print(f"transient over at t={transient_end(packet):.3f}")
    print(f"half-life {half_life(KAPPA, packet):.6f} vs ln2*tau {math.log(2) * tau:.6f}")


if __name__ == "__main__":
    main()
