"""Gram determinants of normalized eigenvector pairs at the convergents of a Liouville-type nu.

    python3 scripts/riesz_scan.py --P 3 --parity even
"""

import argparse

from nullctl._io import mp_text
from nullctl.condensation import liouville_nu, riesz_degeneracy_scan
from nullctl.fnspace import Coupling


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--P", type=int, default=3)
    ap.add_argument("--parity", choices=("even", "odd"), default="even")
    ap.add_argument("--bits", type=int, default=256)
    args = ap.parse_args()
    spec, _ = liouville_nu(args.sigma, args.P, args.parity)
    q = Coupling.sine(1) if args.parity == "even" else Coupling.sine(2)
    for r in riesz_degeneracy_scan(spec, q, bits=args.bits):
        k = str(r.k) if len(str(r.k)) < 20 else f"<{len(str(r.k))} digits>"
        print(f"p={r.p}  k_p={k:>14}  det G = {mp_text(r.det, 6):>20}  k^2 U = {mp_text(r.k2U, 6)}")


if __name__ == "__main__":
    main()
