"""Minimal-time estimator on couplings engineered so that |I(k^2)| = exp(-tau k^2).

    python3 scripts/minimal_time_calibration.py --tau 0.25 0.5 1 --K 10 20 30
"""

import argparse

from nullctl.condensation import estimate_T0_rational, synthetic_bits, synthetic_coupling
from nullctl.fnspace import PrecisionContext
from nullctl.spectral import NuValue, ProblemData


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tau", type=float, nargs="+", default=[0.5, 1.0])
    ap.add_argument("--K", type=int, nargs="+", default=[10, 20, 30])
    ap.add_argument("--i0", type=int, default=2)
    ap.add_argument("--j0", type=int, default=1)
    args = ap.parse_args()
    nu = NuValue.rational(args.i0, args.j0)
    print("tau      K   bits   estimate")
    for tau in args.tau:
        for K in args.K:
            bits = synthetic_bits(tau, K)
            p = ProblemData(nu, synthetic_coupling(nu, tau, K, bits), K, PrecisionContext(working_bits=bits))
            print(f"{tau:<6g} {K:4d} {bits:6d}   {estimate_T0_rational(p).estimate:.4f}")


if __name__ == "__main__":
    main()
