"""Observability quotients along the Jordan-chain witnesses below and above the minimal time.

    python3 scripts/observability_blowup.py --T 0.5 1.0 1.5
"""

import argparse

from nullctl.condensation import synthetic_bits, synthetic_coupling
from nullctl.fnspace import PrecisionContext
from nullctl.simulate import blowup_experiment
from nullctl.spectral import NuValue, ProblemData


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tau", type=float, default=1.0, help="engineered minimal time")
    ap.add_argument("--T", type=float, nargs="+", default=[0.5, 1.5])
    ap.add_argument("--l", type=int, nargs="+", default=[2, 3, 4, 5, 6])
    ap.add_argument("--K", type=int, default=14)
    args = ap.parse_args()
    nu = NuValue.rational(2, 1)
    bits = synthetic_bits(args.tau, args.K)
    p = ProblemData(nu, synthetic_coupling(nu, args.tau, args.K, bits), args.K, PrecisionContext(working_bits=bits, N_max=48))
    for T in args.T:
        res = blowup_experiment(p, T, "chain", args.l)
        logs = " ".join(f"{x:8.2f}" for x in res.log10_ratios)
        print(f"T={T:<5g} log10 ratio: {logs}   -> {res.verdict}")


if __name__ == "__main__":
    main()
