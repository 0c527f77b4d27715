"""Weak error between ASGD and SME-ASGD as the time step shrinks at fixed mu.

Halving dt = sqrt(eta (1 - mu)) means dividing eta by four; the horizon T is
held fixed, so the step count doubles each level.
"""

import argparse
import math

from sme_lab.ensemble import SimSpec, run_ensemble, weak_error
from sme_lab.objectives import builtin_objective


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--objective", default="quad1d")
    parser.add_argument("--mu", type=float, default=0.9)
    parser.add_argument("--eta", type=float, default=0.01)
    parser.add_argument("--T", type=float, default=20.0)
    parser.add_argument("--levels", type=int, default=3)
    parser.add_argument("--samples", type=int, default=10**4)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()
    obj = builtin_objective(args.objective)
    x0 = (1.0,) * obj.dim
    prev = None
    print("eta,dt,steps,mean_error,second_moment_error,mean_ratio,second_ratio")
    for level in range(args.levels):
        eta = args.eta / 4**level
        dt = math.sqrt(eta * (1 - args.mu))
        steps = round(args.T / dt)
        a = run_ensemble(SimSpec("asgd", obj, x0, steps, mu=args.mu, eta=eta), args.samples, args.seed + 2 * level)
        b = run_ensemble(SimSpec("sme-asgd", obj, x0, steps, mu=args.mu, eta=eta), args.samples,
                         args.seed + 2 * level + 1)
        err = weak_error(a, b)
        ratios = ("", "") if prev is None else tuple(f"{p / e:.3f}" for p, e in zip(prev, err))
        print(f"{eta:g},{dt:.6g},{steps},{err[0]:.6g},{err[1]:.6g},{ratios[0]},{ratios[1]}")
        prev = err


if __name__ == "__main__":
    main()
