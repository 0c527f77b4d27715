"""Closed-form and fitted second-moment decay rates across a mu grid."""

import argparse

import numpy as np

from sme_lab import moments, presets


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--a", type=float, default=1.0)
    parser.add_argument("--eta", type=float, default=0.01)
    parser.add_argument("--mu-min", type=float, default=0.90)
    parser.add_argument("--mu-max", type=float, default=0.99)
    parser.add_argument("--points", type=int, default=10)
    args = parser.parse_args()
    mus = np.round(np.linspace(args.mu_min, args.mu_max, args.points), 6)
    rows = presets.decay_sweep(args.a, args.eta, mus)
    print("mu,closed_form_rate,fitted_rate")
    for mu, closed, fitted in rows:
        print(f"{mu:g},{closed:.6f},{fitted:.6f}")
    best = rows[int(np.argmin([r[2] for r in rows]))][0]
    print(f"# fastest fitted decay at mu = {best:g}; mu_opt = {moments.mu_opt(args.a, args.eta):g}")


if __name__ == "__main__":
    main()
