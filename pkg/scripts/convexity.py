"""Convexity of the free energy along generalized geodesics for the cataloged kernels."""
import math

import numpy as np
from _common import parser, write_rows

from chaoslab.gradient_flow import convexity_defect
from chaoslab.potentials import PotentialSpec

CATALOG = {
    "logarithmic": PotentialSpec.logarithmic(),
    "repulsive_s0.5": PotentialSpec.repulsive_power(0.5),
    "attractive_a0": PotentialSpec.attractive_power(0.0),
    "attractive_a1": PotentialSpec.attractive_power(1.0),
    "morse": PotentialSpec.morse(2.0, 1.0, 1.0, 2.0),
}


def main():
    ap = parser(__doc__)
    ap.add_argument("--pairs", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    rows = []
    for name, p in CATALOG.items():
        worst = -math.inf
        for _ in range(args.pairs):
            M = int(rng.integers(4, 48))
            U0 = np.sort(rng.normal(size=M) * rng.uniform(0.3, 3.0))
            U1 = np.sort(rng.normal(size=M) * rng.uniform(0.3, 3.0) + rng.normal())
            beta = float(rng.choice([1.0, math.inf]))
            worst = max(worst, convexity_defect(U0, U1, p, beta, float(rng.uniform())))
        rows.append((name, p.functional_lambda, worst))
        print(f"{name:15s} lambda={p.functional_lambda:+.5f} worst defect {worst:.2e}")
    write_rows(args.out, "convexity.csv", ["kernel", "lambda", "worst_defect"], rows)


if __name__ == "__main__":
    main()
