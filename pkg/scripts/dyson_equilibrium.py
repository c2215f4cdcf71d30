"""Long-time JKO flow of the logarithmic gas against its independently computed equilibrium."""
import math

import numpy as np
from _common import DYSON, INF, gaussian, parser, write_rows

from chaoslab.gradient_flow import jko_flow
from chaoslab.oracles import dyson_equilibrium
from chaoslab.transport import wp_discrete_1d


def main():
    ap = parser(__doc__)
    ap.add_argument("--T", type=float, default=10.0)
    ap.add_argument("--tau", type=float, default=2e-2)
    ap.add_argument("--M", type=int, default=512)
    args = ap.parse_args()
    eq = dyson_equilibrium(4096)
    flow = jko_flow(gaussian(args.M), args.tau, args.T, DYSON, INF)
    rows = [(t, wp_discrete_1d(flow.at(t), eq)) for t in np.linspace(0, args.T, 11)]
    for t, d in rows:
        print(f"t={t:<5g} W2 to equilibrium = {d:.3e}")
    print(f"second moment {np.mean(eq.U ** 2):.5f} (semicircle 0.5); "
          f"support [{eq.U[0]:.4f}, {eq.U[-1]:.4f}] vs +-{math.sqrt(2):.4f}")
    write_rows(args.out, "dyson.csv", ["time", "w2_to_equilibrium"], rows)


if __name__ == "__main__":
    main()
