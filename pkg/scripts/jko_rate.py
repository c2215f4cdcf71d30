"""Time-step refinement of the JKO scheme for the logarithmic gas at beta = inf."""
import numpy as np
from _common import DYSON, INF, gaussian, parser, write_rows

from chaoslab.gradient_flow import jko_flow
from chaoslab.transport import w2_quantile


def main():
    ap = parser(__doc__)
    ap.add_argument("--M", type=int, default=256)
    args = ap.parse_args()
    taus = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
    ends = [jko_flow(gaussian(args.M), tau, 1.0, DYSON, INF).at(1.0) for tau in taus]
    diffs = [w2_quantile(a, b) for a, b in zip(ends, ends[1:])]
    slope = np.polyfit(np.log(taus[:-1]), np.log(diffs), 1)[0]
    for tau, d in zip(taus, diffs):
        print(f"tau={tau:<8g} W2(tau, tau/2) = {d:.3e}")
    print(f"fitted exponent {slope:.3f}")
    write_rows(args.out, "jko_rate.csv", ["tau", "w2_to_half_step"], zip(taus, diffs))


if __name__ == "__main__":
    main()
