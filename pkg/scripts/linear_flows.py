"""JKO flows of the heat and Ornstein-Uhlenbeck equations against their Gaussian closed forms."""
from _common import QUAD, gaussian, parser, write_rows

from chaoslab.gradient_flow import jko_flow
from chaoslab.oracles import heat_flow, ou_flow
from chaoslab.potentials import PotentialSpec
from chaoslab.transport import w2_quantile


def main():
    ap = parser(__doc__)
    ap.add_argument("--tau", type=float, default=1e-3)
    ap.add_argument("--M", type=int, default=512)
    args = ap.parse_args()
    rows = []
    for name, p, oracle in (("heat", PotentialSpec.zero(), lambda t: heat_flow(0, 1, 1.0, t, args.M)),
                            ("ou", PotentialSpec.zero(QUAD), lambda t: ou_flow(0, 1, 1.0, 1.0, t, args.M))):
        flow = jko_flow(gaussian(args.M), args.tau, 1.0, p, 1.0)
        for t in (0.25, 0.5, 1.0):
            d = w2_quantile(flow.at(t), oracle(t))
            rows.append((name, t, d))
            print(f"{name:5s} t={t:<5g} W2 = {d:.3e}")
    write_rows(args.out, "linear_flows.csv", ["flow", "time", "w2"], rows)


if __name__ == "__main__":
    main()
