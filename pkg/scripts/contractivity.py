"""W2 contraction of two JKO flows of the logarithmic gas (lambda = 1)."""
from _common import DYSON, INF, gaussian, parser, write_rows

from chaoslab.diagnostics import contraction_holds, contractivity_test
from chaoslab.transport import QuantileMeasure


def main():
    ap = parser(__doc__)
    ap.add_argument("--tau", type=float, default=1e-3)
    ap.add_argument("--shift", type=float, default=0.5)
    args = ap.parse_args()
    U = gaussian(256)
    pairs = {"translated": QuantileMeasure(U.U + args.shift),
             "dilated": QuantileMeasure(1.5 * U.U + args.shift)}
    rows = []
    for name, V in pairs.items():
        res = contractivity_test(U, V, DYSON, INF, args.tau, [0.5, 1.0, 2.0])
        for t, r, b in res:
            rows.append((name, t, r, b))
            print(f"{name:10s} t={t:<4g} ratio={r:.5f} e^-t={b:.5f}")
        print(f"{name}: contraction holds = {contraction_holds(res, args.tau, 1.0)}")
    write_rows(args.out, "contractivity.csv", ["pair", "time", "ratio", "bound"], rows)


if __name__ == "__main__":
    main()
