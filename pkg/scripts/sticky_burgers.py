"""Sticky particles from uniform[0, 1] against the entropy solution of the aggregation equation."""
from _common import parser, write_rows

from chaoslab.diagnostics import distance_to_reference
from chaoslab.initial import InitialMeasure
from chaoslab.oracles import burgers_entropy
from chaoslab.particles import SimulationConfig, simulate
from chaoslab.potentials import PotentialSpec


def main():
    ap = parser(__doc__)
    ap.add_argument("--N", type=int, nargs="+", default=[8, 64, 512])
    args = ap.parse_args()
    mu0 = InitialMeasure.uniform(0.0, 1.0)
    times = [0.25, 0.5, 0.99]
    rows = []
    for N in args.N:
        cfg = SimulationConfig(PotentialSpec.attractive_power(0.0), N=N, T=1.5, initial=mu0,
                               dynamics="sticky", sampler="quantile", output_times=times + [1.5])
        traj = simulate(cfg)
        for t in times:
            d, _ = distance_to_reference(traj.at(t), burgers_entropy(mu0, t))
            rows.append((N, t, d, d * N))
            print(f"N={N:<4d} t={t:<5g} W2 = {d:.3e} (N W2 = {d * N:.3f})")
        print(f"N={N}: total collapse at t = {traj.merge_events[-1].time:.6f}")
    write_rows(args.out, "sticky_burgers.csv", ["N", "time", "w2", "N_times_w2"], rows)


if __name__ == "__main__":
    main()
