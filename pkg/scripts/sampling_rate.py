"""Sampling-rate search for sum, average and count queries, and acceptance versus dataset size."""

from _common import parser, write_rows

from brdp import subsampling
from brdp.kernels import BudgetPair
from brdp.subsampling import PopulationModel

THETA = {"sum": lambda n: 1.0, "average": lambda n: 1.0, "count": lambda n: 0.005 * n}


def main():
    p = parser(__doc__, "sampling_rate.csv")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--sigma-x", type=float, default=10.0)
    p.add_argument("--p-c", type=float, default=0.1)
    p.add_argument("--method", choices=list(subsampling.OBJECTIVE_METHODS[::2]), default="analytic")
    args = p.parse_args()
    total = BudgetPair(args.epsilon, args.delta)
    rows = []
    for n in (1_000, 10_000, 100_000):
        pop = PopulationModel(n, 0.0, args.sigma_x, args.p_c)
        for kind in ("sum", "average", "count"):
            plan, alloc = subsampling.find_p(total, 1.0, THETA[kind](n), kind, pop, method=args.method)
            m = alloc.mechanism
            rows.append(
                {
                    "size": n,
                    "query": kind,
                    "theta": THETA[kind](n),
                    "p": plan.p,
                    "epsilon_y": alloc.epsilon_y,
                    "q": alloc.q,
                    "sigma_E": plan.sigma_E,
                    "combined_acceptance": subsampling.combined_acceptance(m, plan.sigma_E),
                    "end_to_end_acceptance": subsampling.end_to_end_acceptance(m, plan.sigma_E),
                }
            )
            print(rows[-1])
    write_rows(args.out, rows)


if __name__ == "__main__":
    main()
