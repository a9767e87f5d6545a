"""Composed epsilon after 1000 releases at per-query (0.1, 1e-5), with and without subsampling."""

from _common import parser, write_rows

from brdp import budgeting, composition, kernels, subsampling
from brdp.kernels import BudgetPair
from brdp.subsampling import PopulationModel


def main():
    p = parser(__doc__, "long_run_composition.csv")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--p", type=float, default=None, help="sampling rate; searched on the average query if omitted")
    args = p.parse_args()
    total = BudgetPair(args.epsilon, args.delta)
    if args.p is None:
        plan, _ = subsampling.find_p(total, 1.0, args.theta, "average", PopulationModel(10_000, 0.0, 10.0, 0.1))
        rate = plan.p
    else:
        rate = args.p
    inner = subsampling.deamplify(total, rate)
    rows = []
    for kind in ("gaussian", "laplace"):
        dp = kernels.calibrate(kind, total, 1.0)
        alloc = budgeting.allocate(total, 1.0, args.theta, kind=kind)
        sub = budgeting.allocate(inner, 1.0, args.theta, kind=kind)
        for target in (args.delta, 1e-10):
            rows.append(
                {
                    "kernel": kind,
                    "target_delta": target,
                    "dp": composition.kernel_epsilon_T(dp, args.T, target),
                    "brdp": composition.brdp_epsilon_T(alloc.mechanism, args.T, target),
                    "subsampled_brdp": subsampling.subsampled_epsilon_T(sub.mechanism, rate, args.T, target),
                    "p": rate,
                }
            )
            print(rows[-1])
    write_rows(args.out, rows)


if __name__ == "__main__":
    main()
