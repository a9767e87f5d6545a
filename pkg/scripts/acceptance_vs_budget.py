"""Acceptance of the allocated mechanism against the plain kernel across total budgets."""

from _common import parser, write_rows

from brdp import budgeting, core


def main():
    p = parser(__doc__, "acceptance_vs_budget.csv")
    p.add_argument("--theta", type=float, default=1.0)
    args = p.parse_args()
    rows = []
    for kind in ("gaussian", "laplace"):
        for sens in (1.0, 5.0):
            for eps in (0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0):
                total = budgeting.BudgetPair(eps, args.delta)
                alloc = budgeting.allocate(total, sens, args.theta, kind=kind)
                dp = budgeting.kernel_only(total, sens, args.theta, kind)
                rows.append(
                    {
                        "kernel": kind,
                        "sensitivity": sens,
                        "epsilon": eps,
                        "epsilon_y": alloc.epsilon_y,
                        "q": alloc.q,
                        "brdp_acceptance": alloc.acceptance,
                        "dp_acceptance": core.acceptance_rate(dp),
                    }
                )
    write_rows(args.out, rows)


if __name__ == "__main__":
    main()
