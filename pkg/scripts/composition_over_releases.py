"""Composed epsilon over repeated releases: allocated mechanism, plain kernel and classical bounds."""

from _common import parser, write_rows

from brdp import budgeting, composition, kernels
from brdp.core import BrdpMechanism, ErrorBound
from brdp.kernels import BudgetPair


def main():
    p = parser(__doc__, "composition_over_releases.csv")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument(
        "--epsilon-y",
        type=float,
        action="append",
        dest="eps_y",
        help="extra fixed kernel budgets to compare against the allocation (repeatable)",
    )
    args = p.parse_args()
    total = BudgetPair(args.epsilon, args.delta)
    alloc = budgeting.allocate(total, 1.0, args.theta)
    mechs = {"allocated": alloc.mechanism}
    for e in args.eps_y or ():
        k = kernels.calibrate("gaussian", BudgetPair(e, args.delta), 1.0)
        q = budgeting.find_q_for_kernel(k, ErrorBound(args.theta), total)
        mechs[f"eps_y={e}"] = BrdpMechanism(k, q, ErrorBound(args.theta))
    dp = kernels.calibrate("gaussian", total, 1.0)
    rows = []
    for T in (1, 5, 10, 20, 50, 100):
        row = {
            "T": T,
            "dp": composition.kernel_epsilon_T(dp, T, args.delta),
            "advanced": composition.advanced_composition(total, T),
            "basic": T * args.epsilon,
        }
        for name, m in mechs.items():
            row[name] = composition.brdp_epsilon_T(m, T, args.delta)
        rows.append(row)
        print(row)
    write_rows(args.out, rows)


if __name__ == "__main__":
    main()
