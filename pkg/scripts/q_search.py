"""Recycling rate versus kernel budget: naive bound against the tight search."""

import numpy as np
from _common import parser, write_rows

from brdp import budgeting, core, kernels
from brdp.core import ErrorBound
from brdp.kernels import BudgetPair


def main():
    p = parser(__doc__, "q_search.csv")
    p.add_argument("--epsilon", type=float, default=3.0)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--sensitivity", type=float, default=1.0)
    args = p.parse_args()
    total = BudgetPair(args.epsilon, args.delta)
    rows = []
    for eps_y in np.round(np.linspace(0.1, args.epsilon, 30), 6):
        k = kernels.calibrate("gaussian", BudgetPair(float(eps_y), args.delta), args.sensitivity)
        q = budgeting.find_q_for_kernel(k, ErrorBound(args.theta), total)
        shift = core.shift_params(k, ErrorBound(args.theta), q)
        rows.append(
            {
                "epsilon_y": float(eps_y),
                "baseline_q": budgeting.baseline_q(args.epsilon, float(eps_y)),
                "tight_q": q,
                "W": shift.W,
                "L": shift.L,
            }
        )
    write_rows(args.out, rows)


if __name__ == "__main__":
    main()
