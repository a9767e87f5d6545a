"""Command-line entry point.

Every subcommand prints one record (JSON object or CSV rows) to stdout or
``--out``. Failures print ``{"error": <category>, "message": ...}`` to stderr
and exit with the category's code.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import budgeting, composition, core, harness, kernels, subsampling
from .core import BrdpMechanism, ErrorBound
from .errors import BrdpError, SchemaError
from .kernels import BudgetPair

DEFAULTS = {
    "kernel": "gaussian",
    "epsilon": 1.0,
    "delta": 1e-5,
    "theta": 1.0,
    "sensitivity": None,
    "q": None,
    "trials": 1000,
    "seed": 0,
    "tol": budgeting.DEFAULT_TOL,
    "format": "json",
    "out": None,
}


def _common(parser: argparse.ArgumentParser) -> None:
    # Defaults are None so that config values survive unless a flag is given.
    g = parser.add_argument_group("common options")
    g.add_argument("--kernel", choices=["gaussian", "laplace"])
    g.add_argument("--epsilon", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--theta", type=float)
    g.add_argument("--sensitivity", type=float)
    g.add_argument("--q", type=float, help="recycling rate override")
    g.add_argument("--trials", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--tol", type=float)
    g.add_argument("--config", type=Path, help="JSON file of option values")
    g.add_argument("--out", type=Path)
    g.add_argument("--format", choices=["csv", "json"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brdp", description="Budget-recycling noisy release tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="noise scale for a budget")
    _common(p)

    p = sub.add_parser("allocate", help="split the budget between kernel and recycler")
    _common(p)
    p.add_argument("--accounting", choices=list(budgeting.ACCOUNTING_MODES))

    p = sub.add_parser("sample", help="draw releases for a true answer")
    _common(p)
    p.add_argument("--value", type=float, help="true query answer")

    p = sub.add_parser("accept-rate", help="analytic and empirical acceptance")
    _common(p)

    p = sub.add_parser("compose", help="composed epsilon after T releases")
    _common(p)
    p.add_argument("--T", type=int, dest="T", help="number of releases")
    p.add_argument("--target-delta", type=float, dest="target_delta")

    p = sub.add_parser("subsample-opt", help="search the sampling rate")
    _common(p)
    p.add_argument("--query", choices=[k.value for k in subsampling.QueryKind])
    p.add_argument("--size", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma-x", type=float, dest="sigma_x")
    p.add_argument("--p-c", type=float, dest="p_c")
    p.add_argument("--method", choices=list(subsampling.OBJECTIVE_METHODS))
    p.add_argument("--sensitivity-scaling", choices=list(subsampling.SENSITIVITY_SCALINGS), dest="sensitivity_scaling")

    p = sub.add_parser("experiment", help="repeated releases on a dataset")
    _common(p)
    p.add_argument("--data", type=Path, help="CSV file; synthetic data when omitted")
    p.add_argument("--id-column", dest="id_column")
    p.add_argument("--value-column", dest="value_column")
    p.add_argument("--mechanism", choices=list(harness.MECHANISMS))
    p.add_argument("--query", choices=[k.value for k in subsampling.QueryKind])
    p.add_argument("--partitions", type=int)
    p.add_argument("--clip-lo", type=float, dest="clip_lo")
    p.add_argument("--clip-hi", type=float, dest="clip_hi")
    p.add_argument("--p", type=float, dest="p", help="sampling rate override")
    p.add_argument("--size", type=int, help="synthetic dataset size")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read config: {exc}") from None
        if not isinstance(data, dict):
            raise SchemaError("config must be a JSON object")
        opts.update(data)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        opts[key] = value
    return opts


def _sens(o: dict) -> float:
    return 1.0 if o.get("sensitivity") is None else float(o["sensitivity"])


def _budget(o: dict) -> BudgetPair:
    return BudgetPair(float(o["epsilon"]), float(o["delta"]))


def _mechanism(o: dict) -> tuple[BrdpMechanism, float]:
    bound = ErrorBound(float(o["theta"]))
    if o.get("q") is not None:
        kernel = kernels.calibrate(o["kernel"], _budget(o), _sens(o))
        return BrdpMechanism(kernel, float(o["q"]), bound), float(o["epsilon"])
    alloc = budgeting.allocate(_budget(o), _sens(o), bound.theta, float(o["tol"]), o["kernel"])
    return alloc.mechanism, alloc.epsilon_y


def _mech_fields(mech: BrdpMechanism, eps_y: float) -> dict:
    shift = core.shift_params(mech.kernel, mech.bound, mech.q)
    return {
        "kernel": mech.kernel.kind.value,
        "epsilon_y": eps_y,
        "q": mech.q,
        "scale": mech.kernel.scale,
        "sensitivity": mech.kernel.sensitivity,
        "theta": mech.bound.theta,
        "W": shift.W,
        "L": shift.L,
    }


def cmd_calibrate(o: dict) -> dict:
    kernel = kernels.calibrate(o["kernel"], _budget(o), _sens(o))
    return {
        "kernel": kernel.kind.value,
        "epsilon": float(o["epsilon"]),
        "delta": float(o["delta"]),
        "sensitivity": kernel.sensitivity,
        "scale": kernel.scale,
        "profile_at_epsilon": kernels.privacy_profile(kernel, float(o["epsilon"])),
    }


def cmd_allocate(o: dict) -> dict:
    accounting = o.get("accounting") or "mixture"
    alloc = budgeting.allocate(
        _budget(o), _sens(o), float(o["theta"]), float(o["tol"]), o["kernel"],
        accounting=accounting,
    )
    dp = budgeting.kernel_only(_budget(o), _sens(o), float(o["theta"]), o["kernel"])
    return {
        **_mech_fields(alloc.mechanism, alloc.epsilon_y),
        "objective": alloc.objective_value,
        "acceptance": alloc.acceptance,
        "dp_acceptance": core.acceptance_rate(dp),
        "profile_at_epsilon": core.brdp_privacy_profile(alloc.mechanism, float(o["epsilon"])),
        "accounting": accounting,
    }


def cmd_sample(o: dict) -> dict:
    mech, eps_y = _mechanism(o)
    rng = np.random.default_rng(int(o["seed"]))
    y = float(o.get("value") or 0.0)
    out, rounds = core.sample_batch(mech, y, int(o["trials"]), rng)
    return {**_mech_fields(mech, eps_y), "value": y, "outputs": out.tolist(), "rounds": rounds.tolist()}


def cmd_accept_rate(o: dict) -> dict:
    mech, eps_y = _mechanism(o)
    rng = np.random.default_rng(int(o["seed"]))
    n = int(o["trials"])
    out, rounds = core.sample_batch(mech, 0.0, n, rng)
    rate = float(np.mean(np.abs(out) <= mech.bound.theta))
    return {
        **_mech_fields(mech, eps_y),
        "analytic_acceptance": core.acceptance_rate(mech),
        "empirical_acceptance": rate,
        "standard_error": math.sqrt(rate * (1 - rate) / n),
        "expected_rounds": core.expected_rounds(mech),
        "mean_rounds": float(rounds.mean()),
        "trials": n,
    }


def cmd_compose(o: dict) -> dict:
    mech, eps_y = _mechanism(o)
    T = int(o.get("T") or o["trials"])
    target = float(o.get("target_delta") or o["delta"])
    dp = kernels.calibrate(o["kernel"], _budget(o), _sens(o))
    return {
        **_mech_fields(mech, eps_y),
        "T": T,
        "target_delta": target,
        "brdp_epsilon": composition.brdp_epsilon_T(mech, T, target),
        "dp_epsilon": composition.kernel_epsilon_T(dp, T, target),
        "basic_epsilon": T * float(o["epsilon"]),
    }


def cmd_subsample_opt(o: dict) -> dict:
    pop = subsampling.PopulationModel(
        int(o.get("size") or 10_000), float(o.get("mu") or 0.0),
        float(o.get("sigma_x") or 10.0), float(o.get("p_c") if o.get("p_c") is not None else 0.1),
    )
    method = o.get("method") or "analytic"
    plan, alloc = subsampling.find_p(
        _budget(o), _sens(o), float(o["theta"]), o.get("query") or "average", pop,
        float(o["tol"]), o["kernel"], method=method,
        sensitivity_scaling=o.get("sensitivity_scaling") or "none",
    )
    mech = alloc.mechanism
    return {
        **_mech_fields(mech, alloc.epsilon_y),
        "p": plan.p,
        "inner_epsilon": plan.inner_budget.epsilon,
        "inner_delta": plan.inner_budget.delta,
        "sigma_E": plan.sigma_E,
        "combined_acceptance": subsampling.combined_acceptance(mech, plan.sigma_E),
        "end_to_end_acceptance": subsampling.end_to_end_acceptance(mech, plan.sigma_E),
        "method": method,
        "warning": plan.warning,
    }


EXPERIMENT_KEYS = {f for f in harness.ExperimentConfig.__dataclass_fields__}


def cmd_experiment(o: dict) -> str:
    cfg_data = {k: v for k, v in o.items() if k in EXPERIMENT_KEYS}
    cfg_data.setdefault("clip_lo", 0.0)
    cfg_data.setdefault("clip_hi", 1.0)
    cfg = harness.ExperimentConfig.from_dict(cfg_data)
    if o.get("data"):
        table = harness.ingest_csv(
            o["data"], o.get("id_column") or "id", o.get("value_column") or "value", cfg.clip_lo, cfg.clip_hi
        )
    else:
        mid, width = 0.5 * (cfg.clip_lo + cfg.clip_hi), cfg.clip_hi - cfg.clip_lo
        table = harness.synthetic_table(int(o.get("size") or 10_000), mid, width / 6, cfg.clip_lo, cfg.clip_hi, cfg.seed)
    report = harness.run_experiment(cfg, table)
    return harness.render_report(report, o["format"])


COMMANDS = {
    "calibrate": cmd_calibrate,
    "allocate": cmd_allocate,
    "sample": cmd_sample,
    "accept-rate": cmd_accept_rate,
    "compose": cmd_compose,
    "subsample-opt": cmd_subsample_opt,
    "experiment": cmd_experiment,
}


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, list):
        return [_clean(x) for x in v]
    return v


def render(record: dict, fmt: str) -> str:
    record = {k: _clean(v) for k, v in record.items()}
    if fmt == "json":
        return json.dumps(record, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    scalars = {k: v for k, v in record.items() if not isinstance(v, list)}
    lists = {k: v for k, v in record.items() if isinstance(v, list)}
    if lists:
        writer.writerow([*scalars, *lists])
        n = max(len(v) for v in lists.values())
        for i in range(n):
            writer.writerow([*scalars.values(), *(v[i] for v in lists.values())])
    else:
        writer.writerow(list(scalars))
        writer.writerow(list(scalars.values()))
    return buf.getvalue()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
        result = COMMANDS[args.command](opts)
        text = result if isinstance(result, str) else render(result, opts["format"])
        if opts.get("out"):
            Path(opts["out"]).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    except BrdpError as exc:
        sys.stderr.write(json.dumps({"error": exc.category, "message": str(exc)}) + "\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io", "message": str(exc)}) + "\n")
        return 7
    return 0


if __name__ == "__main__":
    sys.exit(main())
