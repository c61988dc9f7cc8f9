"""Command-line entry point: ``nhqubit <command> [options]``."""
from __future__ import annotations

import argparse
import sys

from . import harness
from .linalg import EigenSolverError, MatrixExpOverflow

COMMANDS = {
    "ensemble": harness.cmd_ensemble,
    "evolve": harness.cmd_evolve,
    "spectrum": harness.cmd_spectrum,
    "sweep": harness.cmd_sweep,
    "ep-find": harness.cmd_ep_find,
    "compare": harness.cmd_compare,
}

_OVERRIDES = [
    ("--gamma-e", float, "decay rate f -> e in MHz"),
    ("--gamma-g", float, "decay rate e -> g in MHz"),
    ("--omega", float, "drive strength in MHz"),
    ("--eta-e", float, "efficiency of the D_e detector"),
    ("--eta-g", float, "efficiency of the D_g detector"),
    ("--dt", float, "time step in microseconds"),
    ("--t-final", float, "final time in microseconds"),
    ("--n-traj", int, "number of trajectories"),
    ("--mode", str, "post-selection: none, jump or nojump"),
    ("--builder", str, "Liouvillian: full, nj or j"),
    ("--omega-min", float, "sweep start (MHz)"),
    ("--omega-max", float, "sweep end (MHz)"),
    ("--omega-steps", int, "number of sweep points"),
]


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", default="runs", help="parent directory for run output (default: runs)")
    common.add_argument("--seed", type=_u64, help="RNG seed")
    for flag, kind, text in _OVERRIDES:
        common.add_argument(flag, type=kind, help=text)

    parser = argparse.ArgumentParser(
        prog="nhqubit",
        description="Trajectory and Liouvillian simulations of a monitored three-level system.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ensemble": "run a trajectory ensemble and write ensemble.csv",
        "evolve": "evolve with the Liouvillian and write liouville.csv",
        "spectrum": "eigenvalues and modes of one generator (spectrum.json)",
        "sweep": "eigenvalue branches over a drive sweep (sweep.csv)",
        "ep-find": "exceptional points along a drive sweep (eps.json)",
        "compare": "trajectories against the Liouvillian with a 3-sigma check",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _summary(command, result, run_dir):
    lines = [f"wrote {', '.join(result['files'])} to {run_dir}"]
    if command == "spectrum":
        lines.append(f"zero modes: {result['zero_modes']}  defective: {result['defective']}")
    elif command == "ep-find":
        for r in result["eps"]:
            lines.append(f"EP at omega={r.omega_star:.6f} MHz order={r.order} "
                         f"eigenvalue={r.eigenvalue:.5f} branches={list(r.branches)}")
        if not result["eps"]:
            lines.append("no exceptional points found")
    elif command == "compare":
        rep = result["report"]
        worst = max(rep.deviation.values())
        lines.append(f"max deviation {worst:.3e}  threshold {rep.threshold:.3e}  "
                     f"{'PASS' if rep.passed else 'FAIL'}")
    return "\n".join(lines)


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {flag[2:]: getattr(args, flag[2:].replace("-", "_")) for flag, _, _ in _OVERRIDES}
    overrides["seed"] = args.seed
    try:
        file_values = harness.load_config(args.config) if args.config else {}
        config = harness.resolve_config(file_values, overrides)
        harness.check_command(args.command, config)
        run_dir = harness.run_directory(args.out, args.command, config)
        result = COMMANDS[args.command](config, run_dir)
    except (ValueError, OSError, EigenSolverError, MatrixExpOverflow) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(_summary(args.command, result, run_dir))
    if args.command == "compare" and not result["report"].passed:
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
