"""Command-line entry point: ``mfrbsde {check,solve,oracle,study}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, ConvergenceError, MfrbsdeError

LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK, EXIT_GATE, EXIT_TOLERANCE, EXIT_CONFIG = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _int_list(text):
    return [_positive_int(part.strip()) for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mfrbsde", description="Lattice solver for mean-field reflected BSDEs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("check", help="validate a config and report the regime gate")
    c.add_argument("--config", required=True, type=Path)

    s = sub.add_parser("solve", help="solve a config and print a JSON summary")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--steps", type=_positive_int, help="override n_steps")
    s.add_argument("--out", type=Path, help="write per-node results to this CSV")

    o = sub.add_parser("oracle", help="compare the solver with an independent oracle")
    o.add_argument("--case", required=True, choices=sorted(harness.ORACLE_DEFAULTS))
    o.add_argument("--depth", type=_positive_int, help="tree depth for the snell case (<= 4)")
    o.add_argument("--steps", type=_positive_int, help="lattice steps for colehopf / meanfield_linear")
    o.add_argument("--seed", type=int, default=0)

    st = sub.add_parser("study", help="convergence study over several resolutions")
    st.add_argument("--config", required=True, type=Path)
    st.add_argument("--steps", required=True, type=_int_list, help="comma-separated list, e.g. 16,32,64")
    st.add_argument("--out", required=True, type=Path)
    return p


def _setup_logging():
    name = os.environ.get("MFRBSDE_LOG", "info").strip().lower() or "info"
    if name not in LOG_LEVELS:
        raise ConfigError(f"MFRBSDE_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def _dump(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _cmd_check(args):
    prob = harness.load_problem(args.config)
    _dump({"status": "ok", "n_steps": prob.n, "gate": harness.gate_report(prob), "warnings": list(prob.warnings)})
    return EXIT_OK


def _cmd_solve(args):
    prob = harness.load_problem(args.config, n_steps=args.steps)
    try:
        result = harness.run_solve(prob, args.out)
    except ConvergenceError as exc:
        if exc.report is not None:
            _dump({"status": "not converged", "iteration": exc.report.as_dict()})
        raise
    _dump({"status": "ok", **result.as_dict()})
    return EXIT_OK


def _cmd_oracle(args):
    res = harness.run_oracle(args.case, depth=args.depth, steps=args.steps, seed=args.seed)
    for label, got, ref in res.rows:
        print(f"{label}: solver {harness.fmt(got)} oracle {harness.fmt(ref)} gap {abs(got - ref):.3e}")
    for key, val in res.extra.items():
        print(f"{key}: {val}")
    verdict = "PASS" if res.passed else "FAIL"
    print(f"{verdict} {res.case}: max gap {res.max_gap:.3e} (tolerance {res.tolerance:g})")
    return EXIT_OK if res.passed else EXIT_TOLERANCE


def _cmd_study(args):
    cfg = harness.read_config(args.config)
    rows = harness.run_study(cfg, args.steps)
    text = harness.study_csv(rows)
    args.out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"check": _cmd_check, "solve": _cmd_solve, "oracle": _cmd_oracle, "study": _cmd_study}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return COMMANDS[args.command](args)
    except MfrbsdeError as exc:
        print(f"mfrbsde: error: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (EXIT_GATE, EXIT_TOLERANCE, EXIT_CONFIG) else EXIT_TOLERANCE
    except (OSError, ValueError, TypeError) as exc:
        print(f"mfrbsde: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
