"""Command line entry point: ``coxgp {simulate,fit,rate-study,validate}``.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("coxgp")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat YAML config (ExperimentConfig field names)")
    common.add_argument("--seed", type=_u64, help="override master_seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="coxgp", description="Cox process regression with GP priors on covariates.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate one dataset on W_n")
    s.add_argument("--n", type=float, help="window volume (default: first n_grid entry)")
    s.add_argument("--replicate", type=int, default=0)

    f = sub.add_parser("fit", parents=[common], help="run the pCN sampler on a stored dataset")
    f.add_argument("--dataset", type=Path, required=True, help="directory written by 'simulate'")

    r = sub.add_parser("rate-study", parents=[common], help="full simulate/fit/score sweep over n_grid")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--resume", action="store_true", help="reuse finished task files in --out")

    v = sub.add_parser("validate", parents=[common], help="run built-in self-checks")
    v.add_argument("--suite", default="all", choices=["fields", "covariates", "likelihood", "sampler", "metrics", "all"])
    return p


def _cmd_simulate(args, config) -> int:
    from .harness import run_simulate

    n = args.n if args.n is not None else config.n_grid[0]
    out = args.out or Path(f"dataset_n{n:g}_r{args.replicate}")
    path = run_simulate(config, n, out, args.replicate)
    print(path)
    return EXIT_OK


def _cmd_fit(args, config) -> int:
    from .harness import run_fit

    summary = run_fit(config, args.dataset, args.out)
    out = {"num_samples": summary.num_samples, "credible_l1_radius": summary.credible_l1_radius}
    if summary.l1_error_of_mean is not None:
        out["l1_error_of_mean"] = summary.l1_error_of_mean
    print(json.dumps(out))
    return EXIT_OK


def _cmd_rate_study(args, config) -> int:
    from .harness import run_rate_study

    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    out = args.out or Path("rate_study")
    rep = run_rate_study(config, out, workers=args.workers, resume=args.resume)
    for n, med in zip(rep.n_values, rep.median_errors):
        print(f"n={n:g}\tmedian_l1={med:.6g}")
    print(f"slope={rep.fitted_slope:.4f} (se {rep.slope_stderr:.4f}), theoretical={rep.theoretical_slope:.4f}")
    return EXIT_OK


def _cmd_validate(args, config) -> int:
    from .validation import run_validate

    checks = run_validate(args.suite)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.suite}/{c.name}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        report = {"suite": args.suite, "passed": all(c.passed for c in checks),
                  "checks": [c.to_dict() for c in checks]}
        (args.out / "validation.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VALIDATION


COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit, "rate-study": _cmd_rate_study, "validate": _cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, master_seed=args.seed)
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
