"""Command line interface: run experiments, the verification suite, or print
the threshold derivation for a config."""

from __future__ import annotations

import argparse
import sys

from .harness import (
    ConfigError,
    EXIT_CONFIG,
    describe_thresholds,
    load_config,
    run_experiment,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="geodescent",
        description="Perturbed Riemannian gradient descent experiments and "
                    "geometric verification suite.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides out_dir in the config)")
    p_run.add_argument("--seed", type=int, help="seed override")

    p_ver = sub.add_parser("verify", help="run the lemma verification suite")
    p_ver.add_argument("config")
    p_ver.add_argument("--out")
    p_ver.add_argument("--seed", type=int)

    p_thr = sub.add_parser("thresholds", help="print the full threshold derivation")
    p_thr.add_argument("config")
    p_thr.add_argument("--seed", type=int)

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "thresholds":
        try:
            sys.stdout.write(describe_thresholds(cfg, seed=args.seed))
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return 0

    if args.command == "verify" and cfg.experiment != "verify":
        print("config error: 'verify' subcommand needs experiment = verify",
              file=sys.stderr)
        return EXIT_CONFIG

    outcome = run_experiment(cfg, out_dir=args.out, seed=args.seed)
    for msg in outcome.messages:
        print(msg)
    for rep in outcome.reports:
        window = (f" slope {rep.fitted_slope:.3f} in "
                  f"[{rep.slope_window[0]:.2f}, {rep.slope_window[1]:.2f}]"
                  if rep.slope_window else
                  f" constant {rep.fitted_constant:.4g}")
        print(f"{rep.lemma_id}: {'PASS' if rep.passed else 'FAIL'}{window}")
    if outcome.summary:
        print(f"status = {outcome.status}")
        print(f"classification = {outcome.classification}")
        print(f"final_f = {outcome.summary['final_f']:.12g}")
        print(f"outputs in {outcome.out_dir}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
