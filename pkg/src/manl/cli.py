"""Command-line interface: run / summarize / selftest.

Exit codes: 0 success, 2 acceptance-threshold failure, 1 error (including
malformed configs).  `MANL_THREADS` overrides the worker-thread count.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile

from .experiments import ConfigError, apply_overrides, parse_config, run_experiment, summarize


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="manl",
                                     description="two-species annihilating "
                                     "diffusion: simulations and solvers")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="JSON-valued config override")
    p_sum = sub.add_parser("summarize", help="consolidated report over a results directory")
    p_sum.add_argument("directory")
    p_self = sub.add_parser("selftest", help="run the deterministic kernel/geometry suite")
    p_self.add_argument("--outputs", default=None)
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            with open(args.config) as fh:
                doc = json.load(fh)
            doc = apply_overrides(doc, args.override)
            if args.threads is not None:
                doc["threads"] = args.threads
            cfg = parse_config(doc)
            code = run_experiment(cfg)
            print(f"{cfg['experiment']}: "
                  + ("PASS (exit 0)" if code == 0 else "threshold FAIL (exit 2)"))
            return code
        if args.command == "summarize":
            report = summarize(args.directory)
            sys.stdout.write(report)
            return 0
        if args.command == "selftest":
            outdir = args.outputs or tempfile.mkdtemp(prefix="manl-selftest-")
            cfg = parse_config({"experiment": "selftest", "outputs": outdir})
            code = run_experiment(cfg)
            print(f"selftest artifacts: {outdir}")
            print("selftest: " + ("PASS" if code == 0 else "FAIL"))
            return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, ValueError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
