import argparse
import logging
import sys

from app.config import get_settings
from app.jobs.runner import cmd_compare, cmd_run, cmd_sweep


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="spotflow")
    parser.add_argument("command", choices=["run", "compare", "sweep"])
    parser.add_argument("scenario", help="Path to scenario JSON")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--seed-override", type=int, default=None)
    parser.add_argument("--param", choices=["tau", "reset_interval", "kinit"], help="Sweep parameter")
    parser.add_argument("--values", default="", help="Comma-separated sweep values, e.g. 0.1,0.2,0.3")
    args = parser.parse_args(argv)

    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )

    if args.command == "run":
        return cmd_run(args.scenario, args.out, args.seed_override)
    if args.command == "compare":
        return cmd_compare(args.scenario, args.out, args.seed_override)

    if args.param is None:
        print("sweep: --param is required", file=sys.stderr)
        return 2
    values = [v for v in args.values.split(",") if v.strip()]
    return cmd_sweep(args.scenario, args.param, values, args.out, args.seed_override)


if __name__ == "__main__":
    sys.exit(main())
