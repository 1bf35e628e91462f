import argparse
import sys
from typing import Optional, Sequence

from app.shared import configure_logging
from app.v1.routes import data_routes, geolab_routes, metrics_routes, sampling_routes, training_routes

ROUTES = (data_routes, training_routes, sampling_routes, geolab_routes, metrics_routes)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsdm",
        description="Few-shot diffusion adaptation: phasic content fusion, DDC loss and structure-guided sampling",
    )
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    subparsers = parser.add_subparsers(dest="command", required=True)
    for route in ROUTES:
        route.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        # --help exits 0, usage errors exit 2
        code = exit_request.code
        return code if isinstance(code, int) else 0
    configure_logging(args.log_level)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
