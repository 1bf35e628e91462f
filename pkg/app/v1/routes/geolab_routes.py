import argparse
import logging

from app.shared import GEOLAB_CSV, GEOLAB_TRAJECTORY_CSV, add_common_arguments, load_lab_config

from ..services.geolab_service import GeolabService

logger = logging.getLogger(__name__)

geolab_service = GeolabService()


def register(subparsers) -> None:
    parser = subparsers.add_parser("geolab", help="DDC versus pairwise-consistency geometry on 2-D point sets")
    add_common_arguments(parser)
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--arms", nargs="+", choices=["ddc", "pairwise-cos", "pairwise-dist"], default=None,
                        help="Loss arms to run (default: the config's loss)")
    parser.set_defaults(handler=geolab)


def geolab(args: argparse.Namespace) -> int:
    try:
        config = load_lab_config(args.config, args.seed)
        reports = geolab_service.run(config, args.arms)
        geolab_service.write(args.out, reports, GEOLAB_CSV, GEOLAB_TRAJECTORY_CSV)
        return 0
    except Exception as e:
        logger.error(f"❌ geolab failed: {e}")
        return 1
