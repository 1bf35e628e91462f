import argparse
import logging
from pathlib import Path

from app.shared import DATA_MANIFEST, SOURCE_DIR, TARGET_DIR, add_common_arguments, load_run_config

from ..models.dataset_models import DatasetManifest
from ..services.dataset_service import DatasetService
from ..services.storage_service import StorageService

logger = logging.getLogger(__name__)

dataset_service = DatasetService()
storage_service = StorageService()


def register(subparsers) -> None:
    parser = subparsers.add_parser("gen-data", help="Generate the procedural source and few-shot target domains")
    add_common_arguments(parser)
    parser.add_argument("--out", required=True, help="Output directory")
    parser.set_defaults(handler=gen_data)


def gen_data(args: argparse.Namespace) -> int:
    """Write source and target samples plus a checksum manifest."""
    try:
        config = load_run_config(args.config, args.seed)
        source, target = dataset_service.from_spec(config.dataset, config.seed)
        out = Path(args.out)
        storage_service.save_dataset(out, source, SOURCE_DIR)
        storage_service.save_dataset(out, target, TARGET_DIR)
        manifest = DatasetManifest(
            kind=config.dataset.kind,
            seed=config.seed,
            n_source=len(source),
            m_target=len(target),
            allow_large_target_set=config.dataset.allow_large_target_set,
            source_checksum=source.checksum(),
            target_checksum=target.checksum(),
        )
        storage_service.save_manifest(out / DATA_MANIFEST, manifest)
        logger.info(f"✅ datasets written to {out}")
        return 0
    except Exception as e:
        logger.error(f"❌ gen-data failed: {e}")
        return 1
