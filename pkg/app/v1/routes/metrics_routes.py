import argparse
import logging
from pathlib import Path

from app.shared import SAMPLES_CSV, add_common_arguments, load_run_config
from engine.losses import build_encoder

from ..services.metrics_service import EvaluationContext, MetricsService
from ..services.storage_service import StorageService, load_images, read_points_csv, write_metrics_csv
from ..services.training_service import TrainingService

logger = logging.getLogger(__name__)

metrics_service = MetricsService()
storage_service = StorageService()


def register(subparsers) -> None:
    parser = subparsers.add_parser("metrics", help="Proxy metrics of translated samples")
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", required=True, help="Source-pretrained checkpoint (feature encoder)")
    parser.add_argument("--data", required=True, help="Directory written by gen-data")
    parser.add_argument("--samples", required=True, help="Directory written by sample")
    parser.add_argument("--out", required=True, help="Metrics CSV to write")
    parser.set_defaults(handler=metrics)


def metrics(args: argparse.Namespace) -> int:
    """Score samples i against source i and the target set."""
    try:
        config = load_run_config(args.config, args.seed)
        source, target = storage_service.load_domains(args.data, config.mode, config.dataset.allow_large_target_set)
        samples_dir = Path(args.samples)
        generated = load_images(samples_dir) if config.mode == "image" else read_points_csv(samples_dir / SAMPLES_CSV)
        if generated.shape[0] > len(source):
            raise ValueError(f"{generated.shape[0]} samples but only {len(source)} sources to pair them with")
        sources = source.items[:generated.shape[0]]

        source_denoiser = TrainingService(config).restore_denoiser(storage_service.load_checkpoint(args.checkpoint))
        encoder = build_encoder(config.encoders.ddc, config.encoders, source_denoiser, config.seed)
        row = metrics_service.evaluate_metrics(
            generated, sources, target.items, encoder, EvaluationContext(config.run_id, config.seed)
        )
        nearest = metrics_service.overfit_signature(generated, target.items, encoder)
        logger.info(f"📊 diversity={row.diversity:.4f} scs_proxy={row.scs_proxy:.4f} nearest-target={nearest:.4f}")
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out, [row])
        return 0
    except Exception as e:
        logger.error(f"❌ metrics failed: {e}")
        return 1
