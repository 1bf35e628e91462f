import argparse
import logging
from pathlib import Path

from app.shared import SAMPLES_CSV, SWEEP_CSV, add_common_arguments, load_run_config

from ..models.config_models import RunConfig, SamplerConfig
from ..services.sampling_service import SamplingService
from ..services.storage_service import StorageService, save_images, write_points_csv, write_sweep_csv
from ..services.training_service import TrainingService

logger = logging.getLogger(__name__)

storage_service = StorageService()


def register(subparsers) -> None:
    parser = subparsers.add_parser("sample", help="Translate source samples with the adapted denoiser")
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", required=True, help="Adapted checkpoint")
    parser.add_argument("--data", required=True, help="Directory written by gen-data")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--mode", choices=["plain", "ilvr", "icsg"], default=None, help="Sampling chain")
    parser.add_argument("--K", type=int, default=None, help="Style-enhancement repeats")
    parser.add_argument("--N", type=int, default=None, help="Low-pass factor")
    parser.add_argument("--t-stop", dest="t_stop", type=int, default=None, help="Last guided step")
    parser.add_argument("--M", type=int, default=None, help="Start step")
    parser.add_argument("--count", type=int, default=8, help="Number of source samples to translate")
    parser.add_argument("--sweep", action="store_true", help="Sweep K, N and t_stop instead of one run")
    parser.add_argument("--sweep-K", dest="sweep_K", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--sweep-N", dest="sweep_N", type=int, nargs="+", default=[4, 8])
    parser.add_argument("--sweep-t-stop", dest="sweep_t_stop", type=int, nargs="+", default=None)
    parser.set_defaults(handler=sample)


def sampler_config(config: RunConfig, args: argparse.Namespace) -> SamplerConfig:
    """The config's sampler section with the command-line overrides, revalidated."""
    overrides = {
        name: getattr(args, name)
        for name in ("mode", "K", "N", "t_stop", "M")
        if getattr(args, name) is not None
    }
    cfg = SamplerConfig.model_validate({**config.sampler.model_dump(), **overrides})
    cfg.check_against(config.schedule.T)
    return cfg


def sample(args: argparse.Namespace) -> int:
    try:
        config = load_run_config(args.config, args.seed)
        cfg = sampler_config(config, args)
        if args.count < 1:
            raise ValueError(f"--count must be >= 1, got {args.count}")
        source, _ = storage_service.load_domains(args.data, config.mode, config.dataset.allow_large_target_set)
        denoiser = TrainingService(config).restore_denoiser(storage_service.load_checkpoint(args.checkpoint))
        service = SamplingService(config, denoiser)
        sources = source.items[:args.count]
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)

        if args.sweep:
            t_stops = args.sweep_t_stop or [cfg.t_stop]
            rows = service.sweep(sources, cfg, args.sweep_K, args.sweep_N, t_stops)
            write_sweep_csv(out / SWEEP_CSV, rows)
            return 0

        samples = service.sample(sources, cfg)
        if config.mode == "image":
            save_images(out, samples)
        else:
            write_points_csv(out / SAMPLES_CSV, samples)
        return 0
    except Exception as e:
        logger.error(f"❌ sample failed: {e}")
        return 1
