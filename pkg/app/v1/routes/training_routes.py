import argparse
import logging
from pathlib import Path
from typing import Optional

from app.shared import (
    ADAPT_CHECKPOINT,
    ADAPT_LOSS,
    METRICS_CSV,
    PRETRAIN_CHECKPOINT,
    PRETRAIN_LOSS,
    add_common_arguments,
    load_run_config,
)

from ..models.config_models import RunConfig
from ..services.storage_service import StorageService, write_loss_table, write_metrics_csv
from ..services.training_service import TrainingService

logger = logging.getLogger(__name__)

storage_service = StorageService()


def register(subparsers) -> None:
    pretrain_parser = subparsers.add_parser("pretrain", help="Pretrain the denoiser on the source domain")
    add_common_arguments(pretrain_parser)
    pretrain_parser.add_argument("--data", required=True, help="Directory written by gen-data")
    pretrain_parser.add_argument("--out", required=True, help="Output directory")
    pretrain_parser.set_defaults(handler=pretrain)

    adapt_parser = subparsers.add_parser("adapt", help="Adapt a pretrained denoiser to the few-shot target")
    add_common_arguments(adapt_parser)
    adapt_parser.add_argument("--data", required=True, help="Directory written by gen-data")
    adapt_parser.add_argument("--checkpoint", required=True, help="Pretrained checkpoint")
    adapt_parser.add_argument("--out", required=True, help="Output directory")
    adapt_parser.add_argument("--Ts", type=float, default=None, help="Override phasic.T_s")
    adapt_parser.add_argument("--finetune", action="store_true",
                              help="Plain weighted fine-tune on the target (no source path)")
    adapt_parser.add_argument("--no-fusion", dest="fusion", action="store_false", default=None,
                              help="Source path without content fusion")
    adapt_parser.add_argument("--consistency", choices=["ddc", "pairwise-cos", "pairwise-dist"], default=None,
                              help="Override losses.consistency")
    adapt_parser.set_defaults(handler=adapt)


def pretrain(args: argparse.Namespace) -> int:
    try:
        config = load_run_config(args.config, args.seed)
        source, _ = storage_service.load_domains(args.data, config.mode, config.dataset.allow_large_target_set)
        service = TrainingService(config)
        result = service.pretrain(source)
        out = Path(args.out)
        storage_service.save_checkpoint(out / PRETRAIN_CHECKPOINT, service.to_checkpoint(result))
        write_loss_table(out / PRETRAIN_LOSS, {"loss": result.history.total})
        return 0
    except Exception as e:
        logger.error(f"❌ pretrain failed: {e}")
        return 1


def with_overrides(
    config: RunConfig,
    T_s: Optional[float] = None,
    fusion: Optional[bool] = None,
    consistency: Optional[str] = None,
) -> RunConfig:
    """Re-validated copy of ``config`` with the command-line ablation switches applied."""
    data = config.model_dump()
    if T_s is not None:
        data["phasic"]["T_s"] = T_s
    if fusion is not None:
        data["losses"]["fusion"] = fusion
    if consistency is not None:
        data["losses"]["consistency"] = consistency
    return RunConfig.model_validate(data)


def adapt(args: argparse.Namespace) -> int:
    try:
        config = load_run_config(args.config, args.seed)
        config = with_overrides(config, args.Ts, args.fusion, args.consistency)
        source, target = storage_service.load_domains(args.data, config.mode, config.dataset.allow_large_target_set)
        service = TrainingService(config)
        source_denoiser = service.restore_denoiser(storage_service.load_checkpoint(args.checkpoint), config.phasic)
        if args.finetune:
            result = service.finetune(source_denoiser, target)
        else:
            result = service.adapt(source_denoiser, source, target)
        out = Path(args.out)
        storage_service.save_checkpoint(out / ADAPT_CHECKPOINT, service.to_checkpoint(result))
        history = result.history
        write_loss_table(out / ADAPT_LOSS, {
            "total": history.total,
            "dif": history.dif,
            "ddc": history.ddc,
            "style": history.style,
        })
        write_metrics_csv(out / METRICS_CSV, result.metrics)
        return 0
    except Exception as e:
        logger.error(f"❌ adapt failed: {e}")
        return 1
