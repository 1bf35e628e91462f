import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Union

from app.v1.models.config_models import RunConfig
from app.v1.models.geolab_models import LabConfig

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Artifact names inside the --out directories
SOURCE_DIR = "source"
TARGET_DIR = "target"
DATA_MANIFEST = "manifest.json"
PRETRAIN_CHECKPOINT = "pretrained.ckpt"
ADAPT_CHECKPOINT = "adapted.ckpt"
PRETRAIN_LOSS = "pretrain_loss.csv"
ADAPT_LOSS = "adapt_loss.csv"
METRICS_CSV = "metrics.csv"
SAMPLES_CSV = "samples.csv"
SWEEP_CSV = "sweep.csv"
GEOLAB_CSV = "geolab.csv"
GEOLAB_TRAJECTORY_CSV = "geolab_loss.csv"

PathLike = Union[str, Path]


_handler: Optional[logging.Handler] = None


def configure_logging(level: str = "INFO") -> None:
    """One stderr handler on the root logger; repeated calls replace it."""
    global _handler
    root = logging.getLogger()
    if _handler is not None:
        root.removeHandler(_handler)
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(_handler)
    root.setLevel(level.upper())


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="Override the config seed")


def load_run_config(path: PathLike, seed: Optional[int] = None) -> RunConfig:
    """Validate a JSON run config; ``seed`` overrides the file's seed."""
    text = Path(path).read_text(encoding="utf-8")
    config = RunConfig.model_validate_json(text)
    if seed is not None:
        config = RunConfig.model_validate({**config.model_dump(), "seed": seed})
    return config


def load_lab_config(path: PathLike, seed: Optional[int] = None) -> LabConfig:
    config = LabConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    if seed is not None:
        config = LabConfig.model_validate({**config.model_dump(), "seed": seed})
    return config
