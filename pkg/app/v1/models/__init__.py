from .config_models import (
    FEW_SHOT_LIMIT,
    DatasetSpec,
    DenoiserConfig,
    EncoderSpec,
    LossWeights,
    PhasicConfig,
    RunConfig,
    SamplerConfig,
    ScheduleSpec,
    TrainingSpec,
)
from .dataset_models import DatasetManifest, DomainDataset
from .geolab_models import GeometryReport, LabConfig
from .metrics_models import MetricsRow, SweepRow
