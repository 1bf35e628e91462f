import hashlib
import logging
from typing import Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config_models import FEW_SHOT_LIMIT

logger = logging.getLogger(__name__)


class DomainDataset(BaseModel):
    """Samples of one domain: images (n, C, H, W) in [-1, 1] or points (n, D)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    items: torch.Tensor = Field(..., description="Stacked samples, float64")
    domain: Literal["source", "target"] = Field(..., description="Domain tag")
    kind: Literal["image", "point"] = Field(..., description="Sample kind")
    few_shot: bool = Field(False, description="Few-shot target set")
    allow_large_target_set: bool = Field(False, description="Permit more than 10 few-shot exemplars")

    @model_validator(mode="after")
    def _check_items(self):
        if self.items.dtype != torch.float64:
            raise ValueError(f"items must be float64, got {self.items.dtype}")
        expected_dim = 4 if self.kind == "image" else 2
        if self.items.dim() != expected_dim or self.items.shape[0] < 1:
            raise ValueError(f"{self.kind} items must be a non-empty {expected_dim}-D stack, got {tuple(self.items.shape)}")
        if not bool(torch.isfinite(self.items).all()):
            raise ValueError("items must be finite")
        if self.kind == "image" and float(self.items.abs().max()) > 1.0:
            raise ValueError("image items must lie in [-1, 1]")
        if self.few_shot and len(self) > FEW_SHOT_LIMIT:
            if not self.allow_large_target_set:
                raise ValueError(
                    f"few-shot target set has {len(self)} > {FEW_SHOT_LIMIT} items; set allow_large_target_set to override"
                )
            logger.warning(f"⚠️ few-shot target set of {len(self)} items exceeds {FEW_SHOT_LIMIT}")
        return self

    def __len__(self) -> int:
        return int(self.items.shape[0])

    @property
    def sample_shape(self):
        return tuple(self.items.shape[1:])

    def checksum(self) -> str:
        """SHA-256 of the items as little-endian float64 bytes."""
        data = np.ascontiguousarray(self.items.detach().numpy(), dtype="<f8")
        return hashlib.sha256(data.tobytes()).hexdigest()


class DatasetManifest(BaseModel):
    """What `gen-data` wrote, with content checksums of both domains."""
    kind: Literal["shapes", "moons"] = Field(..., description="Dataset kind")
    seed: int = Field(..., description="Generation seed")
    n_source: int = Field(..., ge=1, description="Source count")
    m_target: int = Field(..., ge=1, description="Target count")
    allow_large_target_set: bool = Field(False, description="Target set may exceed the few-shot limit")
    source_checksum: str = Field(..., description="SHA-256 of the source items")
    target_checksum: str = Field(..., description="SHA-256 of the target items")
