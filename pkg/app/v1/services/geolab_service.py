import asyncio
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

from engine.geolab import run_arms

from ..models.geolab_models import GeometryReport, LabConfig
from .storage_service import write_geometry_reports, write_geometry_trajectories

logger = logging.getLogger(__name__)


class GeolabService:
    """Runs geometry-lab arms and writes their reports."""

    def run(self, cfg: LabConfig, arms: Optional[Sequence[str]] = None) -> List[GeometryReport]:
        arms = list(arms) if arms else [cfg.loss]
        logger.info(f"🧭 geometry lab: arms {', '.join(arms)} on {cfg.source} (seed {cfg.seed})")
        return asyncio.run(run_arms(cfg, arms))

    def write(self, out_dir: Union[str, Path], reports: Sequence[GeometryReport], report_name: str, trajectory_name: str) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_geometry_reports(out_dir / report_name, reports)
        write_geometry_trajectories(out_dir / trajectory_name, reports)
        logger.info(f"✅ geometry reports written to {out_dir}")
