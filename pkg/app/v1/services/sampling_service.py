import asyncio
import logging
from itertools import product
from typing import List, Optional, Sequence

import torch

from engine.denoiser import Denoiser
from engine.diffusion import DiffusionProcess
from engine.numerics import RngStream
from engine.sampler import StructureGuidedSampler, lowpass_distance
from engine.schedule import build_schedule

from ..models.config_models import RunConfig, SamplerConfig
from ..models.metrics_models import SweepRow
from .metrics_service import scs_proxy

logger = logging.getLogger(__name__)


class SamplingService:
    """Fans independent chains out over a thread pool; chain i owns stream i of the seed."""

    def __init__(self, config: RunConfig, denoiser: Denoiser):
        self.config = config
        self.denoiser = denoiser
        self.process = DiffusionProcess(build_schedule(config.schedule), denoiser)
        self.spatial_dims = 2 if config.mode == "image" else 1

    def sampler_for(self, cfg: SamplerConfig) -> StructureGuidedSampler:
        # [-1, 1] is the image range; points are unbounded
        clip = cfg.clip_denoised and self.config.mode == "image"
        return StructureGuidedSampler(self.process, self.spatial_dims, clip)

    def _chain(self, sampler: StructureGuidedSampler, x_source: torch.Tensor, cfg: SamplerConfig, seed: int, index: int) -> torch.Tensor:
        # grad mode is thread-local, so it is switched off inside the worker
        with torch.no_grad():
            return sampler.icsg_sample(x_source.unsqueeze(0), cfg, RngStream(seed, index))[0]

    async def sample_async(self, sources: torch.Tensor, cfg: SamplerConfig, seed: int) -> torch.Tensor:
        cfg.check_against(self.process.schedule.T)
        sampler = self.sampler_for(cfg)
        loop = asyncio.get_running_loop()
        tasks = [
            loop.run_in_executor(None, self._chain, sampler, x, cfg, seed, i)
            for i, x in enumerate(sources)
        ]
        return torch.stack(await asyncio.gather(*tasks))

    def sample(self, sources: torch.Tensor, cfg: SamplerConfig, seed: Optional[int] = None) -> torch.Tensor:
        seed = self.config.seed if seed is None else seed
        logger.info(f"🎨 {cfg.mode} sampling of {sources.shape[0]} sources (M={cfg.M}, t_stop={cfg.t_stop}, K={cfg.K}, N={cfg.N})")
        samples = asyncio.run(self.sample_async(sources, cfg, seed))
        logger.info("✅ sampling finished")
        return samples

    def sweep(
        self,
        sources: torch.Tensor,
        base: SamplerConfig,
        Ks: Sequence[int],
        Ns: Sequence[int],
        t_stops: Sequence[int],
        seed: Optional[int] = None,
    ) -> List[SweepRow]:
        """Grid over (K, N, t_stop) on the same sources and seed."""
        rows = []
        for K, N, t_stop in product(Ks, Ns, t_stops):
            cfg = SamplerConfig.model_validate({**base.model_dump(), "K": K, "N": N, "t_stop": t_stop})
            samples = self.sample(sources, cfg, seed)
            distance = lowpass_distance(samples, sources, base.N, self.spatial_dims)
            rows.append(SweepRow(
                mode=cfg.mode,
                M=cfg.M,
                t_stop=t_stop,
                K=K,
                N=N,
                lowpass_distance=float(distance.mean()),
                scs_proxy=scs_proxy(samples, sources),
            ))
        return rows
