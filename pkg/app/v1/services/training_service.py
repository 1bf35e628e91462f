import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import torch
from tqdm import tqdm

from engine.denoiser import AdamState, Denoiser, adam_step, backward
from engine.diffusion import DiffusionProcess
from engine.losses import (
    FeatureEncoder,
    LossTerms,
    build_encoder,
    consistency_loss,
    diffusion_loss,
    direction_vector,
    style_loss,
    total_loss,
)
from engine.numerics import DivergenceError, RngStream, gaussian_draw
from engine.schedule import build_schedule

from ..models.config_models import PhasicConfig, RunConfig
from ..models.dataset_models import DomainDataset
from ..models.metrics_models import MetricsRow
from .metrics_service import EvaluationContext, MetricsService
from .storage_service import Checkpoint

logger = logging.getLogger(__name__)

# Per-purpose random streams of one seed
STEP_STREAM = 0          # t and target batch indices
TARGET_NOISE_STREAM = 1  # target-path eps and z
SOURCE_STREAM = 2        # source batch indices, source-path eps and z
EVAL_STREAM = 3
PRETRAIN_STREAM = 4
WARMUP_STREAM = 5
EVAL_LOSS_STREAM = 6


@dataclass
class LossHistory:
    total: List[float] = field(default_factory=list)
    dif: List[float] = field(default_factory=list)
    ddc: List[float] = field(default_factory=list)
    style: List[float] = field(default_factory=list)

    def append(self, total: float, terms: LossTerms) -> None:
        self.total.append(total)
        self.dif.append(float(terms.dif))
        self.ddc.append(float(terms.ddc))
        self.style.append(float(terms.style))


@dataclass
class AdaptationBatch:
    t: int
    x_target: torch.Tensor
    eps_target: torch.Tensor
    z_target: torch.Tensor
    x_source: Optional[torch.Tensor] = None
    eps_source: Optional[torch.Tensor] = None
    z_source: Optional[torch.Tensor] = None


@dataclass
class EvaluationBatch:
    t: int
    x: torch.Tensor
    eps: torch.Tensor
    z: torch.Tensor


@dataclass
class AdaptationEncoders:
    ddc: FeatureEncoder
    style: FeatureEncoder
    w: torch.Tensor
    targets: torch.Tensor


@dataclass
class TrainingResult:
    denoiser: Denoiser
    adam: AdamState
    history: LossHistory
    metrics: List[MetricsRow] = field(default_factory=list)
    direction: Optional[torch.Tensor] = None


LossFn = Callable[[int], Tuple[torch.Tensor, LossTerms]]


class TrainingService:
    """Source pretraining, fusion warm-up, weighted fine-tuning and two-path adaptation."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.schedule = build_schedule(config.schedule)
        self.process = DiffusionProcess(self.schedule)
        self.metrics_service = MetricsService()

    # -- construction ------------------------------------------------------

    def new_denoiser(self) -> Denoiser:
        return Denoiser(self.config.denoiser, self.config.phasic, seed=self.config.seed)

    def restore_denoiser(self, checkpoint: Checkpoint, phasic: Optional[PhasicConfig] = None) -> Denoiser:
        """Denoiser with the checkpoint's parameters; ``phasic`` replaces its gate settings."""
        denoiser = Denoiser(checkpoint.config.denoiser, phasic or checkpoint.config.phasic, seed=checkpoint.config.seed)
        denoiser.load_flat_parameters(checkpoint.params)
        return denoiser

    def to_checkpoint(self, result: TrainingResult) -> Checkpoint:
        return Checkpoint(self.config, result.denoiser.flat_parameters(), result.adam)

    # -- loss pieces -------------------------------------------------------

    def diffusion_term(
        self,
        denoiser: Denoiser,
        x0: torch.Tensor,
        t: int,
        eps: torch.Tensor,
        z: torch.Tensor,
        content: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        xt = self.process.forward_sample(x0, t, eps)
        return diffusion_loss(denoiser.predict_noise(xt, t, content=content, z=z), eps)

    def source_estimate(self, denoiser: Denoiser, x_source: torch.Tensor, t: int, eps: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """x_0^{A->B}: Psi_t of the prediction on Phi_t(x^A), content-fused unless ``losses.fusion`` is off."""
        xt = self.process.forward_sample(x_source, t, eps)
        content = x_source if self.config.losses.fusion else None
        eps_pred = denoiser.predict_noise(xt, t, content=content, z=z)
        x0 = self.process.predict_x0(xt, t, eps_pred)
        if self.config.training.clip_x0 and self.config.mode == "image":
            x0 = x0.clamp(-1.0, 1.0)
        return x0

    def adaptation_loss(
        self,
        denoiser: Denoiser,
        batch: AdaptationBatch,
        encoders: Optional[AdaptationEncoders],
    ) -> Tuple[torch.Tensor, LossTerms]:
        """Phasic total loss: target-path L_dif plus, with encoders, the source-path DDC and style terms."""
        terms = LossTerms(dif=self.diffusion_term(denoiser, batch.x_target, batch.t, batch.eps_target, batch.z_target))
        if encoders is not None:
            x0 = self.source_estimate(denoiser, batch.x_source, batch.t, batch.eps_source, batch.z_source)
            terms.ddc = consistency_loss(self.config.losses.consistency, batch.x_source, x0, encoders.w, encoders.ddc)
            terms.style = style_loss(
                x0,
                encoders.targets,
                encoders.style,
                self.config.losses.style_layer_weights,
                self.config.dataset.allow_large_target_set,
            )
        return total_loss(batch.t, terms, self.config.phasic, self.config.losses), terms

    # -- draws -------------------------------------------------------------

    def _draw_step(self, rng: RngStream) -> int:
        return int(rng.integers(1, self.schedule.T + 1, 1)[0])

    def _draw_items(self, rng: RngStream, dataset: DomainDataset, batch_size: int) -> torch.Tensor:
        return dataset.items[torch.from_numpy(rng.integers(0, len(dataset), batch_size))]

    def _draw_noise(self, rng: RngStream, denoiser: Denoiser, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        eps = gaussian_draw(rng, x.shape)
        z = gaussian_draw(rng, (x.shape[0],) + denoiser.bottleneck_shape)
        return eps, z

    def draw_batch(
        self,
        streams: Tuple[RngStream, RngStream, RngStream],
        denoiser: Denoiser,
        target: DomainDataset,
        source: Optional[DomainDataset] = None,
    ) -> AdaptationBatch:
        step_rng, target_rng, source_rng = streams
        batch_size = self.config.training.batch_size
        t = self._draw_step(step_rng)
        x_target = self._draw_items(step_rng, target, batch_size)
        eps_target, z_target = self._draw_noise(target_rng, denoiser, x_target)
        batch = AdaptationBatch(t, x_target, eps_target, z_target)
        if source is not None:
            batch.x_source = self._draw_items(source_rng, source, batch_size)
            batch.eps_source, batch.z_source = self._draw_noise(source_rng, denoiser, batch.x_source)
        return batch

    def _streams(self) -> Tuple[RngStream, RngStream, RngStream]:
        seed = self.config.seed
        return RngStream(seed, STEP_STREAM), RngStream(seed, TARGET_NOISE_STREAM), RngStream(seed, SOURCE_STREAM)

    # -- optimisation loop -------------------------------------------------

    def _optimise(
        self,
        denoiser: Denoiser,
        adam: AdamState,
        iterations: int,
        stage: str,
        loss_fn: LossFn,
        history: LossHistory,
        offset: int = 0,
        before_step: Optional[Callable[[int, LossTerms], None]] = None,
    ) -> AdamState:
        for i in tqdm(range(iterations), desc=stage, leave=False, disable=iterations == 0):
            iteration = offset + i
            loss, terms = loss_fn(i)
            value = float(loss)
            if not math.isfinite(value):
                logger.error(f"❌ {stage}: non-finite loss at iteration {iteration}")
                raise DivergenceError(f"non-finite {stage} loss {value} at iteration {iteration}", iteration)
            history.append(value, terms)
            if before_step is not None:
                before_step(i, terms)
            grads = backward(loss, denoiser.net)
            try:
                params, adam = adam_step(denoiser.flat_parameters(), grads, adam)
            except DivergenceError as err:
                logger.error(f"❌ {stage}: {err} (iteration {iteration})")
                raise DivergenceError(str(err), iteration) from err
            denoiser.load_flat_parameters(params)
        return adam

    # -- stages ------------------------------------------------------------

    def pretrain(self, source: DomainDataset) -> TrainingResult:
        """Stage 1: plain L_dif on the source. Stage 2: L_dif through the content-fusion path."""
        training = self.config.training
        denoiser = self.new_denoiser()
        adam = AdamState.fresh(denoiser.num_parameters(), training.lr)
        history = LossHistory()

        stage1_rng = RngStream(self.config.seed, PRETRAIN_STREAM)

        def stage1(_: int) -> Tuple[torch.Tensor, LossTerms]:
            t = self._draw_step(stage1_rng)
            x0 = self._draw_items(stage1_rng, source, training.batch_size)
            eps, z = self._draw_noise(stage1_rng, denoiser, x0)
            loss = self.diffusion_term(denoiser, x0, t, eps, z)
            return loss, LossTerms(dif=loss)

        warmup_rng = RngStream(self.config.seed, WARMUP_STREAM)

        def stage2(_: int) -> Tuple[torch.Tensor, LossTerms]:
            t = self._draw_step(warmup_rng)
            x0 = self._draw_items(warmup_rng, source, training.batch_size)
            eps, z = self._draw_noise(warmup_rng, denoiser, x0)
            loss = self.diffusion_term(denoiser, x0, t, eps, z, content=x0)
            return loss, LossTerms(dif=loss)

        logger.info(f"🚀 pretrain stage 1: {training.pretrain_iters} iterations on {len(source)} source samples")
        adam = self._optimise(denoiser, adam, training.pretrain_iters, "pretrain", stage1, history)
        logger.info(f"🚀 pretrain stage 2: fusion warm-up for {training.warmup_iters} iterations")
        adam = self._optimise(denoiser, adam, training.warmup_iters, "warm-up", stage2, history, offset=training.pretrain_iters)
        logger.info("✅ pretrain finished")
        return TrainingResult(denoiser, adam, history)

    def finetune(self, source_denoiser: Denoiser, target: DomainDataset) -> TrainingResult:
        """Weighted fine-tune: the phasic total loss with only the target-path term."""
        denoiser = self._adapted_copy(source_denoiser)
        adam = AdamState.fresh(denoiser.num_parameters(), self.config.training.lr)
        history = LossHistory()
        streams = self._streams()

        def step(_: int) -> Tuple[torch.Tensor, LossTerms]:
            return self.adaptation_loss(denoiser, self.draw_batch(streams, denoiser, target), None)

        logger.info(f"🚀 fine-tune on {len(target)} target samples")
        adam = self._optimise(denoiser, adam, self.config.training.adapt_iters, "finetune", step, history)
        return TrainingResult(denoiser, adam, history)

    def build_encoders(self, source_denoiser: Denoiser, source: DomainDataset, target: DomainDataset) -> AdaptationEncoders:
        spec = self.config.encoders
        ddc_encoder = build_encoder(spec.ddc, spec, source_denoiser, self.config.seed)
        style_encoder = build_encoder(spec.style, spec, source_denoiser, self.config.seed)
        w = direction_vector(source.items, target.items, ddc_encoder)
        return AdaptationEncoders(ddc_encoder, style_encoder, w, target.items)

    def adapt(self, source_denoiser: Denoiser, source: DomainDataset, target: DomainDataset) -> TrainingResult:
        """Two-path adaptation with the phasic total loss; metrics rows every ``metrics_every`` iterations."""
        training = self.config.training
        denoiser = self._adapted_copy(source_denoiser)
        encoders = self.build_encoders(source_denoiser, source, target)
        frozen_w = encoders.w.clone()
        adam = AdamState.fresh(denoiser.num_parameters(), training.lr)
        history = LossHistory()
        streams = self._streams()
        evaluation = self._evaluation_batch(source, denoiser)
        rows: List[MetricsRow] = []

        def step(_: int) -> Tuple[torch.Tensor, LossTerms]:
            return self.adaptation_loss(denoiser, self.draw_batch(streams, denoiser, target, source), encoders)

        def record(i: int, terms: LossTerms) -> None:
            if i % training.metrics_every == 0 or i == training.adapt_iters - 1:
                rows.append(self.metrics_row(denoiser, evaluation, target, encoders.ddc, i, terms))

        logger.info(
            f"🚀 adapt: {training.adapt_iters} iterations, {len(target)} target exemplars, "
            f"T_s={self.config.phasic.T_s}, |w|={float(frozen_w.norm()):.4f}, "
            f"consistency={self.config.losses.consistency}, fusion={'on' if self.config.losses.fusion else 'off'}"
        )
        adam = self._optimise(denoiser, adam, training.adapt_iters, "adapt", step, history, before_step=record)
        if not torch.equal(encoders.w, frozen_w):
            raise RuntimeError("direction vector changed during adaptation")
        logger.info("✅ adaptation finished")
        return TrainingResult(denoiser, adam, history, rows, frozen_w)

    def _adapted_copy(self, source_denoiser: Denoiser) -> Denoiser:
        denoiser = copy.deepcopy(source_denoiser)
        denoiser.phasic = self.config.phasic
        denoiser.net.requires_grad_(True)
        return denoiser

    # -- evaluation --------------------------------------------------------

    def _evaluation_batch(self, source: DomainDataset, denoiser: Denoiser) -> EvaluationBatch:
        rng = RngStream(self.config.seed, EVAL_STREAM)
        count = min(self.config.training.eval_batch, len(source))
        picks = torch.from_numpy(rng.permutation(len(source))[:count])
        x = source.items[picks]
        eps, z = self._draw_noise(rng, denoiser, x)
        return EvaluationBatch(self.config.training.eval_t, x, eps, z)

    @torch.no_grad()
    def metrics_row(
        self,
        denoiser: Denoiser,
        evaluation: EvaluationBatch,
        target: DomainDataset,
        encoder: FeatureEncoder,
        iteration: int,
        terms: LossTerms,
    ) -> MetricsRow:
        """Metrics of the one-step estimates x_0^{A->B} of a fixed source batch at ``eval_t``."""
        generated = self.source_estimate(denoiser, evaluation.x, evaluation.t, evaluation.eps, evaluation.z)
        context = EvaluationContext(
            run_id=self.config.run_id,
            seed=self.config.seed,
            iteration=iteration,
            losses=LossTerms(float(terms.ddc), float(terms.style), float(terms.dif)),
        )
        return self.metrics_service.evaluate_metrics(generated, evaluation.x, target.items, encoder, context)

    @torch.no_grad()
    def evaluation_loss(self, denoiser: Denoiser, dataset: DomainDataset) -> float:
        """Plain diffusion loss at ``eval_t`` on fixed draws; a checkpoint fingerprint."""
        rng = RngStream(self.config.seed, EVAL_LOSS_STREAM)
        count = min(self.config.training.eval_batch, len(dataset))
        x0 = dataset.items[:count]
        eps, z = self._draw_noise(rng, denoiser, x0)
        return float(self.diffusion_term(denoiser, x0, self.config.training.eval_t, eps, z))
