import math

import pytest
import torch
from pydantic import ValidationError

from app.v1.models.config_models import PhasicConfig
from app.v1.routes.training_routes import with_overrides
from app.v1.services.dataset_service import DatasetService
from app.v1.services.storage_service import decode_checkpoint, encode_checkpoint
from app.v1.services.training_service import TrainingService
from engine.losses import LossTerms, direction_vector, pairwise_consistency_loss
from engine.numerics import DivergenceError, RngStream


def _domains(config):
    return DatasetService().from_spec(config.dataset, config.seed)


@pytest.fixture
def point_run(make_run_config):
    config = make_run_config("point")
    source, target = _domains(config)
    service = TrainingService(config)
    return config, service, service.pretrain(source), source, target


def test_pretrain_records_every_iteration(point_run):
    config, _, result, _, _ = point_run
    training = config.training
    assert len(result.history.total) == training.pretrain_iters + training.warmup_iters
    assert all(math.isfinite(v) and v > 0.0 for v in result.history.total)
    assert result.adam.step == training.pretrain_iters + training.warmup_iters


def test_image_pretrain_starts_from_a_finite_loss(make_run_config):
    config = make_run_config("image", training={"pretrain_iters": 1, "warmup_iters": 1})
    source, _ = _domains(config)
    result = TrainingService(config).pretrain(source)
    assert len(result.history.total) == 2
    assert all(math.isfinite(v) and v > 0.0 for v in result.history.total)


def test_pretrain_is_deterministic(point_run):
    config, _, result, source, _ = point_run
    again = TrainingService(config).pretrain(source)
    assert again.history.total == result.history.total
    assert torch.equal(again.denoiser.flat_parameters(), result.denoiser.flat_parameters())


def test_checkpoint_reload_reproduces_evaluation_loss(point_run):
    _, service, result, source, _ = point_run
    checkpoint = decode_checkpoint(encode_checkpoint(service.to_checkpoint(result)))
    restored = service.restore_denoiser(checkpoint)
    assert torch.equal(restored.flat_parameters(), result.denoiser.flat_parameters())
    assert service.evaluation_loss(restored, source) == service.evaluation_loss(result.denoiser, source)
    assert checkpoint.adam.step == result.adam.step
    assert torch.equal(checkpoint.adam.v, result.adam.v)


def test_restore_applies_phasic_override(point_run):
    _, service, result, _, _ = point_run
    override = PhasicConfig(T=20, T_s=2, alpha_w=3)
    restored = service.restore_denoiser(service.to_checkpoint(result), override)
    assert restored.phasic == override
    assert torch.equal(restored.flat_parameters(), result.denoiser.flat_parameters())


def test_zero_lambdas_reduce_adaptation_to_finetune(make_run_config, point_run):
    _, _, pretrained, source, target = point_run
    config = make_run_config("point", losses={"lambda_ddc": 0.0, "lambda_style": 0.0})
    service = TrainingService(config)
    adapted = service.adapt(pretrained.denoiser, source, target)
    finetuned = service.finetune(pretrained.denoiser, target)
    assert adapted.history.total == pytest.approx(finetuned.history.total, rel=1e-9)
    assert torch.allclose(adapted.denoiser.flat_parameters(), finetuned.denoiser.flat_parameters(), rtol=1e-9, atol=1e-12)


def test_adapt_keeps_the_direction_and_the_source(point_run):
    config, service, pretrained, source, target = point_run
    before = pretrained.denoiser.flat_parameters().clone()
    result = service.adapt(pretrained.denoiser, source, target)

    assert torch.equal(pretrained.denoiser.flat_parameters(), before)
    assert not torch.equal(result.denoiser.flat_parameters(), before)
    encoders = service.build_encoders(pretrained.denoiser, source, target)
    assert torch.equal(result.direction, direction_vector(source.items, target.items, encoders.ddc))
    assert len(result.history.total) == config.training.adapt_iters


def test_adapt_emits_metrics_on_the_cadence_and_last_iteration(point_run):
    config, service, pretrained, source, target = point_run
    result = service.adapt(pretrained.denoiser, source, target)
    assert [row.iteration for row in result.metrics] == [0, 2]
    assert all(row.run_id == config.run_id and row.seed == config.seed for row in result.metrics)
    assert result.metrics[0].loss_dif == pytest.approx(result.history.dif[0])

    longer = TrainingService(config.model_copy(update={
        "training": config.training.model_copy(update={"adapt_iters": 4}),
    }))
    rows = longer.adapt(pretrained.denoiser, source, target).metrics
    assert [row.iteration for row in rows] == [0, 2, 3]


def test_adapt_runs_in_image_mode(make_run_config):
    config = make_run_config("image", training={"pretrain_iters": 1, "warmup_iters": 1, "adapt_iters": 2})
    source, target = _domains(config)
    service = TrainingService(config)
    pretrained = service.pretrain(source)
    result = service.adapt(pretrained.denoiser, source, target)
    assert len(result.history.total) == 2
    assert all(math.isfinite(v) for v in result.history.ddc + result.history.style)
    assert [row.iteration for row in result.metrics] == [0, 1]


def test_adapt_raises_on_non_finite_loss(point_run, monkeypatch):
    _, service, pretrained, source, target = point_run

    def broken(denoiser, batch, encoders):
        return torch.tensor(float("nan"), dtype=torch.float64), LossTerms()

    monkeypatch.setattr(service, "adaptation_loss", broken)
    with pytest.raises(DivergenceError) as info:
        service.adapt(pretrained.denoiser, source, target)
    assert info.value.iteration == 0


def _source_batch(service, denoiser, source, target):
    seed = service.config.seed
    streams = (RngStream(seed, 0), RngStream(seed, 1), RngStream(seed, 2))
    return service.draw_batch(streams, denoiser, target, source)


@pytest.mark.parametrize("kind, similarity", [("pairwise-cos", "cosine"), ("pairwise-dist", "distance")])
def test_pairwise_consistency_replaces_the_ddc_term(make_run_config, point_run, kind, similarity):
    _, _, pretrained, source, target = point_run
    service = TrainingService(make_run_config("point", losses={"consistency": kind}))
    denoiser = pretrained.denoiser
    encoders = service.build_encoders(denoiser, source, target)
    batch = _source_batch(service, denoiser, source, target)
    with torch.no_grad():
        _, terms = service.adaptation_loss(denoiser, batch, encoders)
        x0 = service.source_estimate(denoiser, batch.x_source, batch.t, batch.eps_source, batch.z_source)
        expected = pairwise_consistency_loss(encoders.ddc.embed(batch.x_source), encoders.ddc.embed(x0), similarity)
    assert float(terms.ddc) == pytest.approx(float(expected), rel=1e-12, abs=1e-15)


def test_source_path_without_fusion_ignores_the_content(make_run_config, point_run):
    _, _, pretrained, source, target = point_run
    service = TrainingService(make_run_config("point", losses={"fusion": False}))
    denoiser = pretrained.denoiser
    batch = _source_batch(service, denoiser, source, target)
    with torch.no_grad():
        x0 = service.source_estimate(denoiser, batch.x_source, batch.t, batch.eps_source, batch.z_source)
        xt = service.process.forward_sample(batch.x_source, batch.t, batch.eps_source)
        plain = service.process.predict_x0(xt, batch.t, denoiser.predict_noise(xt, batch.t, z=batch.z_source))
    assert torch.equal(x0, plain)


def test_ablation_switches_adapt_end_to_end(make_run_config, point_run):
    _, _, pretrained, source, target = point_run
    config = with_overrides(make_run_config("point"), T_s=4, fusion=False, consistency="pairwise-dist")
    assert (config.phasic.T_s, config.losses.fusion, config.losses.consistency) == (4, False, "pairwise-dist")
    result = TrainingService(config).adapt(pretrained.denoiser, source, target)
    assert all(math.isfinite(v) for v in result.history.total + result.history.ddc)


def test_pairwise_consistency_needs_pairs(make_run_config):
    with pytest.raises(ValidationError, match="batch_size"):
        make_run_config("point", losses={"consistency": "pairwise-cos"}, training={"batch_size": 1})
