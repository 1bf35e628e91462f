import asyncio
import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from app.v1.models.geolab_models import GeometryReport, LabConfig
from engine.geolab import (
    SOURCE_GENERATORS,
    build_domains,
    center_drift,
    lab_loss,
    make_two_moons,
    run_adaptation_2d,
    run_arms,
    structure_score,
)
from engine.losses import IdentityEncoder, ddc_loss, direction_vector, pairwise_consistency_loss
from engine.numerics import DTYPE, DivergenceError, RngStream, gaussian_draw, rotation_matrix_2d


def _pts(*rows):
    return torch.tensor(rows, dtype=DTYPE)


def test_ddc_arm_at_the_optimum_reports_perfect_geometry():
    report = run_adaptation_2d(LabConfig(init="optimum", steps=5))
    assert report.loss_trajectory == [0.0] * 6
    assert report.final_loss == 0.0
    assert report.center_drift == pytest.approx(0.0, abs=1e-12)
    assert report.rotation_deg == pytest.approx(0.0, abs=1e-6)
    assert report.structure_corr == pytest.approx(1.0, abs=1e-12)
    assert report.scale_ratio == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("arm", ["pairwise-cos", "pairwise-dist"])
def test_pairwise_arm_keeps_an_injected_rotation(arm):
    report = run_adaptation_2d(LabConfig(loss=arm, init="rotated-optimum", init_rotation_deg=45.0, steps=10))
    assert report.loss_trajectory[0] < 1e-20
    assert report.rotation_deg == pytest.approx(45.0, abs=1e-6)
    assert report.center_drift == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("arm", ["pairwise-cos", "pairwise-dist"])
def test_pairwise_arm_has_no_restoring_force(arm):
    report = run_adaptation_2d(LabConfig(loss=arm, init="rotated-optimum", init_rotation_deg=45.0))
    assert report.rotation_deg > 30.0


def test_ddc_arm_converges_from_the_source():
    report = run_adaptation_2d(LabConfig())
    assert report.center_drift < 0.05
    assert report.rotation_deg < 5.0
    assert report.structure_corr > 0.99
    assert len(report.loss_trajectory) == 301
    assert report.loss_trajectory[-1] < report.loss_trajectory[0]


GOLDEN_FIELDS = ("center_drift", "rotation_deg", "structure_corr", "scale_ratio", "final_loss")


def test_ddc_arm_matches_the_recorded_run(golden):
    report = run_adaptation_2d(LabConfig(seed=7))
    values = {name: getattr(report, name) for name in GOLDEN_FIELDS}
    expected = golden("geolab_ddc_seed7", values)
    for name in GOLDEN_FIELDS:
        assert values[name] == pytest.approx(expected[name], abs=1e-9), name


def test_lab_run_is_deterministic():
    cfg = LabConfig(loss="pairwise-cos", steps=20)
    assert run_adaptation_2d(cfg) == run_adaptation_2d(cfg)


def test_rotations_leave_pairwise_loss_unchanged_but_raise_ddc_loss():
    identity = IdentityEncoder()
    domains = build_domains(LabConfig())
    w = direction_vector(domains.source, domains.target, identity)
    optimum = domains.source + w
    rng = RngStream(3)
    for angle in (rng.uniform(20) * 360.0 - 180.0).tolist():
        rotated = optimum @ rotation_matrix_2d(angle).T
        for similarity in ("cosine", "distance"):
            before = float(pairwise_consistency_loss(domains.source, optimum, similarity))
            after = float(pairwise_consistency_loss(domains.source, rotated, similarity))
            assert abs(after - before) < 1e-12
        assert float(ddc_loss(domains.source, rotated, w, identity)) > float(ddc_loss(domains.source, optimum, w, identity))


def test_lab_loss_pairwise_arm_pulls_toward_target_centroid():
    cfg = LabConfig(loss="pairwise-dist", center_weight=2.0)
    domains = build_domains(cfg)
    w = direction_vector(domains.source, domains.target, IdentityEncoder())
    # the source itself has perfect pairwise structure; only the centroid term remains
    expected = 2.0 * float((w ** 2).sum())
    assert float(lab_loss(cfg, domains.source, domains, w)) == pytest.approx(expected, rel=1e-12)


def test_build_domains_picks_a_shifted_source_subset():
    cfg = LabConfig(n_source=40, m_target=6, shift=(2.0, 1.0))
    domains = build_domains(cfg)
    assert domains.source.shape == (40, 2)
    assert domains.target.shape == (6, 2)
    unshifted = domains.target - torch.tensor([2.0, 1.0], dtype=DTYPE)
    for point in unshifted:
        assert float(torch.cdist(point[None], domains.source).min()) < 1e-12
    again = build_domains(cfg)
    assert torch.equal(domains.target, again.target)


def test_build_domains_transforms_about_the_source_centroid():
    cfg = LabConfig(shift=(0.0, 0.0), target_rotation_deg=90.0, target_scale=0.5)
    plain = build_domains(LabConfig(shift=(0.0, 0.0)))
    domains = build_domains(cfg)
    pivot = domains.source.mean(dim=0)
    expected = (plain.target - pivot) @ rotation_matrix_2d(90.0).T * 0.5 + pivot
    assert torch.allclose(domains.target, expected, atol=1e-12)


@pytest.mark.parametrize("name", sorted(SOURCE_GENERATORS))
def test_generators_return_n_points(name):
    points = SOURCE_GENERATORS[name](13, RngStream(1), 0.05)
    assert points.shape == (13, 2)
    assert bool(torch.isfinite(points).all())


def test_two_moons_without_noise_lie_on_the_half_circles():
    points = make_two_moons(9, RngStream(4), noise=0.0)
    outer, inner = points[:5], points[5:]
    assert torch.allclose(outer.norm(dim=1), torch.ones(5, dtype=DTYPE), atol=1e-12)
    shifted = inner - torch.tensor([1.0, 0.5], dtype=DTYPE)
    assert torch.allclose(shifted.norm(dim=1), torch.ones(4, dtype=DTYPE), atol=1e-12)
    assert bool((outer[:, 1] >= 0).all()) and bool((inner[:, 1] <= 0.5).all())


def test_structure_score_examples():
    src = gaussian_draw(RngStream(5), (7, 2))
    assert structure_score(src, src).corr == pytest.approx(1.0, abs=1e-12)
    moved = src @ rotation_matrix_2d(130.0).T + torch.tensor([4.0, -2.0], dtype=DTYPE)
    assert structure_score(moved, src).corr == pytest.approx(1.0, abs=1e-12)


def test_structure_score_matches_direct_correlation():
    rng = RngStream(6)
    gen = gaussian_draw(rng, (6, 2))
    src = gaussian_draw(rng, (6, 2))
    i, j = np.triu_indices(6, k=1)
    d_gen = np.linalg.norm(gen.numpy()[i] - gen.numpy()[j], axis=1)
    d_src = np.linalg.norm(src.numpy()[i] - src.numpy()[j], axis=1)
    expected = float(np.corrcoef(d_gen, d_src)[0, 1])
    assert structure_score(gen, src).corr == pytest.approx(expected, abs=1e-12)


def test_structure_score_degenerate_and_small_sets(caplog):
    collapsed = _pts((1.0, 2.0), (1.0, 2.0), (1.0, 2.0))
    other = gaussian_draw(RngStream(7), (3, 2))
    score = structure_score(collapsed, other)
    assert (score.corr, score.degenerate) == (0.0, True)
    assert "zero-variance" in caplog.text
    with pytest.raises(ValueError):
        structure_score(collapsed[:2], other[:2])


def test_center_drift_examples():
    target = _pts((1.0, 0.0), (-1.0, 0.0))
    assert center_drift(target.clone(), target) == 0.0
    assert center_drift(target + torch.tensor([1.0, 0.0], dtype=DTYPE), target) == pytest.approx(1.0)
    assert center_drift(_pts((3.0, 4.0)), _pts((0.0, 0.0))) == 5.0


def test_center_drift_matches_naive_centroids():
    rng = RngStream(8)
    gen = gaussian_draw(rng, (5, 2))
    target = gaussian_draw(rng, (4, 2)) + 3.0
    g, t = gen.tolist(), target.tolist()
    cg = [sum(p[d] for p in g) / 5 for d in range(2)]
    ct = [sum(p[d] for p in t) / 4 for d in range(2)]
    radius = math.sqrt(sum((p[0] - ct[0]) ** 2 + (p[1] - ct[1]) ** 2 for p in t) / 4)
    assert center_drift(gen, target) == pytest.approx(math.dist(cg, ct) / radius, rel=1e-12)


def test_lab_config_validation():
    with pytest.raises(ValidationError):
        LabConfig(m_target=11)
    with pytest.raises(ValidationError, match="n_source"):
        LabConfig(n_source=10, m_target=6)


def test_divergent_run_raises_with_iteration():
    with pytest.raises(DivergenceError) as info:
        run_adaptation_2d(LabConfig(lr=1e300, steps=3))
    assert info.value.iteration == 1


def test_run_arms_returns_reports_in_arm_order():
    cfg = LabConfig(steps=15)
    arms = ["pairwise-dist", "ddc", "pairwise-cos"]
    reports = asyncio.run(run_arms(cfg, arms))
    assert [r.arm for r in reports] == arms
    assert reports[1] == run_adaptation_2d(cfg.model_copy(update={"loss": "ddc"}))


def test_geometry_report_csv_line():
    report = GeometryReport(
        arm="ddc",
        seed=7,
        center_drift=0.5,
        rotation_deg=1.25,
        structure_corr=0.75,
        scale_ratio=1.0,
        final_loss=0.125,
        rotation_degenerate=True,
        loss_trajectory=[0.5, 0.125],
    )
    assert GeometryReport.csv_header() == (
        "arm,seed,center_drift,rotation_deg,structure_corr,scale_ratio,final_loss,"
        "rotation_degenerate,structure_degenerate"
    )
    assert report.csv_line() == "ddc,7,0.5,1.25,0.75,1.0,0.125,1,0"
    with pytest.raises(ValidationError):
        GeometryReport(**{**report.model_dump(), "loss_trajectory": [float("nan")]})
