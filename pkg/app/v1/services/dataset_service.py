import logging
import math
from typing import Tuple

import torch

from engine.geolab import make_two_moons, transform_about
from engine.numerics import DTYPE, RngStream

from ..models.config_models import DatasetSpec, FEW_SHOT_LIMIT
from ..models.dataset_models import DomainDataset

logger = logging.getLogger(__name__)

GLYPH_SIZE = 16
GLYPH_KINDS = ("ellipse", "rect", "triangle")
SOURCE_STREAM = 0
TARGET_STREAM = 1

# two-moons spans roughly [-1, 2] x [-0.5, 1]; this maps it into [-1, 1] x [-0.5, 0.5]
MOONS_CENTER = (0.5, 0.25)
MOONS_SCALE = 1.0 / 1.5
TARGET_MOONS_SHIFT = (0.3, 0.3)
TARGET_MOONS_SCALE = 0.6
TARGET_MOONS_ROTATION_DEG = 20.0


def _inside(kind: str, u: torch.Tensor, v: torch.Tensor, a: float, b: float) -> torch.Tensor:
    if kind == "ellipse":
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    if kind == "rect":
        return (u.abs() <= a) & (v.abs() <= b)
    # isosceles triangle: apex at v=-b, base at v=+b
    return (v <= b) & (u.abs() * 2.0 * b <= a * (v + b))


def render_glyph(kind: str, cx: float, cy: float, a: float, b: float, angle: float, outline: bool, size: int = GLYPH_SIZE) -> torch.Tensor:
    """A 1 x size x size glyph in [-1, 1].

    Filled style draws a white shape on black; outline style draws the
    shape's boundary in black on white.
    """
    coords = torch.arange(size, dtype=DTYPE)
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = xx - cx, yy - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    inside = _inside(kind, u, v, a, b)
    if not outline:
        return torch.where(inside, 1.0, -1.0).to(DTYPE).unsqueeze(0)

    padded = torch.nn.functional.pad(inside[None, None].to(DTYPE), (1, 1, 1, 1))[0, 0] > 0
    interior = (
        inside
        & padded[:-2, 1:-1] & padded[2:, 1:-1]
        & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    edge = inside & ~interior
    return torch.where(edge, -1.0, 1.0).to(DTYPE).unsqueeze(0)


def random_glyphs(n: int, rng: RngStream, outline: bool, size: int = GLYPH_SIZE) -> torch.Tensor:
    kinds = rng.integers(0, len(GLYPH_KINDS), n)
    poses = rng.uniform(5 * n).reshape(n, 5)
    center = (size - 1) / 2.0
    glyphs = []
    for kind, (jx, jy, ja, jb, jr) in zip(kinds, poses):
        glyphs.append(render_glyph(
            GLYPH_KINDS[int(kind)],
            cx=center + (jx - 0.5) * 3.0,
            cy=center + (jy - 0.5) * 3.0,
            a=3.0 + 3.0 * ja,
            b=3.0 + 3.0 * jb,
            angle=jr * math.pi,
            outline=outline,
            size=size,
        ))
    return torch.stack(glyphs)


def standard_moons(n: int, rng: RngStream) -> torch.Tensor:
    points = make_two_moons(n, rng, noise=0.05)
    return (points - torch.tensor(MOONS_CENTER, dtype=DTYPE)) * MOONS_SCALE


class DatasetService:
    """Procedural source/target toy domains."""

    def gen_toy_domains(
        self,
        kind: str,
        seed: int,
        n_source: int,
        m_target: int,
        allow_large_target_set: bool = False,
    ) -> Tuple[DomainDataset, DomainDataset]:
        if n_source < 1 or m_target < 1:
            raise ValueError(f"dataset counts must be >= 1, got n_source={n_source}, m_target={m_target}")
        if m_target > FEW_SHOT_LIMIT and not allow_large_target_set:
            raise ValueError(f"m_target must be <= {FEW_SHOT_LIMIT} without allow_large_target_set, got {m_target}")

        source_rng = RngStream(seed, SOURCE_STREAM)
        target_rng = RngStream(seed, TARGET_STREAM)
        if kind == "shapes":
            source_items = random_glyphs(n_source, source_rng, outline=False)
            target_items = random_glyphs(m_target, target_rng, outline=True)
            sample_kind = "image"
        elif kind == "moons":
            source_items = standard_moons(n_source, source_rng)
            target_items = transform_about(
                standard_moons(m_target, target_rng),
                torch.zeros(2, dtype=DTYPE),
                TARGET_MOONS_ROTATION_DEG,
                TARGET_MOONS_SCALE,
            ) + torch.tensor(TARGET_MOONS_SHIFT, dtype=DTYPE)
            sample_kind = "point"
        else:
            raise ValueError(f"unknown dataset kind {kind!r}")

        source = DomainDataset(items=source_items, domain="source", kind=sample_kind)
        target = DomainDataset(
            items=target_items,
            domain="target",
            kind=sample_kind,
            few_shot=True,
            allow_large_target_set=allow_large_target_set,
        )
        logger.info(f"📦 {kind}: {len(source)} source / {len(target)} target samples (seed {seed})")
        return source, target

    def from_spec(self, spec: DatasetSpec, seed: int) -> Tuple[DomainDataset, DomainDataset]:
        return self.gen_toy_domains(spec.kind, seed, spec.n_source, spec.m_target, spec.allow_large_target_set)
