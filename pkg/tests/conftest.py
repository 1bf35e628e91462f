import copy
import json
from pathlib import Path
from typing import Any, Dict

import pytest
import torch

from app.v1.models.config_models import DenoiserConfig, PhasicConfig, RunConfig
from engine.diffusion import DiffusionProcess
from engine.numerics import DTYPE, RngStream
from engine.schedule import make_linear_schedule

TINY_T = 20
GOLDEN_PATH = Path(__file__).with_name("goldens.json")


class LinearPredictor:
    """eps(x_t, t) = scale * x_t; consumes no random draws."""

    def __init__(self, scale: float = 0.1):
        self.scale = scale

    def __call__(self, xt: torch.Tensor, t: int, rng: RngStream) -> torch.Tensor:
        return self.scale * xt


_TINY_SECTIONS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "image": {
        "dataset": {"kind": "shapes", "n_source": 12, "m_target": 4},
        "denoiser": {"mode": "image", "channels": 1, "image_size": 16, "widths": [4, 4, 4], "time_dim": 8},
        "encoders": {"ddc": "frozen-source", "style": "random-conv", "random_conv_widths": [2, 2, 2]},
        "sampler": {"mode": "icsg", "M": 8, "t_stop": 4, "K": 1, "N": 4},
    },
    "point": {
        "dataset": {"kind": "moons", "n_source": 32, "m_target": 5},
        "denoiser": {"mode": "point", "point_dim": 2, "hidden": 8, "time_dim": 8},
        "encoders": {"ddc": "frozen-source", "style": "random-conv", "random_conv_widths": [4, 4, 4]},
        "sampler": {"mode": "icsg", "M": 8, "t_stop": 4, "K": 1, "N": 2},
    },
}


def tiny_run_config(mode: str = "image", **sections: Dict[str, Any]) -> RunConfig:
    """A RunConfig small enough for unit tests; ``sections`` update single fields per section."""
    data: Dict[str, Any] = {
        "run_id": f"tiny-{mode}",
        "mode": mode,
        "seed": 3,
        "schedule": {"kind": "linear", "T": TINY_T, "beta_start": 1e-3, "beta_end": 0.2},
        "phasic": {"T": TINY_T, "T_s": 6, "alpha_w": 3},
        "losses": {"lambda_ddc": 1.0, "lambda_style": 1.0},
        "training": {
            "batch_size": 2,
            "lr": 1e-3,
            "pretrain_iters": 2,
            "warmup_iters": 2,
            "adapt_iters": 3,
            "metrics_every": 2,
            "eval_batch": 4,
            "eval_t": 10,
            "clip_x0": mode == "image",
        },
        **copy.deepcopy(_TINY_SECTIONS[mode]),
    }
    for name, fields in sections.items():
        if isinstance(data.get(name), dict):
            data[name].update(fields)
        else:
            data[name] = fields
    return RunConfig.model_validate(data)


@pytest.fixture
def make_run_config():
    return tiny_run_config


@pytest.fixture
def image_config() -> DenoiserConfig:
    return DenoiserConfig(mode="image", channels=1, image_size=8, widths=[4, 6, 8], time_dim=8)


@pytest.fixture
def point_config() -> DenoiserConfig:
    return DenoiserConfig(mode="point", point_dim=2, hidden=8, time_dim=8)


@pytest.fixture
def tiny_phasic() -> PhasicConfig:
    return PhasicConfig(T=TINY_T, T_s=6, alpha_w=3)


@pytest.fixture
def default_phasic() -> PhasicConfig:
    return PhasicConfig(T=1000, T_s=300, alpha_w=3)


@pytest.fixture
def tiny_schedule():
    return make_linear_schedule(TINY_T, 1e-3, 0.2)


@pytest.fixture
def toy_process(tiny_schedule) -> DiffusionProcess:
    return DiffusionProcess(tiny_schedule, LinearPredictor(0.1))


@pytest.fixture
def random_images():
    def draw(seed: int, shape=(2, 1, 8, 8)) -> torch.Tensor:
        generator = torch.Generator().manual_seed(seed)
        return torch.rand(shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0
    return draw


@pytest.fixture
def golden():
    """Recorded value of a fixed-seed run, keyed by name.

    A missing key is written to goldens.json from the current run and the test is
    skipped; later runs compare against the recorded value.
    """
    def recorded(name: str, value: Any) -> Any:
        goldens = json.loads(GOLDEN_PATH.read_text(encoding="utf-8")) if GOLDEN_PATH.exists() else {}
        if name not in goldens:
            goldens[name] = value
            GOLDEN_PATH.write_text(json.dumps(goldens, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            pytest.skip(f"golden {name!r} recorded in {GOLDEN_PATH.name}")
        return goldens[name]
    return recorded
