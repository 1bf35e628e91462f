"""File formats: PGM images, point CSVs, checkpoints and result CSVs."""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from engine.denoiser import AdamState
from engine.numerics import DTYPE

from ..models.config_models import RunConfig
from ..models.dataset_models import DomainDataset, DatasetManifest
from ..models.geolab_models import GeometryReport
from ..models.metrics_models import MetricsRow, SweepRow

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FSDM"
CHECKPOINT_VERSION = 1

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    config: RunConfig
    params: torch.Tensor
    adam: Optional[AdamState] = None


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def to_pixels(image: torch.Tensor) -> np.ndarray:
    """v in [-1, 1] -> round((v + 1) * 127.5), clamped to [0, 255]."""
    values = np.rint((image.detach().numpy().astype(np.float64) + 1.0) * 127.5)
    return np.clip(values, 0, 255).astype(np.uint8)


def from_pixels(pixels: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(pixels.astype(np.float64) / 127.5 - 1.0)


def write_pgm(path: PathLike, image: torch.Tensor) -> None:
    """Binary P5 greyscale; ``image`` is H x W or 1 x H x W."""
    if image.dim() == 3:
        if image.shape[0] != 1:
            raise ValueError(f"PGM holds a single channel, got {image.shape[0]}")
        image = image[0]
    if image.dim() != 2:
        raise ValueError(f"PGM image must be H x W, got {tuple(image.shape)}")
    height, width = image.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + to_pixels(image).tobytes())


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path: PathLike) -> torch.Tensor:
    """Returns a 1 x H x W tensor in [-1, 1]."""
    data = Path(path).read_bytes()
    (magic, width, height, maxval), offset = _pgm_tokens(data, 4)
    if magic != b"P5" or int(maxval) != 255:
        raise ValueError(f"{path}: only 8-bit binary PGM (P5, maxval 255) is supported")
    width, height = int(width), int(height)
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return from_pixels(pixels.reshape(height, width)).unsqueeze(0)


def save_images(directory: PathLike, images: torch.Tensor) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, image in enumerate(images):
        path = directory / f"{i:04d}.pgm"
        write_pgm(path, image)
        paths.append(path)
    return paths


def load_images(directory: PathLike) -> torch.Tensor:
    paths = sorted(Path(directory).glob("*.pgm"))
    if not paths:
        raise ValueError(f"no .pgm files in {directory}")
    return torch.stack([read_pgm(p) for p in paths])


# ---------------------------------------------------------------------------
# Point CSV
# ---------------------------------------------------------------------------

def write_points_csv(path: PathLike, points: torch.Tensor) -> None:
    if points.dim() != 2 or points.shape[1] != 2:
        raise ValueError(f"point CSV holds (n, 2) sets, got {tuple(points.shape)}")
    lines = ["x,y"] + [f"{float(x)!r},{float(y)!r}" for x, y in points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_points_csv(path: PathLike) -> torch.Tensor:
    lines = Path(path).read_text(encoding="utf-8").split()
    if not lines or lines[0] != "x,y":
        raise ValueError(f"{path}: expected an 'x,y' header")
    rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
    return torch.tensor(rows, dtype=DTYPE).reshape(-1, 2)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _f64(values: torch.Tensor) -> bytes:
    return np.ascontiguousarray(values.detach().numpy(), dtype="<f8").tobytes()


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    """FSDM | u32 version | u64 len + config JSON | u64 n + f64 params | u8 adam flag [| adam state]."""
    config_json = checkpoint.config.model_dump_json().encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<Q", len(config_json)),
        config_json,
        struct.pack("<Q", checkpoint.params.numel()),
        _f64(checkpoint.params),
    ]
    adam = checkpoint.adam
    if adam is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts += [
            struct.pack("<B", 1),
            struct.pack("<Q", adam.step),
            struct.pack("<4d", adam.lr, adam.beta1, adam.beta2, adam.eps),
            struct.pack("<Q", adam.m.numel()),
            _f64(adam.m),
            struct.pack("<Q", adam.v.numel()),
            _f64(adam.v),
        ]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def vector(self) -> torch.Tensor:
        (n,) = self.unpack("<Q")
        return torch.from_numpy(np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64))


def decode_checkpoint(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint: bad magic bytes")
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (length,) = reader.unpack("<Q")
    config = RunConfig.model_validate_json(reader.take(length).decode("utf-8"))
    params = reader.vector()
    (flag,) = reader.unpack("<B")
    adam = None
    if flag:
        (step,) = reader.unpack("<Q")
        lr, beta1, beta2, eps = reader.unpack("<4d")
        m = reader.vector()
        v = reader.vector()
        adam = AdamState(m, v, step, lr, beta1, beta2, eps)
    if reader.pos != len(data):
        raise ValueError("trailing bytes after checkpoint")
    return Checkpoint(config, params, adam)


# ---------------------------------------------------------------------------
# Result CSVs
# ---------------------------------------------------------------------------

def _write_lines(path: PathLike, header: str, lines: Iterable[str]) -> None:
    Path(path).write_text("\n".join([header, *lines]) + "\n", encoding="utf-8")


def write_metrics_csv(path: PathLike, rows: Sequence[MetricsRow]) -> None:
    _write_lines(path, MetricsRow.csv_header(), (row.csv_line() for row in rows))


def read_metrics_csv(path: PathLike) -> List[MetricsRow]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MetricsRow.csv_header():
        raise ValueError(f"{path}: header does not match the metrics columns")
    columns = MetricsRow.columns()
    return [MetricsRow.model_validate(dict(zip(columns, line.split(",")))) for line in lines[1:] if line]


def write_sweep_csv(path: PathLike, rows: Sequence[SweepRow]) -> None:
    _write_lines(path, SweepRow.csv_header(), (row.csv_line() for row in rows))


def write_loss_table(path: PathLike, columns: Dict[str, Sequence[float]]) -> None:
    """One row per iteration; every column must have the same length."""
    lengths = {len(values) for values in columns.values()}
    if len(lengths) > 1:
        raise ValueError(f"loss columns differ in length: {sorted(lengths)}")
    rows = zip(*columns.values())
    _write_lines(
        path,
        ",".join(["iteration", *columns]),
        (",".join([str(i), *(repr(float(v)) for v in row)]) for i, row in enumerate(rows)),
    )


def write_geometry_reports(path: PathLike, reports: Sequence[GeometryReport]) -> None:
    _write_lines(path, GeometryReport.csv_header(), (r.csv_line() for r in reports))


def write_geometry_trajectories(path: PathLike, reports: Sequence[GeometryReport]) -> None:
    lines = (
        f"{report.arm},{i},{loss!r}"
        for report in reports
        for i, loss in enumerate(report.loss_trajectory)
    )
    _write_lines(path, "arm,iteration,loss", lines)


class StorageService:
    """Reads and writes run artifacts."""

    def save_dataset(self, directory: PathLike, dataset: DomainDataset, name: str) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if dataset.kind == "image":
            save_images(directory / name, dataset.items)
            return directory / name
        path = directory / f"{name}.csv"
        write_points_csv(path, dataset.items)
        return path

    def load_dataset(self, directory: PathLike, name: str, kind: str, domain: str, few_shot: bool = False,
                     allow_large_target_set: bool = False) -> DomainDataset:
        directory = Path(directory)
        items = load_images(directory / name) if kind == "image" else read_points_csv(directory / f"{name}.csv")
        return DomainDataset(
            items=items,
            domain=domain,
            kind=kind,
            few_shot=few_shot,
            allow_large_target_set=allow_large_target_set,
        )

    def save_manifest(self, path: PathLike, manifest: DatasetManifest) -> None:
        Path(path).write_text(json.dumps(manifest.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def load_manifest(self, path: PathLike) -> DatasetManifest:
        return DatasetManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))

    def save_checkpoint(self, path: PathLike, checkpoint: Checkpoint) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(encode_checkpoint(checkpoint))
        logger.info(f"✅ checkpoint written: {path} ({checkpoint.params.numel()} parameters)")

    def load_checkpoint(self, path: PathLike) -> Checkpoint:
        return decode_checkpoint(Path(path).read_bytes())

    def load_domains(self, directory: PathLike, mode: str, allow_large_target_set: bool = False) -> Tuple[DomainDataset, DomainDataset]:
        source = self.load_dataset(directory, "source", mode, "source")
        target = self.load_dataset(directory, "target", mode, "target", few_shot=True,
                                   allow_large_target_set=allow_large_target_set)
        return source, target
