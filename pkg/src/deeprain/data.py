"""Dataset handling: text parsing, the DRN1 binary container, deterministic
splits and minibatches, and a synthetic radar-sequence generator.

Text layout (one record per line, whitespace separated): the rainfall label
first, then T*C*H*W reflectivity integers in time-major, then channel, then
row-major spatial order. Lines starting with ``#`` are comments.

Synthetic records contain drifting Gaussian storm blobs quantized to
[0, 255]. The label is the published learnability oracle

    m     = mean normalized channel-0 reflectivity over the central
            floor(H/2) x floor(W/2) crop of the last 5 frames
    label = max(0, a*m + b*m^2 + gaussian_noise)

so the generated labels are recomputable from the frames up to the noise
term, and the quadratic term keeps plain linear regression from fitting the
target exactly.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DataFormatError",
    "RadarRecord",
    "DatasetSplit",
    "SynthConfig",
    "parse_text_record",
    "parse_text_file",
    "write_binary",
    "read_binary",
    "split",
    "minibatches",
    "synth_generate",
    "synth_feature",
    "synth_label",
    "normalize",
    "load_synth_config",
]

BINARY_MAGIC = b"DRN1"
BINARY_VERSION = 1


class DataFormatError(ValueError):
    """Malformed dataset input, carrying line and token positions."""

    def __init__(self, message: str, line_no: int | None = None, token_index: int | None = None):
        self.line_no = line_no
        self.token_index = token_index
        where = ""
        if line_no is not None:
            where += f" (line {line_no}"
            if token_index is not None:
                where += f", token {token_index}"
            where += ")"
        elif token_index is not None:
            where = f" (token {token_index})"
        super().__init__(message + where)


@dataclass
class RadarRecord:
    """One labeled sample: [T,C,H,W] reflectivity integers plus the label."""

    label: float
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4:
            raise DataFormatError(f"frames must be rank 4, got rank {frames.ndim}")
        if frames.dtype != np.uint8:
            if not np.issubdtype(frames.dtype, np.integer):
                raise DataFormatError("frames must hold integers")
            if frames.size and (frames.min() < 0 or frames.max() > 255):
                raise DataFormatError("reflectivity values must be in [0, 255]")
            frames = frames.astype(np.uint8)
        self.frames = frames
        self.label = float(self.label)
        if not math.isfinite(self.label) or self.label < 0:
            raise DataFormatError(f"label must be finite and >= 0, got {self.label}")

    @property
    def dims(self) -> tuple:
        return self.frames.shape

    def __eq__(self, other):
        return (
            isinstance(other, RadarRecord)
            and self.label == other.label
            and self.frames.shape == other.frames.shape
            and bool(np.array_equal(self.frames, other.frames))
        )


@dataclass
class DatasetSplit:
    """Disjoint index lists covering the whole dataset."""

    train: list[int]
    validation: list[int]
    test: list[int]


def parse_text_record(line: str, dims: tuple, line_no: int | None = None) -> RadarRecord:
    """Parse one text line: the label followed by T*C*H*W integers."""
    t, c, h, w = dims
    n_vals = t * c * h * w
    tokens = line.split()
    if len(tokens) != n_vals + 1:
        raise DataFormatError(
            f"expected {n_vals + 1} tokens (1 label + {n_vals} values), got {len(tokens)}",
            line_no=line_no,
        )
    try:
        label = float(tokens[0])
    except ValueError:
        raise DataFormatError(
            f"label {tokens[0]!r} is not numeric", line_no=line_no, token_index=0
        ) from None
    try:
        values = np.array(tokens[1:], dtype=np.int64)
    except ValueError:
        for i, tok in enumerate(tokens[1:], start=1):
            try:
                int(tok)
            except ValueError:
                raise DataFormatError(
                    f"value {tok!r} is not an integer", line_no=line_no, token_index=i
                ) from None
        raise
    bad = np.nonzero((values < 0) | (values > 255))[0]
    if bad.size:
        i = int(bad[0]) + 1
        raise DataFormatError(
            f"reflectivity {tokens[i]} outside [0, 255]", line_no=line_no, token_index=i
        )
    try:
        return RadarRecord(label=label, frames=values.reshape(t, c, h, w))
    except DataFormatError as exc:
        raise DataFormatError(str(exc), line_no=line_no) from None


def parse_text_file(path: str, dims: tuple) -> list[RadarRecord]:
    """Parse a text dataset, ignoring comment (``#``) and blank lines."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            records.append(parse_text_record(stripped, dims, line_no=line_no))
    return records


def write_binary(records: list[RadarRecord], path: str) -> None:
    """Write the DRN1 container: header, then label + raw frame bytes per record."""
    if not records:
        raise DataFormatError("cannot write an empty record set")
    dims = records[0].dims
    for i, rec in enumerate(records):
        if rec.dims != dims:
            raise DataFormatError(
                f"record {i} has dims {rec.dims}, first record has {dims}"
            )
    t, c, h, w = dims
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(
                struct.pack("<4sIIIIIQ", BINARY_MAGIC, BINARY_VERSION, t, c, h, w, len(records))
            )
            for rec in records:
                fh.write(struct.pack("<d", rec.label))
                fh.write(rec.frames.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def read_binary(path: str) -> list[RadarRecord]:
    with open(path, "rb") as fh:
        data = fh.read()
    header = struct.calcsize("<4sIIIIIQ")
    if len(data) < header:
        raise DataFormatError("bad magic: file shorter than the DRN1 header")
    magic, version, t, c, h, w, count = struct.unpack_from("<4sIIIIIQ", data, 0)
    if magic != BINARY_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}, expected {BINARY_MAGIC!r}")
    if version != BINARY_VERSION:
        raise DataFormatError(f"unsupported version {version}")
    n_vals = t * c * h * w
    rec_size = 8 + n_vals
    expected = header + count * rec_size
    if len(data) != expected:
        raise DataFormatError(
            f"size mismatch: header promises {count} records "
            f"({expected} bytes), file has {len(data)} bytes"
        )
    records = []
    pos = header
    for _ in range(count):
        (label,) = struct.unpack_from("<d", data, pos)
        frames = np.frombuffer(data, dtype=np.uint8, count=n_vals, offset=pos + 8)
        records.append(RadarRecord(label=label, frames=frames.reshape(t, c, h, w).copy()))
        pos += rec_size
    return records


def _fisher_yates(items: list, rng: np.random.Generator) -> list:
    for i in range(len(items) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        items[i], items[j] = items[j], items[i]
    return items


def split(n: int, ratios: tuple = (0.9, 0.05, 0.05), seed: int = 0) -> DatasetSplit:
    """Seeded Fisher-Yates shuffle, then a contiguous train/val/test cut.

    Validation and test sizes round half up; the remainder goes to train.
    """
    if n <= 0:
        raise ValueError(f"split: need at least one record, got {n}")
    if len(ratios) != 3:
        raise ValueError(f"split: expected 3 ratios, got {len(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split: ratios must sum to 1, got {sum(ratios)}")
    order = _fisher_yates(list(range(n)), np.random.default_rng(seed))
    n_val = int(math.floor(n * ratios[1] + 0.5))
    n_test = int(math.floor(n * ratios[2] + 0.5))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ValueError("split: rounding left no records for training")
    return DatasetSplit(
        train=order[:n_train],
        validation=order[n_train : n_train + n_val],
        test=order[n_train + n_val :],
    )


def minibatches(indices: list[int], batch_size: int, epoch: int, seed: int) -> list[list[int]]:
    """Per-epoch reshuffled batches; the final partial batch is kept."""
    if batch_size < 1:
        raise ValueError(f"minibatches: batch_size must be >= 1, got {batch_size}")
    order = _fisher_yates(list(indices), np.random.default_rng([seed, epoch]))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


# -- synthetic generator -----------------------------------------------------


@dataclass
class SynthConfig:
    """Generator settings; defaults match the canonical benchmark geometry."""

    count: int
    t: int = 5
    c: int = 2
    h: int = 8
    w: int = 8
    noise: float = 0.02
    a: float = 0.5
    b: float = 1.0
    seed: int = 42

    def __post_init__(self):
        for name in ("count", "t", "c", "h", "w"):
            if getattr(self, name) < 1:
                raise ValueError(f"SynthConfig.{name} must be >= 1")
        if self.noise < 0:
            raise ValueError("SynthConfig.noise must be >= 0")
        if self.seed < 0:
            raise ValueError("SynthConfig.seed must be >= 0")


_SYNTH_KEYS = {
    "count": int,
    "t": int,
    "c": int,
    "h": int,
    "w": int,
    "noise": float,
    "a": float,
    "b": float,
    "seed": int,
}


def load_synth_config(path: str) -> SynthConfig:
    """Read a key=value config file (unknown keys rejected)."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise DataFormatError("expected key=value", line_no=line_no)
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in _SYNTH_KEYS:
                raise DataFormatError(f"unknown key {key!r}", line_no=line_no)
            try:
                values[key] = _SYNTH_KEYS[key](raw.strip())
            except ValueError:
                raise DataFormatError(
                    f"value {raw.strip()!r} invalid for key {key!r}", line_no=line_no
                ) from None
    if "count" not in values:
        raise DataFormatError("config must set count")
    return SynthConfig(**values)


def synth_feature(frames: np.ndarray) -> float:
    """Mean normalized channel-0 reflectivity over the central crop of the
    last five frames (all frames when T < 5)."""
    t, _, h, w = frames.shape
    ch, cw = h // 2, w // 2
    top, left = (h - ch) // 2, (w - cw) // 2
    last = frames[max(0, t - 5) :, 0, top : top + ch, left : left + cw]
    return float(last.mean() / 255.0)


def synth_label(frames: np.ndarray, a: float, b: float) -> float:
    """Noise-free closed form of the synthetic label."""
    m = synth_feature(frames)
    return max(0.0, a * m + b * m * m)


def _blob_frames(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Drifting Gaussian storm blobs; higher channels view the same storm
    broader and fainter, like higher altitude slices."""
    yy = np.arange(cfg.h, dtype=np.float64)[:, None]
    xx = np.arange(cfg.w, dtype=np.float64)[None, :]
    n_blobs = int(rng.integers(1, 5))
    cy = rng.uniform(0, cfg.h - 1, n_blobs)
    cx = rng.uniform(0, cfg.w - 1, n_blobs)
    vy = rng.uniform(-1.5, 1.5, n_blobs)
    vx = rng.uniform(-1.5, 1.5, n_blobs)
    extent = min(cfg.h, cfg.w)
    sigma = rng.uniform(extent / 6.0, extent / 3.0, n_blobs)
    amp = rng.uniform(0.35, 1.0, n_blobs)
    frames = np.zeros((cfg.t, cfg.c, cfg.h, cfg.w), dtype=np.float64)
    for t in range(cfg.t):
        for ch in range(cfg.c):
            s = sigma * (1.0 + 0.15 * ch)
            scale = amp / (1.0 + 0.25 * ch)
            field = np.zeros((cfg.h, cfg.w))
            for b in range(n_blobs):
                d2 = (yy - (cy[b] + t * vy[b])) ** 2 + (xx - (cx[b] + t * vx[b])) ** 2
                field += scale[b] * np.exp(-d2 / (2.0 * s[b] ** 2))
            frames[t, ch] = field
    return np.clip(np.rint(255.0 * frames), 0, 255).astype(np.uint8)


def synth_generate(cfg: SynthConfig) -> list[RadarRecord]:
    """Deterministic per (cfg, record index); records are independent, so
    generation order does not affect content."""
    records = []
    for idx in range(cfg.count):
        rng = np.random.default_rng([cfg.seed, idx])
        frames = _blob_frames(rng, cfg)
        m = synth_feature(frames)
        label = cfg.a * m + cfg.b * m * m
        if cfg.noise > 0:
            label += float(rng.normal(0.0, cfg.noise))
        records.append(RadarRecord(label=max(0.0, label), frames=frames))
    return records


def normalize(record: RadarRecord) -> np.ndarray:
    """Reflectivity integers scaled into [0, 1] as float64 [T,C,H,W]."""
    return record.frames.astype(np.float64) / 255.0
