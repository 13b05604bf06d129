"""Synthetic dataset generation, weight-file persistence, PGM/PPM loading.

Weight file layout (little-endian throughout):

    magic   4 bytes  b"VITW"
    version u32      currently 1
    config  8 x u32  image_size, channels, patch_size, embed_dim,
                     num_heads, num_blocks, mlp_hidden, num_classes
    count   u32      number of tensor records
    record  u16 name length, utf-8 name, u8 rank, u32 dims...,
            float32 payload (row-major)

Payloads are quantized to float32 on save regardless of the in-memory
precision; loading widens back to float64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from qbba_lab.model import ModelConfig, ModelWeights, expected_shapes
from qbba_lab.numerics import clamp_unit, dct2
from qbba_lab.rng import RngStream

MAGIC = b"VITW"
VERSION = 1

_CONFIG_FIELDS = ("image_size", "channels", "patch_size", "embed_dim",
                  "num_heads", "num_blocks", "mlp_hidden", "num_classes")


class WeightFileError(ValueError):
    """Weight file rejection with a machine-readable code: one of
    bad_magic, bad_version, truncated, shape_mismatch, unknown_tensor,
    missing_tensor."""

    def __init__(self, code: str, msg: str):
        super().__init__(f"{code}: {msg}")
        self.code = code


@dataclass
class Dataset:
    images: np.ndarray   # (N, S, S, C) float64 in [0, 1]
    labels: np.ndarray   # (N,) int64
    split: str

    def __len__(self) -> int:
        return self.images.shape[0]


def class_pattern(label: int, cfg: ModelConfig) -> np.ndarray:
    """Noise-free class template: an oriented sinusoid grating."""
    s, k = cfg.image_size, cfg.num_classes
    theta = math.pi * label / k
    cycles = 2.0 + (label % 2)
    yy, xx = np.meshgrid(np.arange(s) + 0.5, np.arange(s) + 0.5, indexing="ij")
    phase = 2.0 * math.pi * cycles * (xx * math.cos(theta) + yy * math.sin(theta)) / s
    base = 0.5 + 0.5 * np.sin(phase)
    return np.repeat(base[:, :, None], cfg.channels, axis=2)


def gen_synthetic(seed: int, n: int, cfg: ModelConfig, split: str = "train",
                  noise_std: float = 0.05) -> Dataset:
    """Deterministic labeled images: class sinusoid plus pixel noise.

    Classes are balanced within one image; train/test streams are disjoint
    forks of the same seed.
    """
    if n < cfg.num_classes:
        raise ValueError("need at least one image per class")
    rng = RngStream(seed).fork(f"dataset:{split}")
    labels = np.arange(n, dtype=np.int64) % cfg.num_classes
    labels = labels[rng.permutation(n)]
    shape = (cfg.image_size, cfg.image_size, cfg.channels)
    images = np.empty((n, *shape))
    templates = [class_pattern(c, cfg) for c in range(cfg.num_classes)]
    for i in range(n):
        noisy = templates[labels[i]] + noise_std * rng.gaussian(shape)
        images[i] = clamp_unit(noisy)
    return Dataset(images=images, labels=labels, split=split)


def dct_centroid_accuracy(train: Dataset, test: Dataset) -> float:
    """Nearest-centroid accuracy in 2D-DCT coefficient space; a brute-force
    separability check for the synthetic task."""
    def feats(ds):
        return np.stack([dct2(img.mean(axis=2)).ravel() for img in ds.images])

    ftr, fte = feats(train), feats(test)
    k = int(train.labels.max()) + 1
    centroids = np.stack([ftr[train.labels == c].mean(axis=0) for c in range(k)])
    d2 = ((fte[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == test.labels).mean())


# ---------------------------------------------------------------------------
# weight files


def save_weights(w: ModelWeights, path) -> None:
    blob = [MAGIC, struct.pack("<I", VERSION)]
    blob.append(struct.pack("<8I", *(getattr(w.config, f) for f in _CONFIG_FIELDS)))
    tensors = list(w.tensors())
    blob.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        encoded = name.encode("utf-8")
        blob.append(struct.pack("<H", len(encoded)))
        blob.append(encoded)
        blob.append(struct.pack("<B", arr.ndim))
        blob.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blob.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise WeightFileError("truncated", "truncated payload")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise WeightFileError("bad_magic", "not a weight file")
    version = r.u32()
    if version != VERSION:
        raise WeightFileError("bad_version", f"unsupported version {version}")
    cfg = ModelConfig(**dict(zip(_CONFIG_FIELDS, struct.unpack("<8I", r.take(32)))))
    expected = expected_shapes(cfg)
    count = r.u32()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = r.take(name_len).decode("utf-8")
        rank = struct.unpack("<B", r.take(1))[0]
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        if name not in expected:
            raise WeightFileError("unknown_tensor", f"unexpected tensor {name!r}")
        if shape != expected[name]:
            raise WeightFileError(
                "shape_mismatch", f"{name} has shape {shape}, expected {expected[name]}")
        payload = r.take(4 * int(np.prod(shape, dtype=np.int64)))
        arrays[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
    missing = [n for n in ModelWeights.TENSOR_NAMES if n not in arrays]
    if missing:
        raise WeightFileError("missing_tensor", f"missing tensors: {missing}")
    return ModelWeights(cfg, **arrays)


# ---------------------------------------------------------------------------
# PGM / PPM


def load_image_pgm(path, cfg: ModelConfig) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file as an (S, S, C) unit image."""
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise ValueError("malformed header: unexpected end of file")
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval

    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ValueError(f"unsupported format {magic!r}, need binary P5/P6")
    if maxval != 255:
        raise ValueError(f"unsupported max value {maxval}, need 255")
    if (height, width, channels) != (cfg.image_size, cfg.image_size, cfg.channels):
        raise ValueError(
            f"image is {height}x{width}x{channels}, config needs "
            f"{cfg.image_size}x{cfg.image_size}x{cfg.channels}")
    need = width * height * channels
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise ValueError("truncated pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(height, width, channels)
