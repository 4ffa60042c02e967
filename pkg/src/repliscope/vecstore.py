"""In-memory vector datasets, image preprocessing and the VDS binary format.

A :class:`VectorDataset` is an immutable ``count x dim`` float32 matrix with
optional per-row source ids and a tag saying which space the vectors live in.
Image rows are flattened ``H x W x C`` in row-major order, so the channel is
the fastest-varying axis.
"""

from __future__ import annotations

import enum
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

VDS_MAGIC = b"VDS1"
VDS_DTYPE_F32 = 1
_HEADER = struct.Struct("<4sBBHIQ")
_U32 = struct.Struct("<I")


class SpaceTag(enum.IntEnum):
    PIXEL_RAW_0_255 = 0
    PIXEL_ZSCORED = 1
    EXTERNAL_EMBEDDING = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "SpaceTag":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


class VdsFormatError(ValueError):
    """Base class for malformed VDS files."""


class BadMagicError(VdsFormatError):
    pass


class TruncatedFileError(VdsFormatError):
    def __init__(self, what: str, expected: int, actual: int):
        super().__init__(
            f"truncated VDS file: {what} needs {expected} bytes, only {actual} available"
        )
        self.expected = expected
        self.actual = actual


class ShapeMismatchError(VdsFormatError):
    pass


@dataclass(frozen=True, eq=False)
class VectorDataset:
    """An immutable ``count x dim`` matrix of float32 sample vectors.

    Parameters
    ----------
    values : array_like, shape (count, dim)
        Converted to a read-only C-contiguous float32 array.
    source_ids : sequence of str, optional
        One label per row (file path, sample name, ...).
    space_tag : SpaceTag
        Which space the vectors live in. Distances are only meaningful
        between datasets sharing a tag.
    """

    values: np.ndarray
    source_ids: Optional[tuple] = None
    space_tag: SpaceTag = SpaceTag.PIXEL_RAW_0_255

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32, order="C", copy=True)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"dataset needs count >= 1 and dim >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "space_tag", SpaceTag.parse(self.space_tag))
        if self.source_ids is not None:
            ids = tuple(str(s) for s in self.source_ids)
            if len(ids) != values.shape[0]:
                raise ValueError(
                    f"source_ids has {len(ids)} entries for {values.shape[0]} rows"
                )
            object.__setattr__(self, "source_ids", ids)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.count

    def row_id(self, i: int) -> str:
        if self.source_ids is None:
            return str(i)
        return self.source_ids[i]

    def take(self, indices) -> "VectorDataset":
        indices = np.asarray(indices, dtype=np.int64)
        ids = None
        if self.source_ids is not None:
            ids = tuple(self.source_ids[i] for i in indices)
        return VectorDataset(self.values[indices], ids, self.space_tag)

    def same_content(self, other: "VectorDataset") -> bool:
        """Bitwise equality of values, ids and tag."""
        return (
            self.space_tag == other.space_tag
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
            and self.source_ids == other.source_ids
        )


@dataclass(frozen=True)
class PreprocessConfig:
    target_resolution: int = 128
    id_resolution: int = 32
    zscore: bool = False
    channels: int = 3

    def __post_init__(self):
        if self.target_resolution < 1 or self.id_resolution < 1:
            raise ValueError("resolutions must be >= 1")
        if self.id_resolution > self.target_resolution:
            raise ValueError(
                f"id_resolution ({self.id_resolution}) exceeds "
                f"target_resolution ({self.target_resolution})"
            )
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple
    std: tuple

    @property
    def channels(self) -> int:
        return len(self.mean)

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}


@dataclass
class LoadResult:
    dataset: VectorDataset
    skipped: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    stats: Optional[ChannelStats] = None


def _as_hwc(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected an H x W x C image with C in (1, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("empty image")
    return arr


def center_crop_resize(image, target: int) -> np.ndarray:
    """Crop the largest centered square and resample it bilinearly.

    Parameters
    ----------
    image : array_like, shape (H, W) or (H, W, C)
        Pixel values in 0..255. Width is the second axis.
    target : int
        Output side length.

    Returns
    -------
    np.ndarray, shape (target, target, C), float32
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    arr = _as_hwc(image)
    h, w, c = arr.shape
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    square = arr[top:top + side, left:left + side, :]
    if side == target:
        return np.clip(square, 0.0, 255.0).astype(np.float32)
    out = np.empty((target, target, c), dtype=np.float32)
    for ch in range(c):
        plane = Image.fromarray(np.ascontiguousarray(square[:, :, ch], dtype=np.float32))
        out[:, :, ch] = np.asarray(plane.resize((target, target), Image.BILINEAR), dtype=np.float32)
    return np.clip(out, 0.0, 255.0)


def infer_image_shape(dim: int) -> tuple:
    """Recover ``(side, channels)`` from a flattened square image length.

    ``3 * s**2`` is never a perfect square, so the answer is unique.
    """
    for channels in (3, 1):
        if dim % channels:
            continue
        side = math.isqrt(dim // channels)
        if side * side * channels == dim:
            return side, channels
    raise ValueError(f"dim {dim} is not a flattened square image with 1 or 3 channels")


def downscale(ds: VectorDataset, side: int) -> VectorDataset:
    """Resize every image row of a pixel-space dataset to ``side x side``."""
    if ds.space_tag == SpaceTag.EXTERNAL_EMBEDDING:
        raise ValueError("cannot resize external embedding vectors")
    native, channels = infer_image_shape(ds.dim)
    if native == side:
        return ds
    images = ds.values.reshape(ds.count, native, native, channels)
    rows = np.stack([center_crop_resize(img, side).reshape(-1) for img in images])
    return VectorDataset(rows, ds.source_ids, ds.space_tag)


def _channel_view(ds: VectorDataset, channels: int) -> np.ndarray:
    if ds.dim % channels:
        raise ValueError(f"dim {ds.dim} is not divisible by {channels} channels")
    return ds.values.reshape(ds.count, -1, channels)


def apply_channel_stats(ds: VectorDataset, stats: ChannelStats) -> VectorDataset:
    """Normalize raw pixels with precomputed per-channel statistics."""
    view = _channel_view(ds, stats.channels).astype(np.float64)
    mean = np.asarray(stats.mean, dtype=np.float64)
    std = np.asarray(stats.std, dtype=np.float64)
    safe = np.where(std > 0, std, 1.0)
    out = np.where(std > 0, (view - mean) / safe, 0.0)
    return VectorDataset(out.reshape(ds.count, ds.dim), ds.source_ids, SpaceTag.PIXEL_ZSCORED)


def undo_channel_stats(ds: VectorDataset, stats: ChannelStats) -> VectorDataset:
    view = _channel_view(ds, stats.channels).astype(np.float64)
    out = view * np.asarray(stats.std) + np.asarray(stats.mean)
    return VectorDataset(out.reshape(ds.count, ds.dim), ds.source_ids, SpaceTag.PIXEL_RAW_0_255)


def zscore_normalize(ds: VectorDataset, channels: int = 3, warnings: Optional[list] = None):
    """Per-channel z-scoring with statistics taken over the whole dataset.

    Zero-variance channels are mapped to zeros and a warning is appended to
    ``warnings`` (and logged).

    Returns
    -------
    (VectorDataset, ChannelStats)
    """
    if ds.space_tag != SpaceTag.PIXEL_RAW_0_255:
        raise ValueError(f"z-scoring expects pixel_raw_0_255 input, got {ds.space_tag.label}")
    view = _channel_view(ds, channels).astype(np.float64)
    mean = view.mean(axis=(0, 1))
    std = view.std(axis=(0, 1))
    for ch in np.flatnonzero(std == 0):
        msg = f"channel {ch} has zero variance; mapped to zeros"
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)
    stats = ChannelStats(tuple(float(m) for m in mean), tuple(float(s) for s in std))
    return apply_channel_stats(ds, stats), stats


def _decode(path: Path, channels: int, target: int):
    try:
        with Image.open(path) as img:
            img = img.convert("RGB" if channels == 3 else "L")
            arr = np.asarray(img)
    except Exception as exc:  # PIL raises a zoo of exception types
        return None, f"{exc.__class__.__name__}: {exc}"
    return center_crop_resize(arr, target).reshape(-1), None


def list_images(root) -> list:
    root = Path(root)
    files = [
        p for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    ]
    return sorted(files, key=lambda p: p.relative_to(root).as_posix())


def load_image_dir(path, cfg: PreprocessConfig = PreprocessConfig(), workers: int = 0) -> LoadResult:
    """Decode every PNG/JPEG under ``path`` into one dataset row each.

    Files are ordered by relative path. Undecodable files are skipped and
    listed in ``LoadResult.skipped``.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    files = list_images(root)
    n_workers = workers if workers and workers > 0 else min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        decoded = list(pool.map(lambda p: _decode(p, cfg.channels, cfg.target_resolution), files))

    rows, ids, skipped, warnings = [], [], [], []
    for p, (row, err) in zip(files, decoded):
        rel = p.relative_to(root).as_posix()
        if row is None:
            msg = f"skipped {rel}: {err}"
            logger.warning(msg)
            skipped.append(rel)
            warnings.append(msg)
            continue
        rows.append(row)
        ids.append(rel)
    if not rows:
        raise ValueError(f"no decodable PNG/JPEG files in {root}")

    ds = VectorDataset(np.stack(rows), ids, SpaceTag.PIXEL_RAW_0_255)
    stats = None
    if cfg.zscore:
        ds, stats = zscore_normalize(ds, cfg.channels, warnings)
    return LoadResult(ds, skipped, warnings, stats)


def load_vectors(path, space_tag=SpaceTag.EXTERNAL_EMBEDDING) -> VectorDataset:
    """Load a 2-D ``.npy`` matrix (e.g. precomputed embeddings)."""
    arr = np.load(path, allow_pickle=False)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a 2-D array, got shape {arr.shape}")
    return VectorDataset(arr, None, space_tag)


def subsample(ds: VectorDataset, n: int, seed: int) -> VectorDataset:
    """Pick ``n`` rows uniformly without replacement; original row order is kept."""
    if not 1 <= n <= ds.count:
        raise ValueError(f"cannot draw {n} rows from a dataset of {ds.count}")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    idx = np.sort(rng.choice(ds.count, size=n, replace=False))
    return ds.take(idx)


def encode_vds(ds: VectorDataset) -> bytes:
    if ds.source_ids is not None:
        for s in ds.source_ids:
            if not s or "\n" in s:
                raise ValueError(f"source id {s!r} cannot be stored (empty or contains newline)")
        block = "\n".join(ds.source_ids).encode("utf-8")
    else:
        block = b""
    header = _HEADER.pack(VDS_MAGIC, VDS_DTYPE_F32, int(ds.space_tag), 0, ds.dim, ds.count)
    payload = ds.values.astype("<f4", copy=False).tobytes()
    return b"".join([header, payload, _U32.pack(len(block)), block])


def decode_vds(buf: bytes) -> VectorDataset:
    if len(buf) < 4 or buf[:4] != VDS_MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {VDS_MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedFileError("header", _HEADER.size, len(buf))
    _, dtype, tag, reserved, dim, count = _HEADER.unpack_from(buf, 0)
    if dtype != VDS_DTYPE_F32:
        raise VdsFormatError(f"unsupported dtype code {dtype}")
    if reserved != 0:
        raise VdsFormatError(f"reserved header field is {reserved}, expected 0")
    try:
        space = SpaceTag(tag)
    except ValueError:
        raise VdsFormatError(f"unknown space_tag code {tag}") from None
    if dim < 1 or count < 1:
        raise ShapeMismatchError(f"header declares count={count}, dim={dim}; both must be >= 1")

    offset = _HEADER.size
    n_bytes = count * dim * 4
    if len(buf) - offset < n_bytes:
        raise TruncatedFileError("matrix payload", n_bytes, len(buf) - offset)
    values = np.frombuffer(buf, dtype="<f4", count=count * dim, offset=offset).reshape(count, dim)
    offset += n_bytes
    if len(buf) - offset < _U32.size:
        raise TruncatedFileError("id block length", _U32.size, len(buf) - offset)
    (block_len,) = _U32.unpack_from(buf, offset)
    offset += _U32.size
    if len(buf) - offset < block_len:
        raise TruncatedFileError("id block", block_len, len(buf) - offset)
    if len(buf) - offset > block_len:
        raise ShapeMismatchError(
            f"{len(buf) - offset - block_len} trailing bytes after the id block"
        )
    ids = None
    if block_len:
        ids = buf[offset:offset + block_len].decode("utf-8").split("\n")
        if len(ids) != count:
            raise ShapeMismatchError(f"id block holds {len(ids)} ids for count={count}")
    return VectorDataset(values, ids, space)


def write_vds(ds: VectorDataset, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_vds(ds))
    return path


def read_vds(path) -> VectorDataset:
    return decode_vds(Path(path).read_bytes())


def stack(datasets: Sequence[VectorDataset]) -> VectorDataset:
    """Concatenate datasets row-wise (all must share dim and space tag)."""
    first = datasets[0]
    for d in datasets[1:]:
        if d.dim != first.dim or d.space_tag != first.space_tag:
            raise ValueError("datasets differ in dim or space tag")
    if all(d.source_ids is not None for d in datasets):
        ids = [s for d in datasets for s in d.source_ids]
    else:
        ids = None
    return VectorDataset(np.concatenate([d.values for d in datasets]), ids, first.space_tag)
