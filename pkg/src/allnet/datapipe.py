"""Manifest-driven dataset handling.

A manifest is an ordered list of (relative path, binary label) records backed
by a small CSV. Images are binary PPM (P6, 8-bit). Standardization statistics
come from the training split only, in one streaming pass, so validation and
test data can never leak into them. The batch iterator decodes, resizes and
standardizes lazily, holding at most one batch of decoded images.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class ManifestError(ValueError):
    """A manifest file or record violates the CSV contract."""


class DecodeError(ValueError):
    """An image file is not a valid 8-bit P6 PPM."""


@dataclass(frozen=True)
class Manifest:
    """Ordered (path, label) records; label 1 marks the positive class."""

    entries: tuple[tuple[str, int], ...]

    def __len__(self) -> int:
        return len(self.entries)

    def paths(self) -> list[str]:
        return [p for p, _ in self.entries]

    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.entries], dtype=np.int64)


@dataclass(frozen=True)
class SplitSpec:
    """Three-way split ratios plus the shuffle seed."""

    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValueError(f"ratios must be three non-negative fractions, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {self.ratios} (sum {sum(self.ratios)})")


@dataclass(frozen=True)
class StandardizationStats:
    """Per-channel mean and population std from the training split."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    epsilon: float = 1e-8


def load_manifest(path) -> Manifest:
    """Parse a manifest CSV; validation errors name the offending line."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "path,label":
        raise ManifestError(f"{path}:1: header must be exactly 'path,label'")
    entries = []
    seen: set[str] = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if "," not in line:
            raise ManifestError(f"{path}:{lineno}: expected 'path,label', got {raw!r}")
        rel, _, label_text = line.rpartition(",")
        rel = rel.strip()
        label_text = label_text.strip()
        if not rel:
            raise ManifestError(f"{path}:{lineno}: empty image path")
        if label_text not in ("0", "1"):
            raise ManifestError(f"{path}:{lineno}: label must be 0 or 1, got {label_text!r}")
        if rel in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate path {rel!r}")
        seen.add(rel)
        entries.append((rel, int(label_text)))
    return Manifest(tuple(entries))


def save_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,label\n")
        for rel, label in manifest.entries:
            fh.write(f"{rel},{label}\n")


def split(manifest: Manifest, spec: SplitSpec) -> tuple[Manifest, Manifest, Manifest]:
    """Seeded shuffle then contiguous slicing into train/val/test.

    Sizes are floor(n*r1) and floor(n*r2); test absorbs the remainder, so the
    three parts always partition the input exactly.
    """
    n = len(manifest)
    if n == 0:
        raise ManifestError("cannot split an empty manifest")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(np.floor(n * spec.ratios[0]))
    n_val = int(np.floor(n * spec.ratios[1]))
    shuffled = [manifest.entries[i] for i in order]
    return (
        Manifest(tuple(shuffled[:n_train])),
        Manifest(tuple(shuffled[n_train : n_train + n_val])),
        Manifest(tuple(shuffled[n_train + n_val :])),
    )


def decode_ppm(path) -> np.ndarray:
    """Decode an 8-bit binary PPM into (3, H, W) float32 scaled to [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P6":
        raise DecodeError(f"{path}: bad magic {blob[:2]!r}, expected P6")

    # header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed, then a single whitespace byte before the payload
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"{path}: truncated PPM header")
        fields.append(blob[start:pos])
    pos += 1  # the single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as err:
        raise DecodeError(f"{path}: non-numeric PPM header fields {fields}") from err
    if maxval != 255:
        raise DecodeError(f"{path}: maxval must be 255, got {maxval}")
    expected = width * height * 3
    payload = blob[pos : pos + expected]
    if len(payload) != expected:
        raise DecodeError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1)).astype(np.float32) / 255.0


def encode_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) array of [0, 1] floats or uint8 bytes as binary PPM."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {image.shape}")
    if image.dtype == np.uint8:
        bytes_hwc = image.transpose(1, 2, 0)
    else:
        bytes_hwc = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    h, w = bytes_hwc.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(bytes_hwc).tobytes())


class FileImageSource:
    """Loads manifest-relative PPM files from a root directory."""

    def __init__(self, root):
        self.root = str(root)

    def load(self, rel_path: str) -> np.ndarray:
        return decode_ppm(os.path.join(self.root, rel_path))


def resize_bilinear(image: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) image; samples at pixel centers."""
    c, h, w = image.shape
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got {target_h}x{target_w}")
    if (h, w) == (target_h, target_w):
        return image.astype(np.float32, copy=True)
    src_r = np.clip((np.arange(target_h) + 0.5) * (h / target_h) - 0.5, 0.0, h - 1.0)
    src_c = np.clip((np.arange(target_w) + 0.5) * (w / target_w) - 0.5, 0.0, w - 1.0)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    wr = (src_r - r0)[None, :, None]
    wc = (src_c - c0)[None, None, :]
    img = image.astype(np.float64)
    top = img[:, r0][:, :, c0] * (1 - wc) + img[:, r0][:, :, c1] * wc
    bottom = img[:, r1][:, :, c0] * (1 - wc) + img[:, r1][:, :, c1] * wc
    return (top * (1 - wr) + bottom * wr).astype(np.float32)


def compute_stats(manifest: Manifest, source, size_hw: tuple[int, int],
                  epsilon: float = 1e-8) -> StandardizationStats:
    """Single-pass per-channel mean and population std over resized images.

    Accumulates sum and sum-of-squares in float64, one decoded image in
    memory at a time.
    """
    if len(manifest) == 0:
        raise ManifestError("cannot compute statistics from an empty manifest")
    total = np.zeros(3, np.float64)
    total_sq = np.zeros(3, np.float64)
    count = 0
    for rel, _ in manifest.entries:
        img = resize_bilinear(source.load(rel), *size_hw).astype(np.float64)
        total += img.sum(axis=(1, 2))
        total_sq += (img * img).sum(axis=(1, 2))
        count += img.shape[1] * img.shape[2]
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    return StandardizationStats(tuple(mean), tuple(np.sqrt(var)), epsilon)


def standardize(image: np.ndarray, stats: StandardizationStats) -> np.ndarray:
    """Per channel: (x - mean) / max(std, epsilon)."""
    mean = np.asarray(stats.mean, np.float32).reshape(3, 1, 1)
    denom = np.maximum(np.asarray(stats.std, np.float32), stats.epsilon).reshape(3, 1, 1)
    return (image - mean) / denom


def destandardize(image: np.ndarray, stats: StandardizationStats) -> np.ndarray:
    """Inverse of standardize (exact only while std > epsilon)."""
    mean = np.asarray(stats.mean, np.float32).reshape(3, 1, 1)
    denom = np.maximum(np.asarray(stats.std, np.float32), stats.epsilon).reshape(3, 1, 1)
    return image * denom + mean


_STATS_KEYS = ("mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b", "epsilon")


def save_stats(stats: StandardizationStats, path) -> None:
    """key=value text, 9 significant digits per value."""
    values = (*stats.mean, *stats.std, stats.epsilon)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in zip(_STATS_KEYS, values):
            fh.write(f"{key}={value:.9g}\n")


def load_stats(path) -> StandardizationStats:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            key, sep, text = line.partition("=")
            if not sep or key not in _STATS_KEYS:
                raise ValueError(f"{path}:{lineno}: unexpected stats line {raw!r}")
            values[key] = float(text)
    missing = [k for k in _STATS_KEYS if k not in values]
    if missing:
        raise ValueError(f"{path}: missing stats keys {missing}")
    return StandardizationStats(
        (values["mean_r"], values["mean_g"], values["mean_b"]),
        (values["std_r"], values["std_g"], values["std_b"]),
        values["epsilon"],
    )


def batch_iter(manifest: Manifest, source, stats: StandardizationStats,
               batch_size: int, size_hw: tuple[int, int], shuffle_seed: int | None = None):
    """Yield (batch tensor, label vector) over one epoch.

    Produces ceil(n / batch_size) batches; the final one may be short. Images
    are decoded, resized and standardized at yield time, so decoded residency
    never exceeds one batch. With a seed the epoch order is a deterministic
    seeded permutation; without, manifest order.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    n = len(manifest)
    order = (
        np.arange(n)
        if shuffle_seed is None
        else np.random.default_rng(shuffle_seed).permutation(n)
    )
    h, w = size_hw
    for start in range(0, n, batch_size):
        chosen = order[start : start + batch_size]
        batch = np.empty((len(chosen), 3, h, w), dtype=np.float32)
        labels = np.empty(len(chosen), dtype=np.int64)
        for slot, idx in enumerate(chosen):
            rel, label = manifest.entries[int(idx)]
            img = source.load(rel)
            batch[slot] = standardize(resize_bilinear(img, h, w), stats)
            labels[slot] = label
        yield batch, labels
