"""Synthetic phantom generation, dataset splits, and PGM interchange."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    """Named images with train/val/test split assignments.

    `splits` maps item id to one of "train", "val", "test"; unassigned
    datasets have an empty mapping. `dynamic_range` is the per-item
    ground-truth maximum (used as the SSIM value scale).
    """

    items: list  # list of (id, image) pairs
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [i for i, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate item ids")
        shapes = {img.shape for _, img in self.items}
        if len(shapes) > 1:
            raise ValueError(f"mixed image dimensions: {sorted(shapes)}")

    def __len__(self):
        return len(self.items)

    def dynamic_range(self, item_id: str) -> float:
        img = dict(self.items)[item_id]
        return float(img.max())

    def subset(self, split: str) -> list:
        return [(i, img) for i, img in self.items if self.splits.get(i) == split]


def _phantom(size: int, rng: np.random.Generator) -> np.ndarray:
    """One phantom: 3-6 random additive ellipses on a zero background.

    At least one ellipse is forced off-center horizontally so phantoms carry
    left-right asymmetry, like anatomy does.
    """
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    img = np.zeros((size, size))
    n = int(rng.integers(3, 7))
    for e in range(n):
        cx = rng.uniform(0.2, 0.8)
        cy = rng.uniform(0.2, 0.8)
        if e == 0:
            # force horizontal asymmetry
            cx = rng.uniform(0.2, 0.35) if rng.random() < 0.5 else rng.uniform(0.65, 0.8)
        a = rng.uniform(0.08, 0.3)
        b = rng.uniform(0.08, 0.3)
        theta = rng.uniform(0.0, np.pi)
        amp = rng.uniform(0.2, 1.0)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        img += amp * ((u / a) ** 2 + (v / b) ** 2 <= 1.0)
    return np.clip(img, 0.0, 1.0)


def generate_phantoms(count: int, size: int, seed: int) -> Dataset:
    """Deterministic phantom dataset; item i uses rng seed `seed ^ i`."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if size < 16:
        raise ValueError("size must be >= 16")
    items = []
    for i in range(count):
        rng = np.random.default_rng(seed ^ i)
        items.append((f"phantom_{i:05d}", _phantom(size, rng)))
    return Dataset(items)


def split_dataset(ds: Dataset, fractions, seed: int) -> Dataset:
    """Seeded shuffle followed by a contiguous train/val/test partition."""
    f_train, f_val, f_test = fractions
    if min(f_train, f_val, f_test) <= 0:
        raise ValueError("all split fractions must be positive")
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n = len(ds)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(f_train * n))
    n_val = int(np.floor((f_train + f_val) * n)) - n_train
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) == 0:
        raise ValueError(f"empty split for {n} items with fractions {fractions}")
    splits = {}
    for rank, idx in enumerate(order):
        item_id = ds.items[idx][0]
        if rank < n_train:
            splits[item_id] = "train"
        elif rank < n_train + n_val:
            splits[item_id] = "val"
        else:
            splits[item_id] = "test"
    return Dataset(list(ds.items), splits)


def write_pgm(image: np.ndarray, path: str, dynamic_range: float = 1.0) -> None:
    """Write an image as binary PGM (P5, maxval 255), rescaled by dynamic_range."""
    image = np.asarray(image, dtype=float)
    if image.min() < 0 or image.max() > dynamic_range + 1e-12:
        raise ValueError("pixels must lie in [0, dynamic_range]")
    quantized = np.rint(image / dynamic_range * 255).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(quantized.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read a binary PGM (P5) file, scaled to [0, 1] by its maxval."""
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        if data[pos : pos + 1].isspace():
            pos += 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(x) for x in fields[1:])
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    raster = data[pos : pos + w * h]
    if len(raster) != w * h:
        raise ValueError(f"{path}: expected {w * h} raster bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w) / maxval


def load_pgm_dataset(directory: str) -> Dataset:
    names = sorted(n for n in os.listdir(directory) if n.endswith(".pgm"))
    if not names:
        raise ValueError(f"no PGM files found in {directory}")
    items = [(name, read_pgm(os.path.join(directory, name))) for name in names]
    return Dataset(items)


def write_manifest(ds: Dataset, path: str) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "split", "dynamic_range"])
        for item_id, img in ds.items:
            writer.writerow(
                [item_id, ds.splits.get(item_id, ""), f"{float(img.max()):.17g}"]
            )
