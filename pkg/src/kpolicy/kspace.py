"""Cartesian k-space simulation: centered orthonormal 2-D Fourier transforms
and column subsampling masks.

Images are real 2-D numpy arrays (H x W); k-space grids are complex arrays of
the same shape with the DC component at (H//2, W//2). Masks select whole
columns and are immutable values: every acquisition step produces a new mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_IMAGE_SIDE = 4


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate a ground-truth or reconstructed image array."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    if img.shape[0] < MIN_IMAGE_SIDE or img.shape[1] < MIN_IMAGE_SIDE:
        raise ValueError(f"image sides must be >= {MIN_IMAGE_SIDE}, got {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    return img


@dataclass(frozen=True)
class ColumnMask:
    """Boolean column-selection mask of a given width.

    Immutable; `add` returns a new mask. `selected` is stored as a read-only
    boolean vector.
    """

    selected: np.ndarray
    width: int = field(init=False)

    def __post_init__(self):
        sel = np.asarray(self.selected, dtype=bool).copy()
        sel.setflags(write=False)
        object.__setattr__(self, "selected", sel)
        object.__setattr__(self, "width", sel.shape[0])

    @property
    def count(self) -> int:
        return int(self.selected.sum())

    def add(self, index: int) -> "ColumnMask":
        """Return a new mask with one extra column selected."""
        if not 0 <= index < self.width:
            raise ValueError(f"column index {index} out of range [0, {self.width})")
        if self.selected[index]:
            raise ValueError(f"column {index} is already selected")
        sel = self.selected.copy()
        sel[index] = True
        return ColumnMask(sel)

    def unmeasured(self) -> np.ndarray:
        """Indices of columns not yet selected, ascending."""
        return np.flatnonzero(~self.selected)

    def fingerprint(self) -> str:
        """Big-endian hex encoding of the selected bit-vector."""
        return np.packbits(self.selected).tobytes().hex()

    def __eq__(self, other):
        return isinstance(other, ColumnMask) and np.array_equal(
            self.selected, other.selected
        )

    def __hash__(self):
        return hash((self.width, self.selected.tobytes()))


def empty_mask(width: int) -> ColumnMask:
    return ColumnMask(np.zeros(width, dtype=bool))


def full_mask(width: int) -> ColumnMask:
    return ColumnMask(np.ones(width, dtype=bool))


def init_center_mask(width: int, budget: int) -> ColumnMask:
    """Contiguous low-frequency mask of `budget` columns centered on DC.

    The block starts at floor((width - budget) / 2), which is symmetric up to
    one column for odd parities.
    """
    if not 0 < budget <= width:
        raise ValueError(f"budget {budget} out of range (0, {width}]")
    sel = np.zeros(width, dtype=bool)
    start = (width - budget) // 2
    sel[start : start + budget] = True
    return ColumnMask(sel)


def forward_transform(img: np.ndarray) -> np.ndarray:
    """Orthonormal centered 2-D DFT of a real image.

    Unit-norm scaling (1/sqrt(H*W) overall) so Parseval's identity holds
    exactly; DC ends up at (H//2, W//2).
    """
    img = check_image(img)
    return np.fft.fftshift(np.fft.fft2(img, norm="ortho"))


def inverse_transform(ks: np.ndarray) -> np.ndarray:
    """Exact inverse of `forward_transform`; output is complex."""
    ks = np.asarray(ks)
    if ks.ndim != 2:
        raise ValueError(f"k-space grid must be 2-D, got shape {ks.shape}")
    return np.fft.ifft2(np.fft.ifftshift(ks), norm="ortho")


def apply_mask(ks: np.ndarray, mask: ColumnMask) -> np.ndarray:
    """Zero out all k-space columns not selected by the mask."""
    ks = np.asarray(ks)
    if ks.shape[1] != mask.width:
        raise ValueError(
            f"mask width {mask.width} does not match k-space width {ks.shape[1]}"
        )
    return np.where(mask.selected[np.newaxis, :], ks, 0.0)
