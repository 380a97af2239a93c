"""Pluggable reconstruction from masked k-space.

The reference reconstructor is the zero-filled magnitude reconstruction:
inverse Fourier transform of the masked grid followed by the complex norm.
Precomputed reconstructions (e.g. from an external neural model) can be
supplied as a directory of PGM files keyed by item id and mask fingerprint.
"""

from __future__ import annotations

import os

import numpy as np

from .kspace import ColumnMask, inverse_transform


class MissingReconstructionError(KeyError):
    """A precomputed reconstruction table was queried for an unknown pair."""


class ZeroFilled:
    """Deterministic zero-filled magnitude reconstruction."""

    def reconstruct(self, ks_masked, item_id=None, mask=None):
        return np.abs(inverse_transform(ks_masked))


class ExternalTable:
    """Lookup of precomputed reconstructions.

    Expects a directory of binary PGM files named `<item_id>__<mask_hex>.pgm`
    where mask_hex is the big-endian hex encoding of the mask's selected
    bit-vector. Lookups must cover every queried pair; misses fail loudly.
    """

    def __init__(self, directory: str):
        from .datagen import read_pgm

        self.directory = directory
        self._table = {}
        for name in sorted(os.listdir(directory)):
            if not name.endswith(".pgm"):
                continue
            stem = name[: -len(".pgm")]
            item_id, sep, mask_hex = stem.rpartition("__")
            if not sep:
                continue
            self._table[(item_id, mask_hex)] = read_pgm(
                os.path.join(directory, name)
            )

    def reconstruct(self, ks_masked, item_id=None, mask: ColumnMask = None):
        if item_id is None or mask is None:
            raise ValueError("external table reconstruction needs item_id and mask")
        key = (item_id, mask.fingerprint())
        try:
            return self._table[key]
        except KeyError:
            raise MissingReconstructionError(
                f"no precomputed reconstruction for item {item_id!r} "
                f"with mask {mask.fingerprint()}"
            ) from None


def reconstruct(reconstructor, ks_masked, item_id=None, mask=None) -> np.ndarray:
    return reconstructor.reconstruct(ks_masked, item_id=item_id, mask=mask)
