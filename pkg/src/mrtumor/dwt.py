"""One-level 2-D Haar transform with averaging normalisation.

For each 2x2 block ``[[p, q], [r, s]]``::

    cA = (p + q + r + s) / 4      cH = (p - q + r - s) / 4
    cV = (p + q - r - s) / 4      cD = (p - q - r + s) / 4

so the approximation band stays in intensity units and equals the block mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadDims


@dataclass
class Subbands:
    cA: np.ndarray
    cH: np.ndarray
    cV: np.ndarray
    cD: np.ndarray


def _blocks(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] % 2 or x.shape[1] % 2:
        raise BadDims(f"need an even-sized 2-D array, got shape {x.shape}")
    return x[0::2, 0::2], x[0::2, 1::2], x[1::2, 0::2], x[1::2, 1::2]


def dwt2(slice_: np.ndarray) -> Subbands:
    p, q, r, s = _blocks(slice_)
    # row pairs are summed first, so swapping the columns of every block
    # (a left-right mirror) yields bit-identical bands
    return Subbands(
        cA=((p + q) + (r + s)) / 4.0,
        cH=((p - q) + (r - s)) / 4.0,
        cV=((p + q) - (r + s)) / 4.0,
        cD=((p - q) - (r - s)) / 4.0,
    )


def idwt2(bands: Subbands) -> np.ndarray:
    a, h, v, d = bands.cA, bands.cH, bands.cV, bands.cD
    out = np.empty((2 * a.shape[0], 2 * a.shape[1]))
    out[0::2, 0::2] = a + h + v + d
    out[0::2, 1::2] = a - h + v - d
    out[1::2, 0::2] = a + h - v - d
    out[1::2, 1::2] = a - h - v + d
    return out


def approximation_image(slice_: np.ndarray) -> np.ndarray:
    """Approximation band blown back up to full size by 2x2 pixel replication."""
    cA = dwt2(slice_).cA
    return np.repeat(np.repeat(cA, 2, axis=0), 2, axis=1)
