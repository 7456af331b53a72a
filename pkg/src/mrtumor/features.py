"""2x2 grid-mean pooling and the feature layouts built on it.

Layout (frozen in persisted models as ``FEATURE_LAYOUT_ID``): each pooled
32x32 grid is flattened row-major, so cell ``(row, col)`` sits at index
``32 * row + col``; patient vectors concatenate the 12 slices in order.
"""
from __future__ import annotations

import numpy as np

from .errors import BadDims
from .preprocess import N_SLICES, SliceStack

POOLED_SIDE = 32
SLICE_DIM = POOLED_SIDE * POOLED_SIDE
PATIENT_DIM = SLICE_DIM * N_SLICES
FEATURE_LAYOUT_ID = "pool2x2-mean/row-major/slice-major/v1"


def pool2x2(slice_: np.ndarray) -> np.ndarray:
    """Mean of each non-overlapping 2x2 block."""
    x = np.asarray(slice_, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] % 2 or x.shape[1] % 2:
        raise BadDims(f"pool2x2 needs an even-sized 2-D array, got shape {x.shape}")
    # summation order: (i,j), (i+1,j), (i,j+1), (i+1,j+1)
    return (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]) / 4.0


def slice_features(slice_: np.ndarray) -> np.ndarray:
    x = np.asarray(slice_)
    if x.shape != (2 * POOLED_SIDE, 2 * POOLED_SIDE):
        raise BadDims(f"slice must be 64x64, got {x.shape}")
    return pool2x2(x).ravel()


def patient_features(stack) -> np.ndarray:
    slices = stack.slices if isinstance(stack, SliceStack) else np.asarray(stack)
    if slices.shape != (N_SLICES, 2 * POOLED_SIDE, 2 * POOLED_SIDE):
        raise BadDims(f"patient stack must be 12x64x64, got {slices.shape}")
    return np.concatenate([slice_features(s) for s in slices])


def slice_matrix(stacks) -> np.ndarray:
    """One row per slice, patients in order, 12 rows each."""
    return np.vstack([np.stack([slice_features(s) for s in st.slices]) for st in stacks])


def patient_matrix(stacks) -> np.ndarray:
    return np.stack([patient_features(st) for st in stacks])
