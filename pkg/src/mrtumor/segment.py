"""Stage 3: contralateral tumor segmentation on the forest's candidate slices.

Per patient: approximation images -> neighbour verification of the predicted
slices -> stray-slice removal -> gap filling -> mirror-difference threshold ->
4x4 tile census -> boundary extraction.  A patient left with no flagged voxel
is reported tumor-free.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dwt import approximation_image
from .errors import BadDims, InvalidSpec
from .nifti_io import Volume
from .phantom import CANONICAL_SPACING
from .preprocess import N_SLICES, SliceStack, from_slices

PATCH = 4
NEIGHBOR_WINDOW = 3


@dataclass(frozen=True)
class SegConfig:
    threshold: float = 0.2
    patch_count: int = 6
    patch_size: int = PATCH
    neighbor_window: int = NEIGHBOR_WINDOW

    def validate(self) -> None:
        if not 0.0 < self.threshold:
            raise InvalidSpec(f"threshold must be > 0, got {self.threshold}")
        if not 1 <= self.patch_count <= self.patch_size**2:
            raise InvalidSpec(f"patch_count must be in 1..{self.patch_size**2}, got {self.patch_count}")
        if self.patch_size != PATCH or self.neighbor_window != NEIGHBOR_WINDOW:
            raise InvalidSpec("patch_size and neighbor_window are fixed at 4 and 3")


@dataclass
class TumorMask:
    slice_index: int
    mask: np.ndarray  # bool (64, 64)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass
class Contour:
    slice_index: int
    pixels: tuple[tuple[int, int], ...]  # (row, col), sorted

    def as_mask(self, shape=(64, 64)) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        if self.pixels:
            rows, cols = zip(*self.pixels)
            out[list(rows), list(cols)] = True
        return out


@dataclass
class Segmentation:
    masks: list[TumorMask]  # one per slice of the stack, empty where not segmented
    contours: list[Contour]
    overlay: Volume
    slices: frozenset[int]  # slices that went through segmentation
    has_tumor: bool
    flagged: dict[int, int] = field(default_factory=dict)

    def mask_array(self) -> np.ndarray:
        return np.stack([m.mask for m in self.masks])


def contralateral_mask(slice_: np.ndarray, threshold: float) -> np.ndarray:
    """Flag pixels brighter than their left-right mirror by more than ``threshold``.

    The mirror of column ``j`` is ``n - 1 - j``; both hemispheres are tested.
    """
    x = np.asarray(slice_, dtype=np.float64)
    if x.ndim != 2:
        raise BadDims(f"expected a 2-D slice, got shape {x.shape}")
    return x > x[:, ::-1] + threshold


def patch_filter(mask: np.ndarray, min_count: int, patch: int = PATCH) -> np.ndarray:
    """Clear every ``patch`` x ``patch`` tile holding fewer than ``min_count`` flags."""
    m = np.asarray(mask, dtype=bool)
    rows, cols = m.shape
    if rows % patch or cols % patch:
        raise BadDims(f"mask shape {m.shape} is not a multiple of the {patch}x{patch} tile")
    counts = m.reshape(rows // patch, patch, cols // patch, patch).sum(axis=(1, 3))
    keep = np.repeat(np.repeat(counts >= min_count, patch, axis=0), patch, axis=1)
    return m & keep


def _slice_mask(image: np.ndarray, cfg: SegConfig) -> np.ndarray:
    return patch_filter(contralateral_mask(image, cfg.threshold), cfg.patch_count, cfg.patch_size)


def slice_evidence(images, cfg: SegConfig) -> list[bool]:
    """Whether the filtered mirror-difference mask of each image is non-empty."""
    return [bool(_slice_mask(img, cfg).any()) for img in images]


def verify_neighbors(predicted, stack, cfg: SegConfig = SegConfig(), evidence=None) -> set[int]:
    """Keep predicted slices that have segmentation evidence within the window.

    A predicted slice ``s`` survives when the filtered mask is non-empty on ``s``
    or on any slice at distance <= 3; the confirming slices themselves are added.
    ``stack`` holds the images to test (pass approximation images).
    """
    images = stack.slices if isinstance(stack, SliceStack) else np.asarray(stack)
    n = len(images)
    if evidence is None:
        evidence = slice_evidence(images, cfg)
    out: set[int] = set()
    for s in sorted(predicted):
        if not 0 <= s < n:
            raise ValueError(f"slice index {s} outside 0..{n - 1}")
        lo, hi = max(0, s - cfg.neighbor_window), min(n - 1, s + cfg.neighbor_window)
        confirming = [k for k in range(lo, hi + 1) if evidence[k]]
        if confirming:
            out.add(s)
            out.update(confirming)
    return out


def remove_stray(slices) -> set[int]:
    """Drop slices with neither neighbour in the set."""
    s = set(slices)
    return {k for k in s if k - 1 in s or k + 1 in s}


def make_continuous(slices) -> set[int]:
    s = set(slices)
    if not s:
        return set()
    return set(range(min(s), max(s) + 1))


def delineate(mask: TumorMask) -> Contour:
    """Mask pixels with at least one 4-neighbour outside the mask or the image."""
    m = np.asarray(mask.mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    edge = m & ~interior
    pixels = tuple((int(r), int(c)) for r, c in zip(*np.nonzero(edge)))
    return Contour(mask.slice_index, pixels)


def stack_to_volume(stack: np.ndarray, descrip: str = "") -> Volume:
    spacing = CANONICAL_SPACING
    return Volume.from_array(from_slices(stack), pixdim=spacing, descrip=descrip)


def segment_patient(stack: SliceStack, predicted, cfg: SegConfig = SegConfig()) -> Segmentation:
    cfg.validate()
    slices = np.asarray(stack.slices, dtype=np.float64)
    n = slices.shape[0]
    approx = np.stack([approximation_image(s) for s in slices])

    chosen = make_continuous(remove_stray(verify_neighbors(predicted, approx, cfg)))

    empty = np.zeros(slices.shape[1:], dtype=bool)
    masks = []
    for k in range(n):
        m = _slice_mask(approx[k], cfg) if k in chosen else empty.copy()
        masks.append(TumorMask(k, m))
    contours = [delineate(m) for m in masks]

    overlay = slices.copy()
    for c in contours:
        if c.pixels:
            rows, cols = zip(*c.pixels)
            overlay[c.slice_index, list(rows), list(cols)] = 1.0
    flagged = {m.slice_index: m.count for m in masks if m.count}
    return Segmentation(
        masks=masks,
        contours=contours,
        overlay=stack_to_volume(overlay, descrip=f"{stack.patient_id} overlay"),
        slices=frozenset(chosen),
        has_tumor=bool(flagged),
        flagged=flagged,
    )
