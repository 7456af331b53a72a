"""Synthetic bilateral brain phantoms with planted T2-bright tumors.

A phantom is an ellipsoidal "tissue" region wrapped in a thin skull shell,
centred on the grid so that it is exactly mirror-symmetric about the
left-right midline (array axis 0, i.e. NIfTI x).  Tumors are bright
ellipsoids confined to one hemisphere; the ground truth records exactly the
voxels that were overwritten.

Everything is a pure function of ``(spec, seed)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .nifti_io import Volume

CANONICAL_SHAPE = (64, 64, 16)
CANONICAL_SPACING = (2.0, 2.0, 10.0)

# tumors are kept clear of the two slices trimmed at each end and of the midline
_TUMOR_SLICE_RANGE = (3, 12)
_MIDLINE_GAP = 2
_MAX_PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = CANONICAL_SHAPE
    spacing: tuple[float, float, float] = CANONICAL_SPACING
    brain_semi_axes: tuple[float, float, float] = (24.0, 28.0, 7.5)
    background: float = 0.0
    tissue: float = 0.45
    skull: float = 0.6
    tumor: float = 0.9
    noise_sigma: float = 0.03
    has_tumor: bool = True
    n_tumors: int = 1
    tumor_semi_axes_range: tuple[float, float] = (4.0, 7.0)
    tumor_slice_span: tuple[int, int] = (2, 4)
    laterality: str = "right"
    # in-plane misalignment, integer voxels; 0 keeps the phantom registered
    max_shift: int = 0

    def validate(self) -> None:
        if len(self.shape) != 3 or any(n < 8 for n in self.shape):
            raise InvalidSpec(f"shape {self.shape} too small")
        if self.shape[0] % 2 or self.shape[1] % 2:
            raise InvalidSpec("in-plane dims must be even")
        for name in ("background", "tissue", "skull", "tumor"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidSpec(f"{name} intensity {value} outside [0, 1]")
        if self.tumor <= self.tissue:
            raise InvalidSpec("tumor intensity must exceed tissue intensity")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be >= 0")
        lo, hi = self.tumor_slice_span
        if lo < 2 or hi < lo:
            raise InvalidSpec(f"tumor slice span {self.tumor_slice_span} must be >= 2")
        if hi > _TUMOR_SLICE_RANGE[1] - _TUMOR_SLICE_RANGE[0] + 1:
            raise InvalidSpec("tumor slice span does not fit between the trimmed slices")
        a_lo, a_hi = self.tumor_semi_axes_range
        if not 1.0 <= a_lo <= a_hi:
            raise InvalidSpec(f"bad tumor semi-axes range {self.tumor_semi_axes_range}")
        if self.laterality not in ("left", "right"):
            raise InvalidSpec(f"laterality must be 'left' or 'right', got {self.laterality!r}")
        if self.n_tumors not in (1, 2):
            raise InvalidSpec("n_tumors must be 1 or 2")
        if self.max_shift < 0:
            raise InvalidSpec("max_shift must be >= 0")


@dataclass
class GroundTruth:
    has_tumor: bool
    tumor_slices: frozenset[int]
    masks: np.ndarray = field(repr=False)  # bool, same shape as the volume

    def slice_mask(self, k: int) -> np.ndarray:
        """Mask of volume slice ``k`` in (row=y, col=x) image orientation."""
        return self.masks[:, :, k].T


@dataclass
class Patient:
    patient_id: str
    volume: Volume
    truth: GroundTruth
    label: int  # 1 tumor, 0 normal


def _grid(shape):
    centre = [(n - 1) / 2.0 for n in shape]
    x, y, z = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    return x - centre[0], y - centre[1], z - centre[2]


def _anatomy(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free symmetric anatomy and the brain (tissue) mask."""
    dx, dy, dz = _grid(spec.shape)
    ax, ay, az = spec.brain_semi_axes
    r = (dx / ax) ** 2 + (dy / ay) ** 2 + (dz / az) ** 2
    brain = r <= 1.0
    shell = (dx / (ax + 1.5)) ** 2 + (dy / (ay + 1.5)) ** 2 + (dz / (az + 0.5)) ** 2
    skull = (shell <= 1.0) & ~brain
    img = np.full(spec.shape, spec.background, dtype=np.float64)
    img[skull] = spec.skull
    img[brain] = spec.tissue
    return img, brain


def _tumor_blob(spec, brain, rng, existing):
    """Draw one tumor ellipsoid that fits inside the requested hemisphere."""
    nx, ny, nz = spec.shape
    cx = (nx - 1) / 2.0
    dx, dy, dz = _grid(spec.shape)
    x = dx + cx
    y = dy + (ny - 1) / 2.0
    z = dz + (nz - 1) / 2.0
    for _ in range(_MAX_PLACEMENT_TRIES):
        span = int(rng.integers(spec.tumor_slice_span[0], spec.tumor_slice_span[1] + 1))
        z0 = int(rng.integers(_TUMOR_SLICE_RANGE[0], _TUMOR_SLICE_RANGE[1] - span + 2))
        a, b = rng.uniform(*spec.tumor_semi_axes_range, size=2)
        offset = rng.uniform(a + _MIDLINE_GAP + 0.5, spec.brain_semi_axes[0] - a)
        tx = cx + offset if spec.laterality == "right" else cx - offset
        ty = (ny - 1) / 2.0 + rng.uniform(-0.6, 0.6) * spec.brain_semi_axes[1]
        tz = z0 + (span - 1) / 2.0
        reach = span / 2.0 + 0.5
        # cross-sections shrink toward the ends of the span
        scale = np.sqrt(np.clip(1.0 - ((z - tz) / reach) ** 2, 0.0, None))
        in_span = (z >= z0) & (z < z0 + span)
        with np.errstate(divide="ignore", invalid="ignore"):
            blob = in_span & (((x - tx) / (a * scale)) ** 2 + ((y - ty) / (b * scale)) ** 2 <= 1.0)
        if not blob.any():
            continue
        mirror = blob[::-1]
        side_ok = np.all(x[blob] >= cx + _MIDLINE_GAP) if spec.laterality == "right" else np.all(
            x[blob] <= cx - _MIDLINE_GAP
        )
        zs = np.unique(np.nonzero(blob)[2])
        if (
            side_ok
            and np.all(brain[blob])
            and np.all(brain[mirror])
            and len(zs) == span
            and not np.any(existing[mirror])
        ):
            return blob
    raise InvalidSpec("could not place a tumor inside the hemisphere; shrink the tumor size range")


def _shift(arr, sx, sy, fill):
    out = np.full_like(arr, fill)
    nx, ny = arr.shape[:2]
    src_x = slice(max(0, -sx), nx - max(0, sx))
    dst_x = slice(max(0, sx), nx - max(0, -sx))
    src_y = slice(max(0, -sy), ny - max(0, sy))
    dst_y = slice(max(0, sy), ny - max(0, -sy))
    out[dst_x, dst_y] = arr[src_x, src_y]
    return out


def generate_patient(spec: PhantomSpec, seed: int) -> tuple[Volume, GroundTruth]:
    spec.validate()
    rng = np.random.default_rng(seed)
    img, brain = _anatomy(spec)
    mask = np.zeros(spec.shape, dtype=bool)
    if spec.has_tumor:
        for _ in range(spec.n_tumors):
            mask |= _tumor_blob(spec, brain, rng, mask)
        img[mask] = spec.tumor
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=spec.shape)
        np.clip(img, 0.0, None, out=img)
    if spec.max_shift:
        sx, sy = (int(s) for s in rng.integers(-spec.max_shift, spec.max_shift + 1, size=2))
        img = _shift(img, sx, sy, 0.0)
        mask = _shift(mask, sx, sy, False)
    volume = Volume.from_array(img, pixdim=spec.spacing, descrip="mrtumor phantom")
    slices = frozenset(int(k) for k in np.nonzero(mask.any(axis=(0, 1)))[0])
    truth = GroundTruth(has_tumor=bool(slices), tumor_slices=slices, masks=mask)
    return volume, truth


def template_volume(spec: PhantomSpec = PhantomSpec()) -> Volume:
    """Noise-free, tumor-free phantom used as the registration target."""
    clean = dataclasses.replace(spec, has_tumor=False, noise_sigma=0.0, max_shift=0)
    volume, _ = generate_patient(clean, 0)
    return volume


def patient_spec(base: PhantomSpec, has_tumor: bool, rng: np.random.Generator,
                 contrast_range=(0.3, 0.5)) -> PhantomSpec:
    """Jitter ``base`` into one patient's spec (intensities, side, multiplicity)."""
    tissue = float(np.clip(base.tissue + rng.uniform(-0.05, 0.05), 0.05, 0.9))
    contrast = float(rng.uniform(*contrast_range))
    return dataclasses.replace(
        base,
        tissue=tissue,
        tumor=float(min(tissue + contrast, 1.0)),
        has_tumor=has_tumor,
        laterality=("left", "right")[int(rng.integers(2))],
        n_tumors=1 + int(rng.random() < 0.25),
    )


def generate_cohort(spec: PhantomSpec, n_normal: int, n_tumor: int, seed: int,
                    contrast_range=(0.3, 0.5)) -> list[Patient]:
    """Build a mixed cohort; patient ``i`` depends only on ``(seed, i)``."""
    if n_normal < 1 or n_tumor < 1:
        raise InvalidSpec("a cohort needs at least one normal and one tumor patient")
    if contrast_range[0] <= 0 or contrast_range[1] < contrast_range[0]:
        raise InvalidSpec(f"bad contrast range {contrast_range}")
    spec.validate()
    n = n_normal + n_tumor
    order = np.random.default_rng([seed, n]).permutation(n)
    labels = np.zeros(n, dtype=int)
    labels[order[:n_tumor]] = 1
    patients = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        pspec = patient_spec(spec, bool(labels[i]), rng, contrast_range)
        volume, truth = generate_patient(pspec, int(rng.integers(2**63 - 1)))
        patients.append(Patient(f"P{i:03d}", volume, truth, int(labels[i])))
    return patients
