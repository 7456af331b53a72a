"""Spatial and intensity normalisation of a patient volume.

Order of operations: rigid registration to the template (NCC maximisation)
-> trilinear resampling onto the canonical 64x64x16 grid -> drop the first and
last two slices -> divide every slice by its own maximum.

Geometry conventions
--------------------
* Volumes are indexed ``data[x, y, z]``; world coordinates (mm) put the origin
  at the grid centre, ``world = (index - (n - 1) / 2) * spacing``.
* A :class:`RigidTransform` maps moving-image world points onto template world
  points, ``T(p) = R p + t * template_spacing``.  Resampling therefore pulls
  ``moving(T^-1(q))`` for every template grid point ``q``.
* Slices handed to the rest of the pipeline are 2-D images with rows along y
  and columns along x (``data[:, :, k].T``), so the left-right mirror is a
  column flip.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import map_coordinates
from scipy.spatial.transform import Rotation

from .errors import BadDims, DegenerateInput, WrongSliceCount
from .nifti_io import Volume
from .phantom import CANONICAL_SHAPE, CANONICAL_SPACING

N_RAW_SLICES = 16
N_SLICES = 12
N_TRIM = 2

COARSE_SHIFT = 4
COARSE_ANGLE_DEG = 10.0
COARSE_ANGLE_STEP_DEG = 2.0
FINE_SHIFT = 0.25
FINE_ANGLE_DEG = 0.5
# minimum NCC gain for a refinement move; keeps noise-driven sub-voxel drift out
REFINE_MIN_GAIN = 1e-4


@dataclass(frozen=True)
class RigidTransform:
    angles: tuple[float, float, float] = (0.0, 0.0, 0.0)  # radians about x, y, z
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)  # template voxels

    def __post_init__(self):
        wrapped = tuple(float(-((-a + np.pi) % (2 * np.pi) - np.pi)) + 0.0 for a in self.angles)
        object.__setattr__(self, "angles", wrapped)
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    @property
    def is_identity(self) -> bool:
        return not any(self.angles) and not any(self.translation)

    def matrix(self) -> np.ndarray:
        if not any(self.angles):
            return np.eye(3)
        return Rotation.from_euler("xyz", self.angles).as_matrix()

    def as_params(self) -> np.ndarray:
        return np.array([*self.translation, *np.degrees(self.angles)])

    @classmethod
    def from_params(cls, params) -> "RigidTransform":
        p = np.asarray(params, dtype=np.float64)
        return cls(angles=tuple(np.radians(p[3:])), translation=tuple(p[:3]))


@dataclass
class SliceStack:
    slices: np.ndarray  # (12, 64, 64), rows = y, cols = x
    patient_id: str = ""

    def __post_init__(self):
        self.slices = np.asarray(self.slices, dtype=np.float64)
        if self.slices.ndim != 3 or self.slices.shape[0] != N_SLICES:
            raise WrongSliceCount(f"slice stack needs {N_SLICES} slices, got shape {self.slices.shape}")

    def __len__(self):
        return self.slices.shape[0]

    def __getitem__(self, k):
        return self.slices[k]


# --------------------------------------------------------------------------- NCC

def ncc(f, g) -> float:
    """Zero-mean normalised correlation of two equally long intensity sets.

    Returns 0.0 when either set is constant (the correlation is undefined).
    """
    f = np.asarray(f, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    if f.shape != g.shape:
        raise BadDims(f"ncc needs equal lengths, got {f.size} and {g.size}")
    if f.size < 2:
        raise DegenerateInput("ncc needs at least two samples")
    df = f - f.mean()
    dg = g - g.mean()
    sf = np.sqrt(np.dot(df, df))
    sg = np.sqrt(np.dot(dg, dg))
    if sf == 0.0 or sg == 0.0:
        return 0.0
    return float(np.dot(df, dg) / (sf * sg))


# -------------------------------------------------------------------- resampling

def _sample_coords(moving_shape, moving_spacing, t: RigidTransform, shape, spacing):
    """Moving-image index coordinates for every point of the target grid."""
    spacing = np.asarray(spacing, dtype=np.float64)
    axes = [(np.arange(n) - (n - 1) / 2.0) * s for n, s in zip(shape, spacing)]
    q = np.stack(np.meshgrid(*axes, indexing="ij"), axis=0).reshape(3, -1)
    if not t.is_identity:
        shift = np.asarray(t.translation) * spacing
        q = t.matrix().T @ (q - shift[:, None])
    m_spacing = np.asarray(moving_spacing, dtype=np.float64)
    centre = (np.asarray(moving_shape) - 1) / 2.0
    return q / m_spacing[:, None] + centre[:, None]


def resample_with_mask(v: Volume, t: RigidTransform = RigidTransform(), shape=CANONICAL_SHAPE,
                       spacing=CANONICAL_SPACING) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear resampling plus the mask of grid points that fell inside ``v``."""
    coords = _sample_coords(v.shape, v.spacing, t, shape, spacing)
    eps = 1e-9
    upper = np.asarray(v.shape, dtype=np.float64)[:, None] - 1
    inside = np.all((coords >= -eps) & (coords <= upper + eps), axis=0)
    out = map_coordinates(v.data, coords, order=1, mode="nearest", prefilter=False)
    out[~inside] = 0.0
    return out.reshape(shape), inside.reshape(shape)


def resample(v: Volume, t: RigidTransform = RigidTransform(), shape=CANONICAL_SHAPE,
             spacing=CANONICAL_SPACING) -> np.ndarray:
    """Pull ``v`` onto the canonical grid through ``t``; samples outside ``v`` are 0."""
    return resample_with_mask(v, t, shape, spacing)[0]


# ------------------------------------------------------------------ registration

def _overlap_ncc(template: np.ndarray, moved: np.ndarray, inside: np.ndarray) -> float:
    if inside.sum() < 2:
        return 0.0
    return ncc(template[inside], moved[inside])


def _shift_scores(template: np.ndarray, moved: np.ndarray, inside: np.ndarray, radius: int):
    """NCC over the overlap for every integer shift within ``radius``.

    The six overlap sums are cross-correlations, evaluated with one padded FFT
    each.  Shift ``s`` pairs template voxel ``p`` with ``moved[p - s]``.
    """
    shape = template.shape
    pad = [sfft.next_fast_len(n + radius) for n in shape]
    axes = (0, 1, 2)

    def spectrum(a):
        return sfft.rfftn(a, s=pad, axes=axes)

    ones = np.ones(shape)
    valid = inside.astype(np.float64)
    g = np.where(inside, moved, 0.0)
    ft = {"A": spectrum(ones), "F": spectrum(template), "FF": spectrum(template**2)}
    fm = {"B": spectrum(valid), "G": spectrum(g), "GG": spectrum(g**2)}

    def corr(x, y):
        # sum_p x(p) y(p - s), circular over the zero-padded grid
        return sfft.irfftn(ft[x] * np.conj(fm[y]), s=pad, axes=axes)

    n = corr("A", "B")
    sf = corr("F", "B")
    sg = corr("A", "G")
    sff = corr("FF", "B")
    sgg = corr("A", "GG")
    sfg = corr("F", "G")

    r = np.arange(-radius, radius + 1)
    grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    idx = tuple((grid[:, k] % pad[k]) for k in range(3))
    count = np.round(n[idx])
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = sfg[idx] - sf[idx] * sg[idx] / count
        vf = sff[idx] - sf[idx] ** 2 / count
        vg = sgg[idx] - sg[idx] ** 2 / count
        val = cov / np.sqrt(vf * vg)
    ok = (count >= 2) & (vf > 1e-12) & (vg > 1e-12)
    scores = {tuple(int(c) for c in s): float(v) for s, v, good in zip(grid, val, ok) if good}
    return scores


def _world_grid(shape, spacing, stride=(1, 1, 1)) -> np.ndarray:
    axes = [(np.arange(0, n, k) - (n - 1) / 2.0) * sp for n, sp, k in zip(shape, spacing, stride)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=0).reshape(3, -1)


def register(moving: Volume, template: Volume) -> RigidTransform:
    """Rigid transform of ``moving`` that maximises NCC with ``template``.

    Search: integer translations within +-4 voxels (all combinations), then
    each rotation axis over +-10 degrees in 2 degree steps, then a coordinate
    pattern search halving its steps down to 0.25 voxel / 0.5 degree.  The
    identity is returned whenever nothing beats it.

    During the rotation and refinement stages NCC is evaluated on every second
    voxel in-plane, which is four times cheaper and does not move the optimum
    for images that are smooth at the voxel scale.
    """
    fixed = template.data
    if np.ptp(fixed) == 0:
        raise DegenerateInput("template volume is constant")
    if np.ptp(moving.data) == 0:
        raise DegenerateInput("moving volume is constant")
    shape, spacing = template.shape, template.spacing

    stride = (2, 2, 1)
    q = _world_grid(shape, spacing, stride)
    f_sub = fixed[::stride[0], ::stride[1], ::stride[2]].ravel()
    m_spacing = moving.spacing[:, None]
    m_centre = ((np.asarray(moving.shape) - 1) / 2.0)[:, None]
    upper = np.asarray(moving.shape, dtype=np.float64)[:, None] - 1
    cache: dict[tuple, float] = {}

    def score(params) -> float:
        key = tuple(np.round(params, 9))
        if key not in cache:
            t = RigidTransform.from_params(params)
            pts = t.matrix().T @ (q - (np.asarray(t.translation) * spacing)[:, None])
            coords = pts / m_spacing + m_centre
            inside = np.all((coords >= -1e-9) & (coords <= upper + 1e-9), axis=0)
            if inside.sum() < 2:
                cache[key] = 0.0
            else:
                vals = map_coordinates(moving.data, coords[:, inside], order=1, mode="nearest",
                                       prefilter=False)
                cache[key] = ncc(f_sub[inside], vals)
        return cache[key]

    identity = np.zeros(6)
    base = score(identity)

    # 1. integer translation grid on the identity-resampled image (full resolution)
    moved0, inside0 = resample_with_mask(moving, RigidTransform(), shape, spacing)
    shifts = _shift_scores(fixed, moved0, inside0, COARSE_SHIFT)
    best = identity.copy()
    if shifts:
        s_best = max(shifts, key=lambda s: (shifts[s], -sum(abs(c) for c in s)))
        best[:3] = s_best
    best_score = score(best)
    if best_score < base:
        best, best_score = identity.copy(), base

    # 2. rotation grid, one axis at a time
    angles = np.arange(-COARSE_ANGLE_DEG, COARSE_ANGLE_DEG + 1e-9, COARSE_ANGLE_STEP_DEG)
    for axis in range(3):
        for a in angles:
            trial = best.copy()
            trial[3 + axis] = a
            s = score(trial)
            if s > best_score + REFINE_MIN_GAIN:
                best, best_score = trial, s

    # 3. pattern search, halving the coarse steps down to the fine ones
    t_step, r_step = 0.5, COARSE_ANGLE_STEP_DEG / 2.0
    while t_step >= FINE_SHIFT - 1e-12:
        improved = True
        while improved:
            improved = False
            for k in range(6):
                step = t_step if k < 3 else r_step
                for sign in (1.0, -1.0):
                    trial = best.copy()
                    trial[k] += sign * step
                    s = score(trial)
                    if s > best_score + REFINE_MIN_GAIN:
                        best, best_score, improved = trial, s, True
        t_step /= 2.0
        r_step = max(r_step / 2.0, FINE_ANGLE_DEG)

    if best_score <= base:
        return RigidTransform()
    return RigidTransform.from_params(best)


def registration_score(moving: Volume, template: Volume, t: RigidTransform) -> float:
    moved, inside = resample_with_mask(moving, t, template.shape, template.spacing)
    return _overlap_ncc(template.data, moved, inside)


# ------------------------------------------------------------ slices & intensity

def trim_slices(grid: np.ndarray) -> np.ndarray:
    """Keep slices 2..13 of a 16-slice grid (slice axis last)."""
    grid = np.asarray(grid)
    if grid.ndim != 3 or grid.shape[2] != N_RAW_SLICES:
        raise WrongSliceCount(f"expected {N_RAW_SLICES} slices, got shape {grid.shape}")
    return grid[:, :, N_TRIM:N_RAW_SLICES - N_TRIM].copy()


def intensity_normalize(slice_: np.ndarray) -> np.ndarray:
    """Divide a slice by its maximum; a slice with no positive value is returned as is."""
    slice_ = np.asarray(slice_, dtype=np.float64)
    peak = slice_.max() if slice_.size else 0.0
    if peak <= 0.0:
        return slice_.copy()
    return slice_ / peak


def to_slices(grid: np.ndarray) -> np.ndarray:
    """(x, y, z) grid -> (z, row=y, col=x) image stack."""
    return np.ascontiguousarray(np.transpose(grid, (2, 1, 0)))


def from_slices(stack: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(stack, (2, 1, 0)))


def preprocess_volume(volume: Volume, template: Volume, patient_id: str = "",
                      do_register: bool = True) -> tuple[SliceStack, RigidTransform]:
    t = register(volume, template) if do_register else RigidTransform()
    grid = resample(volume, t)
    # magnitude images: interpolation cannot create negatives, but inputs may carry them
    grid = np.clip(trim_slices(grid), 0.0, None)
    stack = np.stack([intensity_normalize(s) for s in to_slices(grid)])
    return SliceStack(stack, patient_id), t
