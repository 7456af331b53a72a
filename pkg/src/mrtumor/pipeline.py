"""End-to-end composition: SVM patient gate -> forest slice selection -> segmentation.

These functions work on in-memory objects; :mod:`mrtumor.cli` wraps them with
file I/O.  Every result is a pure function of the inputs, the config and the
config's seed, independent of the worker count.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .errors import ConfigInvalid
from .features import patient_features, slice_features
from .forest import Forest, predict_forest, train_forest
from .metrics import ConfusionCounts, accuracy, dice, sensitivity, specificity
from .nifti_io import Volume
from .preprocess import (
    N_SLICES,
    RigidTransform,
    SliceStack,
    preprocess_volume,
    resample,
    to_slices,
    trim_slices,
)
from .segment import SegConfig, Segmentation, segment_patient
from .svm import LinearModel, decision_value, train_svm

log = logging.getLogger(__name__)

TUMOR, NORMAL = 1, 0
_SPLIT_STREAM = 0x5117  # keeps split draws apart from other uses of the seed


@contextmanager
def timed(stage: str):
    start = time.perf_counter()
    yield
    log.info("%s took %.2f s", stage, time.perf_counter() - start)


@dataclass
class PatientRecord:
    """A preprocessed patient, with ground truth carried into stack space when known."""

    patient_id: str
    stack: SliceStack
    transform: RigidTransform
    label: int | None = None
    truth: np.ndarray | None = field(default=None, repr=False)  # (12, 64, 64) bool

    def slice_labels(self) -> np.ndarray:
        if self.truth is None:
            raise ConfigInvalid(f"{self.patient_id}: no ground-truth mask")
        return self.truth.any(axis=(1, 2)).astype(np.int64)


@dataclass
class PatientResult:
    patient_id: str
    decision_value: float
    stage1_label: int
    # forest vote for every slice, recorded for all patients (diagnostics, slice metrics)
    slice_predictions: tuple[int, ...] = ()
    forest_slices: tuple[int, ...] = ()  # slices handed to segmentation (stage-1 positives only)
    segmentation: Segmentation | None = None

    @property
    def final_label(self) -> int:
        if self.stage1_label == NORMAL or self.segmentation is None:
            return NORMAL
        return TUMOR if self.segmentation.has_tumor else NORMAL

    def final_masks(self) -> np.ndarray:
        if self.segmentation is None:
            return np.zeros((N_SLICES, 64, 64), dtype=bool)
        return self.segmentation.mask_array()


@dataclass
class TrainedModels:
    svm: LinearModel
    forest: Forest


# ------------------------------------------------------------------ preparation

def truth_to_stack(mask: np.ndarray, spacing, transform: RigidTransform) -> np.ndarray:
    """Carry a volume-space ground-truth mask through the same resample and trim."""
    vol = Volume.from_array(mask.astype(np.float64), pixdim=spacing)
    grid = resample(vol, transform)
    return to_slices(trim_slices(grid)) > 0.5


def _prepare_one(job) -> PatientRecord:
    patient_id, volume, mask, label, template, do_register = job
    stack, t = preprocess_volume(volume, template, patient_id, do_register=do_register)
    truth = None if mask is None else truth_to_stack(mask, volume.header.pixdim, t)
    return PatientRecord(patient_id, stack, t, label, truth)


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def prepare_patients(patients, template: Volume, workers: int = 1, do_register: bool = True):
    """Preprocess phantom :class:`~mrtumor.phantom.Patient` objects (or compatible)."""
    jobs = [
        (p.patient_id, p.volume, None if p.truth is None else p.truth.masks, p.label, template, do_register)
        for p in patients
    ]
    return _map(_prepare_one, jobs, workers)


def split_patients(patient_ids, labels, ratio: float = 3.0, seed: int = 0):
    """Stratified train/test split, ``ratio`` train per test case in each class."""
    ids = list(patient_ids)
    labels = np.asarray(labels)
    if len(set(ids)) != len(ids):
        raise ConfigInvalid("duplicate patient ids")
    rng = np.random.default_rng([seed, _SPLIT_STREAM])
    train, test = [], []
    for cls in sorted(set(labels.tolist())):
        members = [ids[i] for i in np.nonzero(labels == cls)[0]]
        members = [members[i] for i in rng.permutation(len(members))]
        n_train = int(round(len(members) * ratio / (ratio + 1.0)))
        n_train = min(max(n_train, 1), len(members) - 1) if len(members) > 1 else len(members)
        train += members[:n_train]
        test += members[n_train:]
    train, test = sorted(train), sorted(test)
    check_disjoint(train, test)
    return train, test


def check_disjoint(train, test) -> None:
    overlap = set(train) & set(test)
    if overlap:
        raise ConfigInvalid(f"patients in both train and test: {sorted(overlap)}")


# ------------------------------------------------------------------ stages

def train_models(records, cfg: PipelineConfig) -> TrainedModels:
    """SVM on every training patient; forest on the slices of training tumor patients."""
    labels = np.array([r.label for r in records])
    with timed("svm training"):
        X = np.stack([patient_features(r.stack) for r in records])
        svm = train_svm(X, np.where(labels == TUMOR, 1, -1), cfg.svm)
    tumor = [r for r in records if r.label == TUMOR]
    with timed("forest training"):
        Xs = np.vstack([np.stack([slice_features(s) for s in r.stack.slices]) for r in tumor])
        ys = np.concatenate([r.slice_labels() for r in tumor])
        forest = train_forest(Xs, ys, dataclasses.replace(cfg.forest, seed=cfg.seed))
    log.info("forest out-of-bag accuracy %.4f", forest.oob_score or float("nan"))
    return TrainedModels(svm, forest)


def classify(record: PatientRecord, svm: LinearModel) -> tuple[float, int]:
    d = decision_value(svm, patient_features(record.stack))
    return d, TUMOR if d >= 0 else NORMAL


def _run_one(job) -> PatientResult:
    record, models, seg_cfg = job
    d, stage1 = classify(record, models.svm)
    X = np.stack([slice_features(s) for s in record.stack.slices])
    votes = tuple(int(v) for v in predict_forest(models.forest, X))
    if stage1 == NORMAL:
        return PatientResult(record.patient_id, d, stage1, votes)
    slices = {k for k, v in enumerate(votes) if v == TUMOR}
    seg = segment_patient(record.stack, slices, seg_cfg)
    return PatientResult(record.patient_id, d, stage1, votes, tuple(sorted(slices)), seg)


def run_patients(records, models: TrainedModels, seg_cfg: SegConfig = SegConfig(), workers: int = 1):
    return _map(_run_one, [(r, models, seg_cfg) for r in records], workers)


# ------------------------------------------------------------------ evaluation

def slice_dice(pred: np.ndarray, truth: np.ndarray | None) -> dict[int, float]:
    """Dice per slice over the union of true and segmented slices."""
    if truth is None:
        return {}
    keys = sorted(set(np.nonzero(truth.any(axis=(1, 2)))[0]) | set(np.nonzero(pred.any(axis=(1, 2)))[0]))
    return {int(k): dice(pred[k], truth[k]) for k in keys}


def _rates(c: ConfusionCounts) -> dict:
    out = {"n": c.total, "tp": c.tp, "fn": c.fn, "tn": c.tn, "fp": c.fp}
    out["accuracy"] = accuracy(c) if c.total else None
    out["sensitivity"] = sensitivity(c) if c.tp + c.fn else None
    out["specificity"] = specificity(c) if c.tn + c.fp else None
    return out


def evaluate(truths: dict, results) -> dict:
    """Stage-1, final and slice-level rates plus Dice over the given patients.

    ``truths`` maps patient id to ``(label, truth_stack)``; the forest's slice
    rates are taken over every slice of the tumor patients.
    """
    truth = np.array([truths[res.patient_id][0] for res in results])
    stage1 = np.array([res.stage1_label for res in results])
    final = np.array([res.final_label for res in results])

    slice_pred, slice_true, tp_dice = [], [], []
    for res in results:
        label, mask = truths[res.patient_id]
        if mask is None:
            continue
        if label == TUMOR and res.slice_predictions:
            slice_pred.append(np.asarray(res.slice_predictions))
            slice_true.append(mask.any(axis=(1, 2)).astype(np.int64))
        pred = res.final_masks()
        for k in range(N_SLICES):
            if mask[k].any() and pred[k].any():
                tp_dice.append(dice(pred[k], mask[k]))

    out = {
        "stage1": _rates(ConfusionCounts.from_labels(stage1, truth)),
        "final": _rates(ConfusionCounts.from_labels(final, truth)),
        "mean_tp_slice_dice": float(np.mean(tp_dice)) if tp_dice else None,
        "n_tp_slices": len(tp_dice),
    }
    if slice_pred:
        out["slice"] = _rates(ConfusionCounts.from_labels(np.concatenate(slice_pred), np.concatenate(slice_true)))
    return out


def normal_clean_rate(records, seg_cfg: SegConfig = SegConfig()) -> float:
    """Share of normal patients with no flagged voxel when every slice is submitted."""
    normals = [r for r in records if r.label == NORMAL]
    if not normals:
        return float("nan")
    clean = sum(not segment_patient(r.stack, set(range(N_SLICES)), seg_cfg).has_tumor for r in normals)
    return clean / len(normals)


@dataclass
class PipelineRun:
    train_ids: list[str]
    test_ids: list[str]
    models: TrainedModels
    records: list[PatientRecord]
    results: list[PatientResult]
    metrics: dict


def run_pipeline(patients, template: Volume, cfg: PipelineConfig = PipelineConfig(),
                 records=None) -> PipelineRun:
    """Split, preprocess, train on the training split and run all three stages on every patient.

    ``metrics`` are computed on the test split only.
    """
    cfg.validate()
    if records is None:
        with timed(f"preprocessing {len(patients)} patients"):
            records = prepare_patients(patients, template, cfg.workers, cfg.register)
    train_ids, test_ids = split_patients([r.patient_id for r in records], [r.label for r in records],
                                         cfg.split_ratio, cfg.seed)
    train_set = set(train_ids)
    models = train_models([r for r in records if r.patient_id in train_set], cfg)
    with timed("classification and segmentation"):
        results = run_patients(records, models, cfg.seg, cfg.workers)
    test_set = set(test_ids)
    metrics = evaluate(
        {r.patient_id: (r.label, r.truth) for r in records},
        [res for res in results if res.patient_id in test_set],
    )
    return PipelineRun(train_ids, test_ids, models, records, results, metrics)


# ------------------------------------------------------------------ calibration

def sweep_segmentation(records, thresholds, patch_counts) -> list[dict]:
    """Score every (threshold, patch count) pair with oracle slice selection.

    Tumor patients are segmented on their true tumor slices (mean Dice over
    slices with a non-empty result); normal patients on all slices (share with
    nothing flagged).
    """
    rows = []
    tumors = [r for r in records if r.label == TUMOR and r.truth is not None]
    for theta in thresholds:
        for kappa in patch_counts:
            seg_cfg = SegConfig(threshold=float(theta), patch_count=int(kappa))
            dices, missed = [], 0
            for r in tumors:
                true_slices = set(np.nonzero(r.slice_labels())[0].tolist())
                seg = segment_patient(r.stack, true_slices, seg_cfg)
                pred = seg.mask_array()
                for k in sorted(true_slices):
                    if pred[k].any():
                        dices.append(dice(pred[k], r.truth[k]))
                    else:
                        missed += 1
            rows.append({
                "threshold": float(theta),
                "patch_count": int(kappa),
                "mean_dice": float(np.mean(dices)) if dices else 0.0,
                "missed_slices": missed,
                "normal_clean_rate": normal_clean_rate(records, seg_cfg),
            })
    return rows


def pick_calibration(rows, min_clean_rate: float = 0.95) -> dict:
    """Best mean Dice among settings that keep normals clean, ties to fewer missed slices."""
    ok = [r for r in rows if r["normal_clean_rate"] >= min_clean_rate] or rows
    return max(ok, key=lambda r: (round(r["mean_dice"], 6), -r["missed_slices"], r["threshold"]))
