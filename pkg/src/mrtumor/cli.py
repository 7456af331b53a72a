"""Command-line entry point: ``mrtumor <subcommand> [flags]``.

Subcommands follow the process flow: ``phantom`` writes a dataset, ``train``
fits both models on the training split, ``classify`` applies the SVM gate,
``segment`` runs slice selection and segmentation, ``evaluate`` scores the
segment outputs against ground truth.  ``pipeline`` does train through
evaluate in one process; ``sweep`` calibrates the segmentation threshold and
patch count on a held-out dataset.

Every file written is a pure function of the dataset, the config and the seed.
Timings go to the log (stderr), never into outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .dataset import (
    LABEL_NAMES,
    dump_json,
    load_patients,
    load_template,
    write_csv,
    write_dataset,
)
from .errors import ConfigInvalid, MRTumorError
from .features import patient_features
from .forest import load_forest, save_forest
from .metrics import fmt_percent
from .nifti_io import Volume, read_volume, write_volume
from .phantom import CANONICAL_SPACING, PhantomSpec, generate_cohort, template_volume
from .pipeline import (
    NORMAL,
    TUMOR,
    PatientResult,
    TrainedModels,
    check_disjoint,
    evaluate,
    pick_calibration,
    prepare_patients,
    run_patients,
    slice_dice,
    split_patients,
    sweep_segmentation,
    timed,
    train_models,
    truth_to_stack,
)
from .preprocess import RigidTransform, from_slices, to_slices
from .svm import decision_value, load_model, save_model

log = logging.getLogger("mrtumor")

SVM_FILE, FOREST_FILE, SPLIT_FILE = "svm.json", "forest.json", "split.json"


# ------------------------------------------------------------------ shared helpers

def _config(args) -> PipelineConfig:
    overrides = {
        "seed": args.seed,
        "workers": args.workers,
        "output_dir": args.out,
        "data_dir": args.data,
        "model_dir": args.models,
    }
    if getattr(args, "no_register", False):
        overrides["register"] = False
    return load_config(args.config, **overrides)


def _label_name(label: int) -> str:
    return LABEL_NAMES[int(label)]


def _load_records(cfg: PipelineConfig, ids=None):
    template = load_template(cfg.template_path)
    patients = load_patients(cfg.data_dir, ids)
    with timed(f"preprocessing {len(patients)} patients"):
        return prepare_patients(patients, template, cfg.workers, cfg.register)


def _read_split(cfg: PipelineConfig) -> dict:
    path = Path(cfg.model_dir) / SPLIT_FILE
    if not path.is_file():
        raise ConfigInvalid(f"split file not found: {path} (run 'train' first)")
    doc = json.loads(path.read_text())
    check_disjoint(doc["train"], doc["test"])
    return doc


def _split_of(split: dict, pid: str) -> str:
    if pid in split.get("train_set", ()):
        return "train"
    return "test" if pid in split.get("test_set", ()) else "unseen"


def _load_split(cfg):
    doc = _read_split(cfg)
    doc["train_set"], doc["test_set"] = set(doc["train"]), set(doc["test"])
    return doc


def _load_models(cfg: PipelineConfig) -> TrainedModels:
    root = Path(cfg.model_dir)
    return TrainedModels(load_model(root / SVM_FILE), load_forest(root / FOREST_FILE))


def _save_models(models: TrainedModels, train_ids, test_ids, cfg: PipelineConfig) -> None:
    root = Path(cfg.model_dir)
    root.mkdir(parents=True, exist_ok=True)
    save_model(models.svm, root / SVM_FILE)
    save_forest(models.forest, root / FOREST_FILE)
    dump_json({"seed": cfg.seed, "split_ratio": cfg.split_ratio, "train": train_ids, "test": test_ids},
              root / SPLIT_FILE)


# ------------------------------------------------------------------ output writers

CLASSIFY_COLUMNS = ["patient_id", "split", "decision_value", "stage1_label"]


def _write_classify(results, split, out: Path) -> None:
    rows = [{
        "patient_id": r.patient_id,
        "split": _split_of(split, r.patient_id),
        "decision_value": repr(float(r.decision_value)),
        "stage1_label": _label_name(r.stage1_label),
    } for r in results]
    write_csv(rows, out / "classify.csv", CLASSIFY_COLUMNS)


def _patient_report(res: PatientResult, record, split) -> dict:
    seg = res.segmentation
    return {
        "patient_id": res.patient_id,
        "split": _split_of(split, res.patient_id),
        "decision_value": float(res.decision_value),
        "stage1_label": _label_name(res.stage1_label),
        "final_label": _label_name(res.final_label),
        "transform": [float(v) for v in record.transform.as_params()],
        "slice_predictions": list(res.slice_predictions),
        "forest_slices": list(res.forest_slices),
        "segmented_slices": sorted(int(k) for k in seg.slices) if seg is not None else [],
        "tumor_slices": sorted(k for k, n in seg.flagged.items() if n) if seg is not None else [],
        "flagged_voxels": {str(k): int(n) for k, n in sorted(seg.flagged.items())} if seg is not None else {},
    }


def _mask_volume(stack_mask: np.ndarray) -> Volume:
    return Volume.from_array(from_slices(stack_mask.astype(np.uint8)), pixdim=CANONICAL_SPACING,
                             datatype="uint8", descrip="tumor mask")


def _write_segment(records, results, split, out: Path) -> None:
    for sub in ("overlays", "masks", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    summary = []
    for record, res in zip(records, results):
        if res.segmentation is not None:
            write_volume(res.segmentation.overlay, out / "overlays" / f"{res.patient_id}_overlay.nii")
        write_volume(_mask_volume(res.final_masks()), out / "masks" / f"{res.patient_id}_mask.nii")
        report = _patient_report(res, record, split)
        dump_json(report, out / "reports" / f"{res.patient_id}.json")
        summary.append(report)
    dump_json({"patients": summary}, out / "segmentation.json")


EVAL_COLUMNS = ["patient_id", "split", "stage1_label", "final_label", "truth", "slice_dice"]
METRIC_COLUMNS = ["scope", "stage", "n", "tp", "fn", "tn", "fp", "accuracy", "sensitivity", "specificity"]


def _fmt(v) -> str:
    return "" if v is None else fmt_percent(v)


def _write_evaluation(rows, metrics_by_scope: dict, out: Path) -> None:
    write_csv(rows, out / "evaluation.csv", EVAL_COLUMNS)
    metric_rows = []
    for scope, m in metrics_by_scope.items():
        for stage in ("stage1", "final", "slice"):
            if stage not in m:
                continue
            r = m[stage]
            metric_rows.append({
                "scope": scope, "stage": stage,
                **{k: r[k] for k in ("n", "tp", "fn", "tn", "fp")},
                **{k: _fmt(r[k]) for k in ("accuracy", "sensitivity", "specificity")},
            })
    write_csv(metric_rows, out / "metrics.csv", METRIC_COLUMNS)
    dump_json(metrics_by_scope, out / "metrics.json")


def _evaluation(reports: list[dict], preds: dict, truths: dict, split) -> tuple[list, dict]:
    """Rows for evaluation.csv and metrics for the test split and all patients."""
    results = [
        PatientResult(
            patient_id=rep["patient_id"],
            decision_value=rep["decision_value"],
            stage1_label=TUMOR if rep["stage1_label"] == "tumor" else NORMAL,
            slice_predictions=tuple(rep["slice_predictions"]),
        )
        for rep in reports
    ]
    rows = []
    for rep in reports:
        pid = rep["patient_id"]
        label, truth = truths[pid]
        scores = slice_dice(preds[pid], truth)
        rows.append({
            "patient_id": pid,
            "split": rep["split"],
            "stage1_label": rep["stage1_label"],
            "final_label": rep["final_label"],
            "truth": "" if label is None else _label_name(label),
            "slice_dice": ";".join(f"{k}:{v:.4f}" for k, v in scores.items()),
        })
    final = {rep["patient_id"]: rep["final_label"] for rep in reports}
    scoped = {}
    for scope, keep in (("test", lambda p: _split_of(split, p) == "test"), ("all", lambda p: True)):
        chosen = [r for r in results if keep(r.patient_id) and truths[r.patient_id][0] is not None]
        if not chosen:
            continue
        scoped[scope] = evaluate(truths, [_Scored(r, preds[r.patient_id], final[r.patient_id]) for r in chosen])
    return rows, scoped


class _Scored:
    """A result rebuilt from the written report and mask volume."""

    def __init__(self, res: PatientResult, masks: np.ndarray, final_label: str):
        self.patient_id = res.patient_id
        self.stage1_label = res.stage1_label
        self.slice_predictions = res.slice_predictions
        self.final_label = TUMOR if final_label == "tumor" else NORMAL
        self._masks = masks

    def final_masks(self) -> np.ndarray:
        return self._masks


# ------------------------------------------------------------------ subcommands

def cmd_phantom(args) -> int:
    out = Path(args.out or "data")
    base = PhantomSpec(noise_sigma=args.noise, max_shift=args.max_shift)
    base.validate()
    patients = generate_cohort(base, args.n_normal, args.n_tumor, args.seed or 0,
                               contrast_range=(args.contrast_min, args.contrast_max))
    write_dataset(patients, template_volume(base), out, spec=base, seed=args.seed or 0)
    log.info("wrote %d patients to %s", len(patients), out)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    records = _load_records(cfg)
    train_ids, test_ids = split_patients([r.patient_id for r in records], [r.label for r in records],
                                         cfg.split_ratio, cfg.seed)
    train_set = set(train_ids)
    models = train_models([r for r in records if r.patient_id in train_set], cfg)
    _save_models(models, train_ids, test_ids, cfg)
    log.info("trained on %d patients; %d held out", len(train_ids), len(test_ids))
    return 0


def cmd_classify(args) -> int:
    cfg = _config(args)
    svm = load_model(Path(cfg.model_dir) / SVM_FILE)
    split = _load_split(cfg)
    records = _load_records(cfg, args.patients)
    results = []
    for r in records:
        d = decision_value(svm, patient_features(r.stack))
        results.append(PatientResult(r.patient_id, d, TUMOR if d >= 0 else NORMAL))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_classify(results, split, out)
    return 0


def cmd_segment(args) -> int:
    cfg = _config(args)
    models = _load_models(cfg)
    split = _load_split(cfg)
    records = _load_records(cfg, args.patients)
    with timed("classification and segmentation"):
        results = run_patients(records, models, cfg.seg, cfg.workers)
    out = Path(cfg.output_dir)
    _write_segment(records, results, split, out)
    return 0


def _read_predictions(cfg: PipelineConfig):
    out = Path(cfg.output_dir)
    path = out / "segmentation.json"
    if not path.is_file():
        raise ConfigInvalid(f"segmentation report not found: {path} (run 'segment' first)")
    reports = json.loads(path.read_text())["patients"]
    preds = {
        rep["patient_id"]: to_slices(read_volume(out / "masks" / f"{rep['patient_id']}_mask.nii").data) > 0
        for rep in reports
    }
    return reports, preds


def _truths(cfg: PipelineConfig, reports) -> dict:
    """Ground truth carried into stack space with each patient's recorded transform."""
    patients = {p.patient_id: p for p in load_patients(cfg.data_dir, [r["patient_id"] for r in reports])}
    truths = {}
    for rep in reports:
        p = patients[rep["patient_id"]]
        if p.truth is None:
            truths[p.patient_id] = (p.label, None)
            continue
        t = RigidTransform.from_params(rep["transform"])
        truths[p.patient_id] = (p.label, truth_to_stack(p.truth.masks, p.volume.header.pixdim, t))
    return truths


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    split = _load_split(cfg)
    reports, preds = _read_predictions(cfg)
    rows, metrics = _evaluation(reports, preds, _truths(cfg, reports), split)
    _write_evaluation(rows, metrics, Path(cfg.output_dir))
    _print_metrics(metrics)
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    records = _load_records(cfg)
    train_ids, test_ids = split_patients([r.patient_id for r in records], [r.label for r in records],
                                         cfg.split_ratio, cfg.seed)
    train_set = set(train_ids)
    models = train_models([r for r in records if r.patient_id in train_set], cfg)
    _save_models(models, train_ids, test_ids, cfg)
    split = _load_split(cfg)
    with timed("classification and segmentation"):
        results = run_patients(records, models, cfg.seg, cfg.workers)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_classify(results, split, out)
    _write_segment(records, results, split, out)
    reports, preds = _read_predictions(cfg)
    rows, metrics = _evaluation(reports, preds, _truths(cfg, reports), split)
    _write_evaluation(rows, metrics, out)
    _print_metrics(metrics)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    records = _load_records(cfg)
    thresholds = [float(v) for v in args.thresholds.split(",")]
    counts = [int(v) for v in args.patch_counts.split(",")]
    with timed("sweep"):
        rows = sweep_segmentation(records, thresholds, counts)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns = ["threshold", "patch_count", "mean_dice", "missed_slices", "normal_clean_rate"]
    write_csv([{**r, "mean_dice": f"{r['mean_dice']:.6f}", "normal_clean_rate": f"{r['normal_clean_rate']:.4f}"}
               for r in rows], out / "sweep.csv", columns)
    best = pick_calibration(rows, args.min_clean_rate)
    print(f"best: threshold={best['threshold']} patch_count={best['patch_count']} "
          f"mean_dice={best['mean_dice']:.4f} normal_clean_rate={best['normal_clean_rate']:.4f}")
    return 0


def _print_metrics(metrics: dict) -> None:
    m = metrics.get("test") or metrics.get("all")
    if not m:
        return
    for stage in ("stage1", "final", "slice"):
        if stage in m:
            r = m[stage]
            print(f"{stage:>6}: accuracy {_fmt(r['accuracy'])}  sensitivity {_fmt(r['sensitivity'])}  "
                  f"specificity {_fmt(r['specificity'])}  (n={r['n']})")
    if m.get("mean_tp_slice_dice") is not None:
        print(f"  dice: {m['mean_tp_slice_dice']:.4f} over {m['n_tp_slices']} true-positive slices")


# ------------------------------------------------------------------ argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--workers", type=int, help="patient-level worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="dataset directory (manifest.json, template.nii)")
    common.add_argument("--models", help="model directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log stage timings")

    parser = argparse.ArgumentParser(prog="mrtumor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="write a synthetic phantom dataset")
    p.add_argument("--n-normal", type=int, default=80)
    p.add_argument("--n-tumor", type=int, default=80)
    p.add_argument("--noise", type=float, default=0.03, help="noise sigma")
    p.add_argument("--contrast-min", type=float, default=0.3)
    p.add_argument("--contrast-max", type=float, default=0.5)
    p.add_argument("--max-shift", type=int, default=0, help="max in-plane misplacement in voxels")
    p.set_defaults(func=cmd_phantom)

    for name, func, text in (
        ("train", cmd_train, "fit the SVM and forest on the training split"),
        ("classify", cmd_classify, "stage-1 patient labels to classify.csv"),
        ("segment", cmd_segment, "slice selection and segmentation: overlays, masks, reports"),
        ("evaluate", cmd_evaluate, "score segment outputs against ground truth"),
        ("pipeline", cmd_pipeline, "train, classify, segment and evaluate in one run"),
        ("sweep", cmd_sweep, "calibrate segmentation threshold and patch count"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--no-register", action="store_true", help="skip rigid registration")
        if name in ("classify", "segment"):
            p.add_argument("--patients", nargs="+", help="restrict to these patient ids")
        if name == "sweep":
            p.add_argument("--thresholds", default="0.1,0.15,0.2,0.25,0.3")
            p.add_argument("--patch-counts", default="2,4,6,8,10")
            p.add_argument("--min-clean-rate", type=float, default=0.95)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except MRTumorError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
