"""On-disk layout of a phantom dataset and of pipeline outputs.

Dataset directory::

    manifest.json           patients, labels, tumor slices (volume indices)
    template.nii            noise-free registration target
    volumes/<id>.nii        float32 intensities
    masks/<id>_mask.nii     uint8 ground truth (0/1)
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, MissingTemplate
from .nifti_io import Volume, read_volume, write_volume
from .phantom import GroundTruth, Patient, PhantomSpec

MANIFEST = "manifest.json"
TEMPLATE = "template.nii"
MANIFEST_VERSION = 1
LABEL_NAMES = {0: "normal", 1: "tumor"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}


def dump_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def write_csv(rows: list[dict], path, columns: list[str]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_dataset(patients: list[Patient], template: Volume, out_dir, spec: PhantomSpec | None = None,
                  seed: int | None = None) -> Path:
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    write_volume(template, out / TEMPLATE)
    entries = []
    for p in patients:
        vol_rel = f"volumes/{p.patient_id}.nii"
        mask_rel = f"masks/{p.patient_id}_mask.nii"
        write_volume(p.volume, out / vol_rel)
        mask = Volume.from_array(p.truth.masks.astype(np.uint8), pixdim=p.volume.header.pixdim,
                                 datatype="uint8", descrip="tumor ground truth")
        write_volume(mask, out / mask_rel)
        entries.append({
            "id": p.patient_id,
            "label": LABEL_NAMES[p.label],
            "tumor_slices": sorted(p.truth.tumor_slices),
            "volume": vol_rel,
            "mask": mask_rel,
        })
    doc = {"format_version": MANIFEST_VERSION, "template": TEMPLATE, "patients": entries}
    if spec is not None:
        doc["phantom_spec"] = asdict(spec)
    if seed is not None:
        doc["seed"] = seed
    dump_json(doc, out / MANIFEST)
    return out


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    if not path.is_file():
        raise ConfigInvalid(f"data_dir has no manifest: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ConfigInvalid(f"{path}: unsupported manifest version {doc.get('format_version')}")
    ids = [e["id"] for e in doc["patients"]]
    if len(set(ids)) != len(ids):
        raise ConfigInvalid(f"{path}: duplicate patient ids")
    return doc


def load_template(path) -> Volume:
    p = Path(path)
    if not p.is_file():
        raise MissingTemplate(f"registration template not found: {p}")
    return read_volume(p)


def load_patients(data_dir, ids=None) -> list[Patient]:
    """Patients listed in the manifest (optionally restricted to ``ids``), in manifest order."""
    root = Path(data_dir)
    doc = read_manifest(root)
    wanted = None if ids is None else set(ids)
    if wanted is not None:
        unknown = wanted - {e["id"] for e in doc["patients"]}
        if unknown:
            raise ConfigInvalid(f"unknown patient id(s): {', '.join(sorted(unknown))}")
    patients = []
    for e in doc["patients"]:
        if wanted is not None and e["id"] not in wanted:
            continue
        volume = read_volume(root / e["volume"])
        truth = None
        if e.get("mask"):
            masks = read_volume(root / e["mask"]).data > 0
            slices = frozenset(int(k) for k in np.nonzero(masks.any(axis=(0, 1)))[0])
            truth = GroundTruth(bool(slices), slices, masks)
        label = LABEL_CODES.get(e.get("label"))
        patients.append(Patient(e["id"], volume, truth, label))
    return patients
