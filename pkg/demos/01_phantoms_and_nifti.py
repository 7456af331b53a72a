"""Build a synthetic patient, write it as NIfTI-1 and read it back.

A phantom is a symmetric ellipsoidal brain with a skull ring, plus (for tumor
patients) one or two bright blobs confined to a single hemisphere. The
ground-truth mask travels alongside the volume.
"""
import tempfile
from pathlib import Path

import numpy as np

from mrtumor.nifti_io import read_volume, write_volume
from mrtumor.phantom import PhantomSpec, generate_patient

volume, truth = generate_patient(PhantomSpec(tissue=0.45, tumor=0.85, laterality="left"), seed=11)
print("volume shape", volume.shape, "voxel spacing", volume.header.pixdim)
print("tumor on slices", sorted(truth.tumor_slices), "with", int(truth.masks.sum()), "voxels")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "patient.nii"
    write_volume(volume, path)
    back = read_volume(path)
    print("file size", path.stat().st_size, "bytes; round trip exact:", np.array_equal(back.data, volume.data))

# the brain is mirror-symmetric except for the tumor, which is what stage three exploits
k = sorted(truth.tumor_slices)[0]
img = volume.data[:, :, k].T
print("mean left-right difference inside the tumor:",
      round(float((img - img[:, ::-1])[truth.masks[:, :, k].T].mean()), 3))
