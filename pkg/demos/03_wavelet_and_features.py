"""Look at the features the classifiers see and at the Haar wavelet bands.

Both classifiers use 2x2 mean-pooled slices. The approximation band of a
one-level Haar transform is exactly that same pooled image, and the four
bands reconstruct the slice perfectly.
"""
import numpy as np

from mrtumor.dwt import approximation_image, dwt2, idwt2
from mrtumor.features import PATIENT_DIM, patient_features, pool2x2
from mrtumor.phantom import PhantomSpec, generate_patient, template_volume
from mrtumor.preprocess import preprocess_volume

volume, _ = generate_patient(PhantomSpec(), seed=3)
stack, _ = preprocess_volume(volume, template_volume(PhantomSpec()), do_register=False)
s = stack.slices[6]

bands = dwt2(s)
print("band shapes", bands.cA.shape, bands.cH.shape)
print("approximation equals pooling:", np.max(np.abs(bands.cA - pool2x2(s))))
print("reconstruction error:", np.max(np.abs(idwt2(bands) - s)))
print("approximation image keeps the slice size:", approximation_image(s).shape)
print("patient feature vector length", patient_features(stack).shape[0], "=", PATIENT_DIM)
