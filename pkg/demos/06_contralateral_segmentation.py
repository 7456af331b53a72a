"""Segment a tumor by comparing each slice with its left-right mirror.

Pixels brighter than their mirror by more than the threshold are flagged,
4x4 tiles with too few flags are cleared, and the slice set is cleaned up
(neighbor check, stray removal, gap filling) before contours are drawn.
"""
from mrtumor.metrics import dice
from mrtumor.phantom import PhantomSpec, generate_patient, template_volume
from mrtumor.preprocess import preprocess_volume
from mrtumor.segment import SegConfig, segment_patient

template = template_volume(PhantomSpec())
volume, truth = generate_patient(PhantomSpec(tissue=0.45, tumor=0.8), seed=21)
stack, _ = preprocess_volume(volume, template, do_register=False)
true_slices = {k - 2 for k in truth.tumor_slices}  # volume slice k is stack slice k - 2

# pretend the forest found only one slice plus one far-away false alarm
seg = segment_patient(stack, {min(true_slices), 0}, SegConfig())
print("segmented slices", sorted(seg.slices), "true slices", sorted(true_slices))
for k in sorted(true_slices):
    print(f"slice {k}: Dice {dice(seg.masks[k].mask, truth.masks[:, :, k + 2].T):.3f}, "
          f"{len(seg.contours[k].pixels)} contour pixels")

normal, _ = generate_patient(PhantomSpec(has_tumor=False), seed=21)
nstack, _ = preprocess_volume(normal, template, do_register=False)
print("normal patient flagged anything:", segment_patient(nstack, set(range(12))).has_tumor)
