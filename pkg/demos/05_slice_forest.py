"""Train the slice-level random forest on tumor patients and pick slices.

Every slice of a training tumor patient is labelled from the ground truth.
At prediction time each tree votes and the majority (ties to tumor) decides.
"""
import numpy as np

from mrtumor.features import slice_features
from mrtumor.forest import ForestConfig, select_slices, train_forest
from mrtumor.phantom import PhantomSpec, generate_cohort, template_volume
from mrtumor.pipeline import prepare_patients

patients = generate_cohort(PhantomSpec(), n_normal=5, n_tumor=30, seed=2)
records = [r for r in prepare_patients(patients, template_volume(PhantomSpec()), do_register=False) if r.label]
train, test = records[:22], records[22:]

X = np.vstack([[slice_features(s) for s in r.stack.slices] for r in train])
y = np.concatenate([r.slice_labels() for r in train])
forest = train_forest(X, y, ForestConfig(seed=2))
print(f"{forest.n_trees} trees, out-of-bag accuracy {forest.oob_score:.3f}")

for r in test:
    truth = set(np.nonzero(r.slice_labels())[0].tolist())
    print(r.patient_id, "true", sorted(truth), "selected", sorted(select_slices(forest, r.stack)))
