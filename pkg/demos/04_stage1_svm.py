"""Train the patient-level linear SVM and watch the dual objective climb.

Each patient becomes one 12 288-long pooled vector. Training is a dual
coordinate solver; its checkpoints record dual and primal objective values,
which meet at the optimum.
"""
import numpy as np

from mrtumor.features import patient_matrix
from mrtumor.metrics import ConfusionCounts, accuracy, fmt_percent, sensitivity, specificity
from mrtumor.phantom import PhantomSpec, generate_cohort, template_volume
from mrtumor.pipeline import prepare_patients, split_patients
from mrtumor.svm import SvmConfig, predict_svm, train_svm

patients = generate_cohort(PhantomSpec(), n_normal=30, n_tumor=30, seed=1)
records = prepare_patients(patients, template_volume(PhantomSpec()), do_register=False)
train, test = split_patients([r.patient_id for r in records], [r.label for r in records], 3.0, seed=1)
by_id = {r.patient_id: r for r in records}

def xy(ids):
    rs = [by_id[i] for i in ids]
    return patient_matrix([r.stack for r in rs]), np.array([1 if r.label else -1 for r in rs])

X, y = xy(train)
model = train_svm(X, y, SvmConfig(checkpoint_every=20))
for it, dual, primal in model.history[::max(1, len(model.history) // 5)]:
    print(f"iteration {it:5d}  dual {dual:.6f}  primal {primal:.6f}")

Xt, yt = xy(test)
c = ConfusionCounts.from_labels(predict_svm(model, Xt) == 1, yt == 1)
print("test accuracy", fmt_percent(accuracy(c)), "sensitivity", fmt_percent(sensitivity(c)),
      "specificity", fmt_percent(specificity(c)))
