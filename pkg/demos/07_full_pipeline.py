"""Run all three stages on a phantom cohort and report test-split rates.

Stage-1 false positives that produce no segmented region are relabelled
normal, which is why final specificity can exceed stage-1 specificity.
"""
from mrtumor.config import PipelineConfig
from mrtumor.phantom import PhantomSpec, generate_cohort, template_volume
from mrtumor.pipeline import run_pipeline

patients = generate_cohort(PhantomSpec(), n_normal=40, n_tumor=40, seed=3)
run = run_pipeline(patients, template_volume(PhantomSpec()), PipelineConfig(seed=3))
for stage in ("stage1", "final", "slice"):
    m = run.metrics[stage]
    print(f"{stage:6s} n={m['n']:4d}  accuracy {m['accuracy']:.2f}%  "
          f"sensitivity {m['sensitivity']:.2f}%  specificity {m['specificity']:.2f}%")
print(f"mean Dice on true-positive slices: {run.metrics['mean_tp_slice_dice']:.3f}")
