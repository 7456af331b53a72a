import dataclasses

import numpy as np
import pytest

from mrtumor.errors import InvalidSpec
from mrtumor.phantom import PhantomSpec, generate_cohort, generate_patient, template_volume


def test_noise_free_normal_is_exactly_mirror_symmetric():
    spec = PhantomSpec(has_tumor=False, noise_sigma=0.0)
    v, truth = generate_patient(spec, 3)
    assert np.array_equal(v.data, v.data[::-1, :, :])
    assert not truth.has_tumor and not truth.tumor_slices and not truth.masks.any()


def test_same_seed_same_volume():
    a, ta = generate_patient(PhantomSpec(), 42)
    b, tb = generate_patient(PhantomSpec(), 42)
    assert np.array_equal(a.data, b.data) and np.array_equal(ta.masks, tb.masks)


@pytest.mark.parametrize("seed", range(5))
def test_tumor_voxels_exceed_their_mirror(seed):
    sigma = 0.03
    spec = PhantomSpec(tissue=0.4, tumor=0.9, noise_sigma=sigma)
    v, truth = generate_patient(spec, seed)
    assert truth.has_tumor
    mirrored = v.data[::-1, :, :]
    diff = (v.data - mirrored)[truth.masks]
    assert diff.min() >= 0.5 - 6 * sigma


def test_ground_truth_is_consistent_and_one_sided():
    for seed in range(10):
        spec = PhantomSpec(laterality=("left", "right")[seed % 2], n_tumors=1 + seed % 2)
        _, truth = generate_patient(spec, seed)
        nonempty = {k for k in range(truth.masks.shape[2]) if truth.masks[:, :, k].any()}
        assert truth.tumor_slices == nonempty
        assert truth.has_tumor == bool(nonempty)
        # planted in one hemisphere, never touching the mirror of itself
        assert not (truth.masks & truth.masks[::-1]).any()
        # spans at least two contiguous slices inside the trimmed range
        assert len(nonempty) >= 2 and min(nonempty) >= 2 and max(nonempty) <= 13


def test_cohort_counts_and_determinism():
    a = generate_cohort(PhantomSpec(), n_normal=20, n_tumor=20, seed=7)
    assert len(a) == 40
    assert sum(not p.truth.has_tumor for p in a) == 20
    assert all(p.label == int(p.truth.has_tumor) for p in a)
    b = generate_cohort(PhantomSpec(), n_normal=20, n_tumor=20, seed=7)
    assert [p.label for p in a] == [p.label for p in b]
    assert all(np.array_equal(p.truth.masks, q.truth.masks) for p, q in zip(a, b))
    assert all(np.array_equal(p.volume.data, q.volume.data) for p, q in zip(a, b))


def test_different_seeds_differ():
    a = generate_cohort(PhantomSpec(), 2, 2, seed=1)
    b = generate_cohort(PhantomSpec(), 2, 2, seed=2)
    assert any(not np.array_equal(p.volume.data, q.volume.data) for p, q in zip(a, b))


def test_template_is_noise_free_and_symmetric():
    t = template_volume(PhantomSpec(noise_sigma=0.1))
    assert np.array_equal(t.data, t.data[::-1])
    assert np.array_equal(t.data, template_volume(PhantomSpec()).data)


@pytest.mark.parametrize("change", [
    dict(tumor=0.4, tissue=0.45),
    dict(tumor_slice_span=(1, 3)),
    dict(laterality="up"),
    dict(noise_sigma=-0.1),
    dict(n_tumors=3),
    dict(shape=(63, 64, 16)),
])
def test_invalid_specs(change):
    with pytest.raises(InvalidSpec):
        generate_patient(dataclasses.replace(PhantomSpec(), **change), 0)


def test_cohort_needs_both_groups():
    with pytest.raises(InvalidSpec):
        generate_cohort(PhantomSpec(), 0, 5, seed=0)
