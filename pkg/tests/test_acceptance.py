"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed as they happen and repeated in the pytest terminal
summary (see ``conftest.py``), so ``pytest tests/test_acceptance.py`` shows
all eight verdicts even with output capture on.
"""
import filecmp
import struct
import time

import mpmath
import numpy as np
import pytest

from mrtumor.cli import main
from mrtumor.config import PipelineConfig
from mrtumor.dwt import dwt2, idwt2
from mrtumor.errors import NiftiError
from mrtumor.features import pool2x2
from mrtumor.forest import CLEAN, TUMOR, ForestConfig, predict_forest, train_forest, tree_votes
from mrtumor.nifti_io import Volume, decode_volume, encode_volume
from mrtumor.phantom import PhantomSpec, generate_cohort, template_volume
from mrtumor.pipeline import normal_clean_rate, run_pipeline
from mrtumor.preprocess import SliceStack, intensity_normalize, ncc, preprocess_volume, trim_slices
from mrtumor.segment import SegConfig, contralateral_mask, make_continuous, patch_filter, segment_patient
from mrtumor.svm import SvmConfig, train_svm

RESULTS: list[str] = []


def verdict(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def benchmark():
    """The 160-patient phantom benchmark run once, single-threaded, with registration on."""
    patients = generate_cohort(PhantomSpec(noise_sigma=0.03), n_normal=80, n_tumor=80, seed=0,
                               contrast_range=(0.3, 0.5))
    start = time.perf_counter()
    run = run_pipeline(patients, template_volume(PhantomSpec()), PipelineConfig(seed=0, workers=1))
    return run, time.perf_counter() - start


def test_criterion_1_end_to_end_benchmark(benchmark):
    run, seconds = benchmark
    m = run.metrics
    acc, spec = m["stage1"]["accuracy"], m["final"]["specificity"]
    verdict(1, "end-to-end phantom benchmark", acc >= 90.0 and spec >= 95.0 and seconds < 120.0,
            f"stage-1 accuracy {acc:.2f}% >= 90, final specificity {spec:.2f}% >= 95, "
            f"runtime {seconds:.1f}s < 120, n_test={m['stage1']['n']}")


def test_criterion_2_slice_selection(benchmark):
    run, _ = benchmark
    sens = run.metrics["slice"]["sensitivity"]
    verdict(2, "forest slice sensitivity", sens >= 75.0,
            f"{sens:.2f}% >= 75 over {run.metrics['slice']['n']} test slices")


def test_criterion_3_segmentation_quality(benchmark):
    run, _ = benchmark
    d = run.metrics["mean_tp_slice_dice"]
    clean = normal_clean_rate(run.records, SegConfig())
    verdict(3, "segmentation quality", d is not None and d >= 0.6 and clean >= 0.95,
            f"mean TP slice Dice {d:.3f} >= 0.6 over {run.metrics['n_tp_slices']} slices, "
            f"normal clean rate {clean:.3f} >= 0.95")


def _ncc_direct(f, g):
    mpmath.mp.dps = 50
    f = [mpmath.mpf(float(v)) for v in f]
    g = [mpmath.mpf(float(v)) for v in g]
    n = len(f)
    mf, mg = mpmath.fsum(f) / n, mpmath.fsum(g) / n
    sf = mpmath.sqrt(mpmath.fsum((a - mf) ** 2 for a in f) / n)
    sg = mpmath.sqrt(mpmath.fsum((b - mg) ** 2 for b in g) / n)
    return float(mpmath.fsum((a - mf) * (b - mg) for a, b in zip(f, g)) / (n * sf * sg))


def _walk(tree, x):
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    c = tree.counts[node]
    return TUMOR if c[TUMOR] >= c[CLEAN] else CLEAN


def test_criterion_4_oracle_equivalences():
    rng = np.random.default_rng(4)
    failures = []

    for _ in range(20):
        s = rng.random((64, 64))
        brute = np.empty((32, 32))
        for i in range(32):
            for j in range(32):
                # block order (i,j), (i+1,j), (i,j+1), (i+1,j+1), matching the pooling sum
                brute[i, j] = (s[2 * i, 2 * j] + s[2 * i + 1, 2 * j] + s[2 * i, 2 * j + 1]
                               + s[2 * i + 1, 2 * j + 1]) / 4.0
        if not np.array_equal(pool2x2(s), brute):
            failures.append("pool2x2")
            break
        if np.max(np.abs(dwt2(s).cA - pool2x2(s))) > 1e-12:
            failures.append("cA")

        mask = rng.random((64, 64)) < 0.3
        kappa = int(rng.integers(1, 17))
        census = np.zeros_like(mask)
        for r in range(0, 64, 4):
            for c in range(0, 64, 4):
                if mask[r:r + 4, c:c + 4].sum() >= kappa:
                    census[r:r + 4, c:c + 4] = mask[r:r + 4, c:c + 4]
        if not np.array_equal(patch_filter(mask, kappa), census):
            failures.append("patch_filter")

    X = rng.random((150, 10))
    y = (X[:, 0] + 0.2 * rng.random(150) > 0.6).astype(int)
    forest = train_forest(X, y, ForestConfig(seed=4))
    votes = tree_votes(forest, X)
    for i in range(150):
        manual = [_walk(t, X[i]) for t in forest.trees]
        expected = TUMOR if 2 * sum(manual) >= forest.n_trees else CLEAN
        if votes[:, i].tolist() != manual or predict_forest(forest, X[i]) != expected:
            failures.append("forest vote")
            break

    worst = 0.0
    for _ in range(20):
        f = rng.random(200)
        g = 0.5 * f + rng.random(200)
        worst = max(worst, abs(ncc(f, g) - _ncc_direct(f, g)))
    if worst > 1e-12:
        failures.append(f"ncc {worst:.2e}")

    verdict(4, "oracle equivalences", not failures,
            "pool2x2, cA, patch_filter, forest vote, NCC all agree" if not failures else ", ".join(failures))


def test_criterion_5_numerical_invariants():
    rng = np.random.default_rng(5)
    failures = []

    recon = max(np.max(np.abs(idwt2(dwt2(s)) - s)) for s in rng.random((1000, 64, 64)))
    if recon > 1e-12:
        failures.append(f"dwt reconstruction {recon:.2e}")

    for _ in range(200):
        f, g = rng.normal(size=50), rng.normal(size=50)
        if not -1.0 <= ncc(f, g) <= 1.0 or abs(ncc(f, f) - 1.0) > 1e-12:
            failures.append("ncc bounds")
            break

    for _ in range(200):
        s = rng.random((64, 64)) * rng.uniform(0.1, 100)
        n = intensity_normalize(s)
        if not np.array_equal(intensity_normalize(n), n) or not np.array_equal(intensity_normalize(4.0 * s), n):
            failures.append("normalize")
            break

    for _ in range(200):
        img = rng.random((64, 64))
        lo, hi = sorted(rng.random(2))
        if (contralateral_mask(img, hi) & ~contralateral_mask(img, lo)).any():
            failures.append("threshold monotonicity")
            break

    template = template_volume(PhantomSpec())
    for p in generate_cohort(PhantomSpec(), n_normal=50, n_tumor=50, seed=55):
        stack = preprocess_volume(p.volume, template, p.patient_id, do_register=False)[0]
        flipped = SliceStack(stack.slices[:, :, ::-1].copy(), p.patient_id)
        chosen = {k - 2 for k in p.truth.tumor_slices} or {3, 4, 5}
        a = segment_patient(stack, chosen).mask_array()
        b = segment_patient(flipped, chosen).mask_array()
        if not np.array_equal(b, a[:, :, ::-1]):
            failures.append(f"mirror equivariance {p.patient_id}")
            break

    verdict(5, "numerical invariants", not failures,
            f"DWT max error {recon:.1e} on 1000 slices; NCC, normalize, threshold, mirror checks"
            if not failures else ", ".join(failures))


def test_criterion_6_micro_oracles():
    m = train_svm(np.array([[0.0], [1.0]]), np.array([1, -1]), SvmConfig(C=1e4))
    svm_ok = abs(m.w[0] + 2.0) <= 1e-3 and abs(m.b - 1.0) <= 1e-3
    cont_ok = make_continuous({6, 7, 11, 12}) == set(range(6, 13))
    grid = np.arange(64 * 64 * 16, dtype=np.float64).reshape(64, 64, 16)
    trimmed = trim_slices(grid)
    trim_ok = trimmed.shape == (64, 64, 12) and np.array_equal(trimmed, grid[:, :, 2:14])
    verdict(6, "micro-oracles", svm_ok and cont_ok and trim_ok,
            f"svm (w, b) = ({m.w[0]:.5f}, {m.b:.5f}), make_continuous {cont_ok}, trim 2..13 {trim_ok}")


def test_criterion_7_format_robustness():
    rng = np.random.default_rng(7)
    exact = True
    for _ in range(50):
        data = rng.normal(size=tuple(rng.integers(1, 20, size=3))).astype(np.float32)
        back = decode_volume(encode_volume(Volume.from_array(data)))
        exact &= back.data.astype(np.float32).tobytes() == data.tobytes()

    base = bytearray(encode_volume(Volume.from_array(rng.random((4, 4, 3)))))
    crashes, typed = [], 0
    for i in range(10_000):
        buf = bytearray(base)
        if i % 3 == 0:
            for pos in rng.integers(0, 352, size=rng.integers(1, 9)):
                buf[pos] = int(rng.integers(256))
        elif i % 3 == 1:
            buf[:348] = rng.integers(0, 256, size=348, dtype=np.uint8).tobytes()
            buf[344:348] = b"n+1\x00"
        else:
            buf[40:56] = struct.pack("<8h", *rng.integers(-3, 9, size=8))
            buf = buf[: int(rng.integers(0, len(buf) + 1))]
        try:
            decode_volume(bytes(buf))
        except NiftiError:
            typed += 1
        except Exception as exc:  # noqa: BLE001 - anything untyped is a crash
            crashes.append(type(exc).__name__)
    verdict(7, "format robustness", exact and not crashes,
            f"float32 round-trip exact {exact}; 10000 fuzzed headers, {typed} typed errors, "
            f"{len(crashes)} crashes")


def test_criterion_8_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["phantom", "--out", str(data), "--n-normal", "16", "--n-tumor", "16", "--seed", "8"]) == 0
    for workers in (1, 2):
        run = tmp_path / f"w{workers}"
        assert main(["pipeline", "--data", str(data), "--models", str(run / "models"),
                     "--out", str(run / "out"), "--seed", "8", "--workers", str(workers)]) == 0

    def reports(root):
        return sorted(p.relative_to(root) for p in root.rglob("*") if p.suffix in (".csv", ".json"))

    a, b = tmp_path / "w1", tmp_path / "w2"
    names = reports(a)
    same = names == reports(b) and all(filecmp.cmp(a / n, b / n, shallow=False) for n in names)
    verdict(8, "determinism across worker counts", same and len(names) > 0,
            f"{len(names)} CSV/JSON files compared byte for byte")
