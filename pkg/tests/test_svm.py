import json
import warnings

import numpy as np
import pytest

from mrtumor.errors import (
    ConfigInvalid,
    DimensionMismatch,
    InvalidSpec,
    MissingModel,
    NoConvergenceWarning,
    SingleClass,
)
from mrtumor.svm import (
    LinearModel,
    SvmConfig,
    decision_value,
    load_model,
    model_from_dict,
    model_to_dict,
    predict_svm,
    primal_objective,
    save_model,
    train_svm,
)

TWO_POINTS = (np.array([[0.0], [1.0]]), np.array([1, -1]))


def separable_cloud(rng, n=60, d=5, gap=0.5):
    w = rng.normal(size=d)
    w /= np.linalg.norm(w)
    X = rng.normal(size=(n, d))
    y = np.where(X @ w >= 0, 1, -1)
    X += np.outer(y, w) * gap
    return X, y


def test_two_point_problem_closed_form():
    # margin constraints are active at both points: b = 1 and w + b = -1
    m = train_svm(*TWO_POINTS, SvmConfig(C=1e4))
    assert m.converged
    assert m.w[0] == pytest.approx(-2.0, abs=1e-3)
    assert m.b == pytest.approx(1.0, abs=1e-3)


def test_single_class_and_shape_errors():
    with pytest.raises(SingleClass):
        train_svm(np.zeros((3, 2)), np.array([1, 1, 1]))
    with pytest.raises(DimensionMismatch):
        train_svm(np.zeros((3, 2)), np.array([1, -1]))
    with pytest.raises(ValueError):
        train_svm(np.zeros((2, 2)), np.array([1, 0]))


def test_separable_cloud_satisfies_margins(rng):
    X, y = separable_cloud(rng)
    m = train_svm(X, y, SvmConfig(C=1e3))
    assert np.all(y * (X @ m.w + m.b) >= 1 - 1e-6)
    assert np.array_equal(predict_svm(m, X), y)


@pytest.mark.parametrize("seed", range(5))
def test_large_c_separates_training_data(seed):
    X, y = separable_cloud(np.random.default_rng(seed), n=40, d=8, gap=0.2)
    m = train_svm(X, y, SvmConfig(C=1e3))
    assert np.mean(predict_svm(m, X) == y) == 1.0


def test_checkpoints_climb_the_dual_and_close_the_gap(rng):
    X, y = separable_cloud(rng, n=80, d=6, gap=0.05)
    m = train_svm(X, y, SvmConfig(C=1.0, checkpoint_every=5))
    duals = [d for _, d, _ in m.history]
    assert all(b >= a - 1e-12 for a, b in zip(duals, duals[1:]))
    _, dual, primal = m.history[-1]
    assert primal >= dual - 1e-9
    assert primal - dual <= 1e-4 * max(1.0, abs(primal))
    assert primal == pytest.approx(primal_objective(m.w, m.b, X, y.astype(float), 1.0), rel=1e-9)


def test_training_is_bitwise_deterministic(rng):
    X, y = separable_cloud(rng)
    a, b = train_svm(X, y), train_svm(X, y)
    assert np.array_equal(a.w, b.w) and a.b == b.b


def test_scaled_c_gives_identical_predictions():
    X, y = TWO_POINTS
    base = predict_svm(train_svm(X, y, SvmConfig(C=1e3, tol=1e-7)), X)
    for alpha in (0.5, 10.0, 100.0):
        m = train_svm(X, y, SvmConfig(C=alpha * 1e3, tol=alpha * 1e-7))
        assert np.array_equal(predict_svm(m, X), base)


def test_iteration_cap_warns_and_flags(rng):
    X, y = separable_cloud(rng, n=50, gap=0.0)
    with pytest.warns(NoConvergenceWarning):
        m = train_svm(X, y, SvmConfig(C=10.0, max_iter=3))
    assert not m.converged and m.iterations == 3


def test_decision_rule_and_tie():
    m = LinearModel(w=np.array([-2.0]), b=1.0)
    assert decision_value(m, [0.0]) == 1.0 and predict_svm(m, [0.0]) == 1
    assert decision_value(m, [1.0]) == -1.0 and predict_svm(m, [1.0]) == -1
    assert decision_value(m, [0.5]) == 0.0 and predict_svm(m, [0.5]) == 1
    with pytest.raises(DimensionMismatch):
        predict_svm(m, [1.0, 2.0])


def test_model_persistence(tmp_path, rng):
    X, y = separable_cloud(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = train_svm(X, y)
    save_model(m, tmp_path / "svm.json")
    doc = json.loads((tmp_path / "svm.json").read_text())
    assert {"format_version", "dimension", "w", "b", "training_config", "feature_layout_id"} <= set(doc)
    back = load_model(tmp_path / "svm.json")
    assert np.array_equal(back.w, m.w) and back.b == m.b
    with pytest.raises(MissingModel):
        load_model(tmp_path / "none.json")
    bad = model_to_dict(m) | {"feature_layout_id": "other"}
    with pytest.raises(ConfigInvalid):
        model_from_dict(bad)
    with pytest.raises(ConfigInvalid):
        model_from_dict(model_to_dict(m) | {"dimension": 3})


def test_config_validation():
    for cfg in (SvmConfig(C=0), SvmConfig(tol=0), SvmConfig(max_iter=0)):
        with pytest.raises(InvalidSpec):
            train_svm(*TWO_POINTS, cfg)
