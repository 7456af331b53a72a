"""Linear soft-margin SVM for the patient-level gate.

Training solves the dual of

    min_{w,b}  1/2 ||w||^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))

with sequential minimal optimisation (two multipliers per step, second-order
working-set selection) on the linear Gram matrix.  The bias is left
unregularised.  Work is O(n^2) memory in the number of training rows, which is
the patient count here, not the feature dimension.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    InvalidSpec,
    MissingModel,
    NoConvergenceWarning,
    SingleClass,
)
from .features import FEATURE_LAYOUT_ID

FORMAT_VERSION = 1
_TAU = 1e-12


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    max_iter: int = 100_000
    tol: float = 1e-7
    checkpoint_every: int = 50

    def validate(self) -> None:
        if not self.C > 0:
            raise InvalidSpec(f"C must be > 0, got {self.C}")
        if not self.tol > 0:
            raise InvalidSpec(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise InvalidSpec("max_iter must be >= 1")


@dataclass
class LinearModel:
    w: np.ndarray
    b: float
    converged: bool = True
    iterations: int = 0
    config: SvmConfig = field(default_factory=SvmConfig)
    # (iteration, dual objective, primal objective) at each checkpoint
    history: list[tuple[int, float, float]] = field(default_factory=list, repr=False)

    @property
    def dimension(self) -> int:
        return int(self.w.shape[0])


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-D, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape} labels")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be +1 / -1")
    if np.unique(y).size < 2:
        raise SingleClass("training needs both +1 and -1 labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix has non-finite entries")
    return X, y.astype(np.float64)


def primal_objective(w, b, X, y, C) -> float:
    margins = y * (X @ w + b)
    return float(0.5 * w @ w + C * np.maximum(0.0, 1.0 - margins).sum())


def _bias(alpha, grad, y, C):
    yg = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yg[free].mean())
    # no free multiplier: any b between the active bounds is optimal
    up_only = ((y > 0) & (alpha <= 0)) | ((y < 0) & (alpha >= C))
    low_only = ((y > 0) & (alpha >= C)) | ((y < 0) & (alpha <= 0))
    lo = yg[up_only].max() if up_only.any() else yg.min()
    hi = yg[low_only].min() if low_only.any() else yg.max()
    return float((lo + hi) / 2.0)


def train_svm(X, y, cfg: SvmConfig = SvmConfig()) -> LinearModel:
    cfg.validate()
    X, y = _check_xy(X, y)
    n = X.shape[0]
    C = cfg.C
    K = X @ X.T
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - e'a with Q = yy' * K
    history = []

    def record(it):
        w = X.T @ (alpha * y)
        b = _bias(alpha, grad, y, C)
        dual = float(alpha.sum() - 0.5 * (alpha * y) @ K @ (alpha * y))
        history.append((it, dual, primal_objective(w, b, X, y, C)))

    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        m_up = yg[i]
        m_low = np.min(np.where(low, yg, np.inf))
        if m_up - m_low < cfg.tol:
            converged = True
            break
        # second-order choice of j among violators
        b_it = m_up - yg
        a_it = diag[i] + diag - 2.0 * K[i]
        a_it = np.where(a_it > 0, a_it, _TAU)
        gain = np.where(low & (yg < m_up), b_it**2 / a_it, -np.inf)
        j = int(np.argmax(gain))
        delta = b_it[j] / a_it[j]
        # box limits for alpha_i += y_i d, alpha_j -= y_j d
        lim_i = C - alpha[i] if y[i] > 0 else alpha[i]
        lim_j = alpha[j] if y[j] > 0 else C - alpha[j]
        delta = min(delta, lim_i, lim_j)
        alpha[i] += y[i] * delta
        alpha[j] -= y[j] * delta
        for k in (i, j):
            if alpha[k] < 1e-12 * C:
                alpha[k] = 0.0
            elif alpha[k] > C * (1 - 1e-12):
                alpha[k] = C
        grad += delta * y * (K[:, i] - K[:, j])
        if it % cfg.checkpoint_every == 0:
            record(it)

    record(it)
    if not converged:
        warnings.warn(
            f"SVM did not reach tol={cfg.tol} in {cfg.max_iter} iterations",
            NoConvergenceWarning,
            stacklevel=2,
        )
    w = X.T @ (alpha * y)
    return LinearModel(
        w=w,
        b=_bias(alpha, grad, y, C),
        converged=converged,
        iterations=it,
        config=cfg,
        history=history,
    )


def decision_value(m: LinearModel, x) -> float | np.ndarray:
    """``w . x + b`` for one vector or each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.dimension:
        raise DimensionMismatch(f"model expects {m.dimension} features, got {x.shape[-1]}")
    out = x @ m.w + m.b
    return float(out) if np.ndim(out) == 0 else out


def predict_svm(m: LinearModel, x) -> int | np.ndarray:
    """+1 (tumor) or -1 (normal); a point on the hyperplane counts as +1."""
    d = decision_value(m, x)
    if np.ndim(d) == 0:
        return 1 if d >= 0 else -1
    return np.where(d >= 0, 1, -1)


def model_to_dict(m: LinearModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "linear_svm",
        "dimension": m.dimension,
        "w": [float(v) for v in m.w],
        "b": float(m.b),
        "converged": m.converged,
        "iterations": m.iterations,
        "training_config": asdict(m.config),
        "feature_layout_id": FEATURE_LAYOUT_ID,
    }


def model_from_dict(doc: dict) -> LinearModel:
    if doc.get("kind") != "linear_svm" or doc.get("format_version") != FORMAT_VERSION:
        raise ConfigInvalid(f"not a version-{FORMAT_VERSION} linear_svm document")
    w = np.asarray(doc["w"], dtype=np.float64)
    if w.shape != (doc["dimension"],):
        raise ConfigInvalid("weight vector length disagrees with 'dimension'")
    if doc.get("feature_layout_id") != FEATURE_LAYOUT_ID:
        raise ConfigInvalid(f"feature layout {doc.get('feature_layout_id')!r} is not {FEATURE_LAYOUT_ID!r}")
    return LinearModel(
        w=w,
        b=float(doc["b"]),
        converged=bool(doc.get("converged", True)),
        iterations=int(doc.get("iterations", 0)),
        config=SvmConfig(**doc.get("training_config", {})),
    )


def save_model(m: LinearModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m), indent=1) + "\n")


def load_model(path) -> LinearModel:
    p = Path(path)
    if not p.is_file():
        raise MissingModel(f"SVM model not found: {p}")
    return model_from_dict(json.loads(p.read_text()))
