"""Linear SVM on log-Euclidean features.

One-vs-rest L2-regularized L2-loss SVM solved in the dual by coordinate
descent (box [0, inf), diagonal shift 1/(2C)), terminating when the
largest projected-gradient violation drops below the tolerance. No bias
term. Deterministic for a given seed: the coordinate order is a seeded
permutation per pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ParseError
from .optim import load_checkpoint, save_checkpoint

MULTICLASS_SCHEMES = ("ovr",)


@dataclass
class SvmModel:
    class_ids: np.ndarray  # (n_classes,) sorted ascending
    weights: np.ndarray  # (n_classes, dim)
    c: float
    tol: float

    @property
    def n_classes(self) -> int:
        return self.class_ids.shape[0]


def _dual_cd(x: np.ndarray, y_bin: np.ndarray, c: float, tol: float, rng,
             max_passes: int):
    """Dual coordinate descent for one binary L2-loss sub-problem.

    Returns (w, alpha, per-pass dual objectives). The dual objective is
    0.5 ||w||^2 + (1/(4C)) sum alpha^2 - sum alpha and never increases.
    """
    n, dim = x.shape
    shift = 1.0 / (2.0 * c)
    q_diag = np.einsum("ij,ij->i", x, x) + shift
    alpha = np.zeros(n)
    w = np.zeros(dim)
    objectives = []
    for _ in range(max_passes):
        worst = 0.0
        for i in rng.permutation(n):
            grad = y_bin[i] * (w @ x[i]) - 1.0 + shift * alpha[i]
            projected = grad if alpha[i] > 0.0 else min(grad, 0.0)
            worst = max(worst, abs(projected))
            if projected != 0.0:
                new_alpha = max(alpha[i] - grad / q_diag[i], 0.0)
                if new_alpha != alpha[i]:
                    w += (new_alpha - alpha[i]) * y_bin[i] * x[i]
                    alpha[i] = new_alpha
        objectives.append(0.5 * (w @ w) + 0.5 * shift * (alpha @ alpha) - alpha.sum())
        if worst <= tol:
            break
    return w, alpha, objectives


def svm_train(x: np.ndarray, y: np.ndarray, c: float = 1.0, tol: float = 0.1,
              seed: int = 0, max_passes: int = 1000, scheme: str = "ovr") -> SvmModel:
    """Train one-vs-rest weight vectors over the observed classes."""
    if scheme not in MULTICLASS_SCHEMES:
        raise InvalidInput(f"multiclass scheme must be one of {MULTICLASS_SCHEMES}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInput(f"need at least 2 samples of equal dim, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise InvalidInput(f"labels of shape {y.shape} do not match {x.shape[0]} samples")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("features contain non-finite values")
    class_ids = np.unique(y)
    if class_ids.shape[0] < 2:
        raise InvalidInput("need at least 2 distinct classes")
    weights = np.zeros((class_ids.shape[0], x.shape[1]))
    seeds = np.random.SeedSequence(seed).generate_state(class_ids.shape[0])
    for k, cls in enumerate(class_ids):
        y_bin = np.where(y == cls, 1.0, -1.0)
        rng = np.random.default_rng(seeds[k])
        weights[k], _, _ = _dual_cd(x, y_bin, c, tol, rng, max_passes)
    return SvmModel(class_ids=class_ids.astype(np.int64), weights=weights, c=c, tol=tol)


def svm_decision(model: SvmModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.weights.shape[1]:
        raise InvalidInput(
            f"feature dim {x.shape[-1]} does not match model dim {model.weights.shape[1]}"
        )
    return x @ model.weights.T


def svm_predict(model: SvmModel, x: np.ndarray) -> int:
    """Predicted class id: argmax of the decision values, ties to the
    smallest class id."""
    scores = svm_decision(model, x)
    if scores.ndim != 1:
        raise InvalidInput("svm_predict takes a single feature vector")
    return int(model.class_ids[int(np.argmax(scores))])


def svm_predict_batch(model: SvmModel, x: np.ndarray) -> np.ndarray:
    scores = svm_decision(model, np.atleast_2d(x))
    return model.class_ids[np.argmax(scores, axis=1)]


def svm_accuracy(model: SvmModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(svm_predict_batch(model, x) == np.asarray(y)))


# ---------------------------------------------------------------------------
# file formats


def save_features(path, labels, feats) -> None:
    """One sample per line: label then the feature values, space separated."""
    feats = np.asarray(feats, dtype=np.float64)
    with open(path, "w") as fh:
        for label, row in zip(labels, feats):
            fh.write(str(int(label)))
            for v in row:
                fh.write(f" {v:.17g}")
            fh.write("\n")


def load_features(path):
    """Read a feature file back into (labels, features)."""
    labels = []
    rows = []
    dim = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                labels.append(int(tokens[0]))
                row = np.array([float(t) for t in tokens[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad feature line ({exc})") from exc
            if dim is None:
                dim = row.shape[0]
            elif row.shape[0] != dim:
                raise ParseError(
                    f"{path}:{lineno}: expected {dim} features, got {row.shape[0]}"
                )
            rows.append(row)
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 0))
    return np.array(labels, dtype=np.int64), np.stack(rows)


def save_svm_model(path, model: SvmModel) -> None:
    save_checkpoint(path, {
        "class_ids": model.class_ids.astype(np.float64),
        "weights": model.weights,
        "c": np.array(model.c),
        "tol": np.array(model.tol),
    })


def load_svm_model(path) -> SvmModel:
    tensors = load_checkpoint(path)
    return SvmModel(
        class_ids=tensors["class_ids"].astype(np.int64),
        weights=tensors["weights"],
        c=float(tensors["c"]),
        tol=float(tensors["tol"]),
    )
