"""SVM heads trained on frozen CNN embeddings.

Linear: hinge-loss subgradient descent on the augmented-bias formulation.
RBF: simplified SMO driven to a KKT tolerance of 1e-3 or an iteration cap.
Labels are +1 / -1; a decision value of exactly zero maps to +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KKT_TOL = 1e-3


@dataclass
class SvmModel:
    kind: str  # "linear" | "rbf"
    c: float
    weights: np.ndarray | None = None  # linear
    bias: float = 0.0
    support_vectors: np.ndarray | None = None  # rbf
    dual_coefs: np.ndarray | None = None  # alpha_i * y_i, within [-C, C]
    gamma: float | None = None
    extra: dict = field(default_factory=dict)


def _check_two_classes(y: np.ndarray) -> None:
    if len(np.unique(y)) < 2:
        raise ValueError("SVM training needs at least one example of each class")


def train_svm_linear(
    embeddings: np.ndarray,
    labels: np.ndarray,
    c: float = 1.0,
    epochs: int = 200,
    seed: int = 0,
) -> SvmModel:
    """Per-sample hinge subgradient descent with seeded shuffling.

    Uses the standard 1/(lambda*t) step on features augmented with a constant
    coordinate, so the bias is learned jointly (and lightly regularized).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("embeddings must be (n, d) with one label per row")
    _check_two_classes(y)
    if c <= 0:
        raise ValueError("C must be positive")

    n = len(x)
    aug = np.hstack([x, np.ones((n, 1))])
    lam = 1.0 / (c * n)
    w = np.zeros(aug.shape[1])
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            if y[i] * (w @ aug[i]) < 1.0:
                w = (1.0 - eta * lam) * w + (eta / n) * y[i] * aug[i]
            else:
                w = (1.0 - eta * lam) * w
    return SvmModel(kind="linear", c=c, weights=w[:-1].copy(), bias=float(w[-1]))


def _rbf_kernel_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        np.sum(a**2, axis=1)[:, None]
        + np.sum(b**2, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def train_svm_rbf(
    embeddings: np.ndarray,
    labels: np.ndarray,
    c: float = 1.0,
    gamma: float | None = None,
    tol: float = KKT_TOL,
    max_passes: int = 10,
    max_iter: int = 20000,
    seed: int = 0,
) -> SvmModel:
    """Simplified SMO (random-second-choice pair updates, seeded).

    gamma of None uses 1 / (d * var(X)). Stops after max_passes full sweeps
    without an update (KKT satisfied within tol) or at the iteration cap.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("embeddings must be (n, d) with one label per row")
    _check_two_classes(y)
    if c <= 0:
        raise ValueError("C must be positive")
    if gamma is None:
        var = x.var()
        gamma = 1.0 / (x.shape[1] * var) if var > 0 else 1.0
    if gamma <= 0:
        raise ValueError("gamma must be positive")

    n = len(x)
    k = _rbf_kernel_matrix(x, x, gamma)
    alpha = np.zeros(n)
    b = 0.0
    rng = np.random.default_rng(seed)

    passes = 0
    iters = 0
    while passes < max_passes and iters < max_iter:
        changed = 0
        for i in range(n):
            f_i = (alpha * y) @ k[:, i] + b
            e_i = f_i - y[i]
            if (y[i] * e_i < -tol and alpha[i] < c) or (y[i] * e_i > tol and alpha[i] > 0):
                j = int(rng.integers(n - 1))
                if j >= i:
                    j += 1
                f_j = (alpha * y) @ k[:, j] + b
                e_j = f_j - y[j]
                a_i_old, a_j_old = alpha[i], alpha[j]
                if y[i] != y[j]:
                    lo = max(0.0, a_j_old - a_i_old)
                    hi = min(c, c + a_j_old - a_i_old)
                else:
                    lo = max(0.0, a_i_old + a_j_old - c)
                    hi = min(c, a_i_old + a_j_old)
                if lo == hi:
                    continue
                eta = 2.0 * k[i, j] - k[i, i] - k[j, j]
                if eta >= 0:
                    continue
                a_j = a_j_old - y[j] * (e_i - e_j) / eta
                a_j = min(hi, max(lo, a_j))
                if abs(a_j - a_j_old) < 1e-7:
                    continue
                a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j)
                alpha[i], alpha[j] = a_i, a_j
                b1 = b - e_i - y[i] * (a_i - a_i_old) * k[i, i] - y[j] * (a_j - a_j_old) * k[i, j]
                b2 = b - e_j - y[i] * (a_i - a_i_old) * k[i, j] - y[j] * (a_j - a_j_old) * k[j, j]
                if 0.0 < a_i < c:
                    b = b1
                elif 0.0 < a_j < c:
                    b = b2
                else:
                    b = (b1 + b2) / 2.0
                changed += 1
        passes = passes + 1 if changed == 0 else 0
        iters += 1

    keep = alpha > 1e-10
    return SvmModel(
        kind="rbf",
        c=c,
        bias=float(b),
        support_vectors=x[keep].copy(),
        dual_coefs=(alpha[keep] * y[keep]).copy(),
        gamma=float(gamma),
        extra={"n_support": int(keep.sum()), "sweeps": iters},
    )


def svm_decision(model: SvmModel, embedding: np.ndarray) -> float:
    """Signed decision value for a single embedding."""
    return float(svm_decision_batch(model, np.asarray(embedding, dtype=np.float64)[None])[0])


def svm_decision_batch(model: SvmModel, embeddings: np.ndarray) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if model.kind == "linear":
        if x.shape[1] != model.weights.shape[0]:
            raise ValueError(
                f"embedding dimension {x.shape[1]} does not match model ({model.weights.shape[0]})"
            )
        return x @ model.weights + model.bias
    if model.support_vectors.size == 0:
        return np.full(len(x), model.bias)
    if x.shape[1] != model.support_vectors.shape[1]:
        raise ValueError(
            f"embedding dimension {x.shape[1]} does not match model "
            f"({model.support_vectors.shape[1]})"
        )
    k = _rbf_kernel_matrix(x, model.support_vectors, model.gamma)
    return k @ model.dual_coefs + model.bias


def svm_predict(model: SvmModel, embedding: np.ndarray) -> int:
    """+1 when the decision value is >= 0 (zero counts as positive), else -1."""
    return 1 if svm_decision(model, embedding) >= 0.0 else -1
