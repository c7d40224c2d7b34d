"""Linear readout: ridge regression on harvested states, winner-takes-all decisions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.linalg import blas

N_CLASSES = 10
DEFAULT_LAMBDA_GRID = (0.0,) + tuple(10.0**k for k in range(-8, 3))


class SingularNormalMatrixError(np.linalg.LinAlgError):
    """``X X^T + lambda I`` is not positive definite."""


def one_hot(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    """Target matrix ``(n_classes, N)`` with a single 1 per column."""
    labels = np.asarray(labels, dtype=np.int64)
    Y = np.zeros((n_classes, labels.size))
    Y[labels, np.arange(labels.size)] = 1.0
    return Y


def add_bias(X: np.ndarray) -> np.ndarray:
    """Append a constant row of ones to a ``(D, N)`` state matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        return np.append(X, 1.0)
    return np.vstack([X, np.ones((1, X.shape[1]))])


def _restore_lower(a: np.ndarray, diag: np.ndarray, block: int = 1024) -> None:
    # ``a`` is Fortran-ordered; its strict upper triangle still holds the
    # original matrix after an in-place lower Cholesky.
    d = a.shape[0]
    for c0 in range(0, d, block):
        c1 = min(d, c0 + block)
        a[c1:, c0:c1] = a[c0:c1, c1:].T
        blk = a[c0:c1, c0:c1]
        upper = np.triu(blk, 1)
        blk[...] = upper + upper.T
        blk[np.diag_indices(c1 - c0)] = diag[c0:c1]


def _mirror_upper(g: np.ndarray, block: int = 1024) -> None:
    """Copy the strict upper triangle of C-ordered ``g`` onto its lower one, in place."""
    d = g.shape[0]
    for r0 in range(0, d, block):
        r1 = min(d, r0 + block)
        g[r1:, r0:r1] = g[r0:r1, r1:].T
        blk = g[r0:r1, r0:r1]
        il = np.tril_indices(r1 - r0, -1)
        blk[il] = blk.T[il]


def solve_ridge(gram: np.ndarray, cross: np.ndarray, lam: float, inplace: bool = False) -> np.ndarray:
    """Solve ``W (G + lam I) = C`` for ``W`` by Cholesky factorization.

    ``gram`` is ``X X^T`` (D x D) and ``cross`` is ``Y X^T`` (m x D). With
    ``inplace=True`` the factorization reuses ``gram``'s memory and the
    matrix is restored before returning; only worth it for very large D.
    """
    if lam < 0:
        raise ValueError(f"ridge parameter must be non-negative, got {lam}")
    d = gram.shape[0]
    if gram.shape != (d, d) or cross.shape[1] != d:
        raise ValueError(f"gram {gram.shape} and cross {cross.shape} disagree")
    if inplace:
        if not gram.flags.c_contiguous:
            raise ValueError("in-place solve needs a C-contiguous gram matrix")
        a = gram.T  # Fortran view of the same (symmetric) buffer
        diag = np.diagonal(gram).copy()
        a[np.diag_indices(d)] += lam
    else:
        a = np.array(gram, dtype=np.float64, order="F")
        a[np.diag_indices(d)] += lam
    try:
        try:
            factor = sla.cho_factor(a, lower=True, overwrite_a=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularNormalMatrixError(
                f"normal matrix is not positive definite at lambda={lam}; "
                "use lambda > 0") from exc
        pivots = np.abs(np.diagonal(factor[0]))
        if lam == 0 and pivots.min() <= math.sqrt(d * np.finfo(float).eps) * pivots.max():
            raise SingularNormalMatrixError(
                "normal matrix is singular at lambda=0 (rank-deficient states); use lambda > 0")
        return sla.cho_solve(factor, np.asarray(cross, dtype=np.float64).T,
                             check_finite=False).T
    finally:
        if inplace:
            _restore_lower(a, diag)


def ridge_fit(X, Y, lam: float) -> np.ndarray:
    """Ridge readout ``Y X^T (X X^T + lam I)^-1``; ``X`` already carries any bias row."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"X has {X.shape[1]} columns but Y has {Y.shape[1]}")
    return solve_ridge(X @ X.T, Y @ X.T, lam)


class RidgeAccumulator:
    """Streams ``X X^T`` and ``Y X^T`` over column blocks of the state matrix.

    Partial accumulators over disjoint blocks add up to the full statistics,
    so blocks may be processed by separate workers and merged with ``+``.
    """

    def __init__(self, dim: int, n_classes: int = N_CLASSES, bias: bool = True):
        self.bias = bias
        self.dim = dim + (1 if bias else 0)
        self.n_classes = n_classes
        self._gram = np.zeros((self.dim, self.dim))
        self._half = False  # only the upper triangle of _gram is current
        self.cross = np.zeros((n_classes, self.dim))
        self.count = 0

    @property
    def gram(self) -> np.ndarray:
        """Full symmetric ``X X^T`` (the lower triangle is filled in on first access)."""
        if self._half:
            _mirror_upper(self._gram)
            self._half = False
        return self._gram

    @gram.setter
    def gram(self, value: np.ndarray) -> None:
        self._gram = np.ascontiguousarray(value, dtype=np.float64)
        self._half = False

    def add(self, X: np.ndarray, labels) -> None:
        Xb = add_bias(X) if self.bias else np.asarray(X, dtype=np.float64)
        if Xb.shape[0] != self.dim:
            raise ValueError(f"block has {Xb.shape[0]} rows, accumulator expects {self.dim}")
        Xb = np.ascontiguousarray(Xb)
        # rank-k update straight into the accumulator: no D x D temporary, half the flops.
        # Through the Fortran view, BLAS "lower" is the upper triangle of the C-ordered matrix.
        blas.dsyrk(1.0, Xb.T, beta=1.0, c=self._gram.T, trans=1, lower=1, overwrite_c=1)
        self._half = True
        self.cross += one_hot(labels, self.n_classes) @ Xb.T
        self.count += Xb.shape[1]

    def __iadd__(self, other: "RidgeAccumulator") -> "RidgeAccumulator":
        if other.dim != self.dim or other.bias != self.bias:
            raise ValueError("cannot merge accumulators of different shapes")
        self.gram += other.gram
        self.cross += other.cross
        self.count += other.count
        return self

    def copy(self) -> "RidgeAccumulator":
        out = RidgeAccumulator.__new__(RidgeAccumulator)
        out.bias, out.dim, out.n_classes, out.count = self.bias, self.dim, self.n_classes, self.count
        out._gram, out._half, out.cross = self.gram.copy(), False, self.cross.copy()
        return out

    def solve(self, lam: float, inplace: bool = False) -> np.ndarray:
        return solve_ridge(self.gram, self.cross, lam, inplace=inplace)

    def nbytes(self) -> int:
        return self._gram.nbytes + self.cross.nbytes


# ---------------------------------------------------------------------------
# Decisions
# ---------------------------------------------------------------------------

def winner_takes_all(scores, axis: int = 0):
    """Index of the largest score; ties go to the lowest class index."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or s.shape[axis] == 0:
        raise ValueError("winner-takes-all needs at least one score")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    out = np.argmax(s, axis=axis)
    return int(out) if np.ndim(out) == 0 else out


def majority_vote(digits: Sequence[int]) -> int:
    """Most frequent class; ties go to the tied class that occurred last."""
    digits = list(digits)
    if not digits:
        raise ValueError("majority vote over an empty list")
    counts: dict[int, int] = {}
    last: dict[int, int] = {}
    for pos, d in enumerate(digits):
        counts[d] = counts.get(d, 0) + 1
        last[d] = pos
    top = max(counts.values())
    return max((d for d, c in counts.items() if c == top), key=lambda d: last[d])


def majority_vote_rows(digits: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    """Vectorized :func:`majority_vote` over the rows of an ``(N, k)`` array."""
    digits = np.asarray(digits, dtype=np.int64)
    n, k = digits.shape
    hits = digits[:, :, None] == np.arange(n_classes)  # (N, k, C)
    counts = hits.sum(axis=1)
    last = np.where(hits, np.arange(k)[None, :, None], -1).max(axis=1)
    tied = counts == counts.max(axis=1, keepdims=True)
    return np.argmax(np.where(tied, last, -2), axis=1)


def classification_error(predicted, labels) -> float:
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    return float(np.mean(predicted != labels))


def confusion_matrix(predicted, labels, n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    return cm


# ---------------------------------------------------------------------------
# Ridge parameter selection
# ---------------------------------------------------------------------------

def _dedup(grid: Iterable[float]) -> list[float]:
    grid = sorted({float(g) for g in grid})
    if not grid:
        raise ValueError("lambda grid is empty")
    return grid


def evaluate_lambda_grid(solve: Callable[[float], np.ndarray], error_of: Callable[[np.ndarray], float],
                         grid: Iterable[float]) -> dict[float, float]:
    """Validation error for each grid point; singular fits score ``inf``."""
    errors = {}
    for lam in _dedup(grid):
        try:
            W = solve(lam)
        except SingularNormalMatrixError:
            errors[lam] = math.inf
            continue
        errors[lam] = error_of(W)
    return errors


def best_lambda(errors: Mapping[float, float]) -> float:
    """Lowest error; ties go to the smaller lambda."""
    if all(math.isinf(e) for e in errors.values()):
        raise SingularNormalMatrixError("every lambda on the grid gave a singular normal matrix")
    return min(sorted(errors), key=lambda lam: errors[lam])


def select_lambda(X_train, Y_train, X_val, labels_val,
                  grid: Iterable[float] = DEFAULT_LAMBDA_GRID) -> float:
    """Pick the grid lambda with the lowest validation classification error.

    ``X_train``/``X_val`` already include any bias row; ``Y_train`` is a
    target matrix.
    """
    grid = _dedup(grid)
    X_train = np.asarray(X_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    gram = X_train @ X_train.T
    cross = np.asarray(Y_train, dtype=np.float64) @ X_train.T

    def error_of(W):
        return classification_error(winner_takes_all(W @ X_val), labels_val)

    return best_lambda(evaluate_lambda_grid(lambda lam: solve_ridge(gram, cross, lam),
                                            error_of, grid))


# ---------------------------------------------------------------------------
# Trained model
# ---------------------------------------------------------------------------

@dataclass
class ReadoutModel:
    """Trained output layer plus what is needed to classify new inputs."""

    weights: np.ndarray  # (10, D) with the bias column last when ``bias``
    lam: float
    bias: bool = True
    metadata: dict[str, Any] = field(default_factory=dict)
    scaler: dict[str, Any] | None = None

    @property
    def dimension(self) -> int:
        return self.weights.shape[1] - (1 if self.bias else 0)

    def scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] != self.dimension:
            raise ValueError(f"state has {X.shape[0]} rows, model expects {self.dimension}")
        if self.bias:
            W, b = self.weights[:, :-1], self.weights[:, -1]
            out = W @ X
            return out + (b if X.ndim == 1 else b[:, None])
        return self.weights @ X

    def classify(self, X):
        return winner_takes_all(self.scores(X), axis=0)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {"lam": self.lam, "bias": self.bias, "metadata": self.metadata, "scaler": self.scaler}
        with open(path, "wb") as fh:
            np.savez(fh, weights=self.weights, meta=np.array(json.dumps(meta, sort_keys=True)))
        return path

    @classmethod
    def load(cls, path) -> "ReadoutModel":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            weights = data["weights"].copy()
        return cls(weights, meta["lam"], meta["bias"], meta["metadata"], meta["scaler"])


def predict(model: ReadoutModel, x) -> np.ndarray:
    """Ten class scores ``W_out [x; 1]`` for one readout vector or a column batch."""
    return model.scores(x)
