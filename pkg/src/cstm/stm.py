"""Max-margin classifiers over coupled and single-modality CP kernels.

The dual problem is

    min_alpha  1/2 alpha^T D_y K D_y alpha - 1^T alpha
    s.t.       alpha^T y = 0,   0 <= alpha_i <= 1 / (2 n lambda)

and is solved by sequential minimal optimization: repeatedly pick the
maximal violating pair and solve the two-variable subproblem exactly.
The decision value for a new input is sum_i alpha_i y_i K(train_i, input)
plus the intercept the equality constraint implies (recovered from the
margin support vectors at fit time); ties (exactly zero) predict +1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .acmtf import AcmtfFactors
from .kernels import (
    CoupledKernelSpec,
    KernelSpec,
    cp_gram,
    cp_gram_cross,
    gram_cross,
    gram_matrix,
)
from .tensor_core import KruskalTensor

SUPPORT_EPS = 1e-10


def box_bound(n: int, lam: float) -> float:
    """Upper box constraint 1 / (2 n lambda) of the dual."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    return 1.0 / (2.0 * n * lam)


def default_lambda(n: int) -> float:
    """Default regularization schedule lambda_n = n^(-1/2).

    Satisfies lambda_n -> 0 and n * lambda_n -> infinity as n grows, the
    preconditions for risk consistency.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(n) ** -0.5


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Dual program data: Gram matrix, labels, regularization weight."""

    gram: np.ndarray
    labels: np.ndarray
    lam: float

    def __post_init__(self):
        k = np.asarray(self.gram, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError(f"gram must be square, got {k.shape}")
        if np.max(np.abs(k - k.T), initial=0.0) > 1e-10:
            raise ValueError("gram matrix is not symmetric")
        if y.shape != (k.shape[0],):
            raise ValueError("labels length must match gram size")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be +1 or -1")
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")
        object.__setattr__(self, "gram", k)
        object.__setattr__(self, "labels", y)

    @property
    def box(self) -> float:
        return box_bound(self.labels.size, self.lam)


@dataclass(frozen=True, eq=False)
class QpSolution:
    alpha: np.ndarray
    converged: bool
    kkt_violation: float
    n_updates: int

    def objective(self, problem: QpProblem) -> float:
        q = problem.gram * np.outer(problem.labels, problem.labels)
        return float(0.5 * self.alpha @ q @ self.alpha - self.alpha.sum())


def solve_qp(p: QpProblem, tol: float = 1e-6, max_passes: int = 1000) -> QpSolution:
    """SMO solve of the dual; one pass is up to n pair updates.

    Stops when the maximal KKT violation (the gap between the most violating
    up/low candidates) drops below ``tol``.  If the budget of
    ``max_passes * n`` updates runs out first, returns the current iterate
    with ``converged=False``.
    """
    k = p.gram
    y = p.labels
    n = y.size
    c = p.box
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha
    feas = 1e-12 * max(c, 1.0)

    updates = 0
    budget = max_passes * n
    converged = False
    gap = np.inf
    while updates < budget:
        minus_yg = -y * grad
        up = ((y > 0) & (alpha < c - feas)) | ((y < 0) & (alpha > feas))
        low = ((y < 0) & (alpha < c - feas)) | ((y > 0) & (alpha > feas))
        if not up.any() or not low.any():
            converged = True
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(minus_yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(minus_yg[low])])
        gap = minus_yg[i] - minus_yg[j]
        if gap <= tol:
            converged = True
            break
        quad = k[i, i] + k[j, j] - 2.0 * k[i, j]
        delta = gap / quad if quad > 1e-12 else np.inf
        # Box caps along the feasible direction (alpha_i += y_i d, alpha_j -= y_j d).
        cap_i = (c - alpha[i]) if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else (c - alpha[j])
        delta = min(delta, cap_i, cap_j)
        if delta <= 0:
            converged = True
            break
        alpha[i] += y[i] * delta
        alpha[j] -= y[j] * delta
        grad += delta * y * (k[:, i] - k[:, j])
        updates += 1
    else:
        converged = False
    np.clip(alpha, 0.0, c, out=alpha)
    return QpSolution(alpha, converged, max(gap, 0.0), updates)


def _check_two_classes(labels: np.ndarray):
    if not np.any(labels > 0):
        raise ValueError("training set has no +1 samples")
    if not np.any(labels < 0):
        raise ValueError("training set has no -1 samples")


def recover_bias(gram: np.ndarray, y: np.ndarray, alpha: np.ndarray, c: float) -> float:
    """Intercept implied by the dual's equality constraint.

    The equality constraint alpha^T y = 0 arises from an intercept in the
    primal; scoring without it leaves a systematic shift whenever the two
    classes have different within-class similarity levels.  Margin support
    vectors (0 < alpha_i < C) pin the intercept exactly; otherwise the
    midpoint of the KKT interval is used.
    """
    scores = gram @ (alpha * y)
    t = y - scores
    feas = 1e-8 * max(c, 1.0)
    interior = (alpha > feas) & (alpha < c - feas)
    if interior.any():
        return float(t[interior].mean())
    lower = t[((alpha <= feas) & (y > 0)) | ((alpha >= c - feas) & (y < 0))]
    upper = t[((alpha <= feas) & (y < 0)) | ((alpha >= c - feas) & (y > 0))]
    if lower.size and upper.size:
        return float(0.5 * (lower.max() + upper.min()))
    if lower.size:
        return float(lower.max())
    if upper.size:
        return float(upper.min())
    return 0.0


@dataclass(frozen=True, eq=False)
class StmModel:
    """Fitted coupled-kernel classifier.

    ``bias`` is the intercept implied by the dual's equality constraint;
    models built by hand (outside :func:`fit`) default to 0.
    """

    alpha: np.ndarray
    labels: np.ndarray
    factors: tuple[AcmtfFactors, ...]
    kernel: CoupledKernelSpec
    lam: float
    bias: float = 0.0
    converged: bool = True

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.alpha > SUPPORT_EPS)

    @property
    def coef(self) -> np.ndarray:
        return self.alpha * self.labels


def fit(
    samples: Sequence[AcmtfFactors],
    labels,
    spec: CoupledKernelSpec,
    lam: float,
    tol: float = 1e-6,
    max_passes: int = 1000,
    gram: np.ndarray | None = None,
) -> StmModel:
    """Train the coupled-kernel classifier by solving the dual program.

    ``gram`` may supply a precomputed training Gram matrix (it must match
    what :func:`cstm.kernels.gram_matrix` would produce).
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (len(samples),):
        raise ValueError("labels length must match number of samples")
    _check_two_classes(y)
    if gram is None:
        gram = gram_matrix(samples, spec)
    problem = QpProblem(gram, y, lam)
    sol = solve_qp(problem, tol=tol, max_passes=max_passes)
    bias = recover_bias(gram, y, sol.alpha, problem.box)
    return StmModel(sol.alpha, y, tuple(samples), spec, lam, bias, sol.converged)


def decision(m: StmModel, f: AcmtfFactors) -> float:
    """Decision value sum_i alpha_i y_i K(train_i, f) + bias."""
    row = gram_cross(list(m.factors), [f], m.kernel)[:, 0]
    return float(m.coef @ row + m.bias)


def decision_many(m: StmModel, fs: Sequence[AcmtfFactors]) -> np.ndarray:
    """Decision values for a batch of inputs."""
    cross = gram_cross(list(m.factors), list(fs), m.kernel)
    return m.coef @ cross + m.bias


def predict_label(score: float) -> int:
    """Sign rule with ties mapped to +1."""
    return 1 if score >= 0 else -1


# ---------------------------------------------------------------------------
# Single-modality CP-factor baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CpStmModel:
    """Fitted single-modality classifier over CP factors."""

    alpha: np.ndarray
    labels: np.ndarray
    tensors: tuple[KruskalTensor, ...]
    specs: tuple[KernelSpec, ...]
    lam: float
    bias: float = 0.0
    converged: bool = True

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.alpha > SUPPORT_EPS)

    @property
    def coef(self) -> np.ndarray:
        return self.alpha * self.labels


def cpstm_fit(
    samples: Sequence[KruskalTensor],
    labels,
    specs: Sequence[KernelSpec],
    lam: float,
    tol: float = 1e-6,
    max_passes: int = 1000,
    gram: np.ndarray | None = None,
) -> CpStmModel:
    """Train the single-modality classifier with the CP tensor kernel."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (len(samples),):
        raise ValueError("labels length must match number of samples")
    _check_two_classes(y)
    if gram is None:
        gram = cp_gram(samples, specs)
    problem = QpProblem(gram, y, lam)
    sol = solve_qp(problem, tol=tol, max_passes=max_passes)
    bias = recover_bias(gram, y, sol.alpha, problem.box)
    return CpStmModel(
        sol.alpha, y, tuple(samples), tuple(specs), lam, bias, sol.converged
    )


def cpstm_decision(m: CpStmModel, t: KruskalTensor) -> float:
    row = cp_gram_cross(list(m.tensors), [t], m.specs)[:, 0]
    return float(m.coef @ row + m.bias)


def cpstm_decision_many(m: CpStmModel, ts: Sequence[KruskalTensor]) -> np.ndarray:
    cross = cp_gram_cross(list(m.tensors), list(ts), m.specs)
    return m.coef @ cross + m.bias


def matrix_to_kruskal(matrix: np.ndarray, rank: int) -> KruskalTensor:
    """Rank-``rank`` truncated SVD of a matrix as a two-factor Kruskal tensor."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a matrix")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    r = min(rank, s.size)
    if r < rank:
        # Pad with zero components so every sample carries the same rank.
        u = np.pad(u, ((0, 0), (0, rank - r)))
        vt = np.pad(vt, ((0, rank - r), (0, 0)))
        s = np.pad(s, (0, rank - r))
    return KruskalTensor(s[:rank], (u[:, :rank], vt[:rank].T)).normalized()


# ---------------------------------------------------------------------------
# Cross-validated lambda selection (works on a precomputed Gram matrix)
# ---------------------------------------------------------------------------

DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)


def _stratified_folds(labels: np.ndarray, k: int, rng) -> list[np.ndarray]:
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in (1.0, -1.0):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        for pos, i in enumerate(idx):
            folds[pos % k].append(int(i))
    return [np.sort(np.array(f, dtype=int)) for f in folds]


def select_lambda(
    gram: np.ndarray,
    labels,
    grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    k: int = 5,
    seed: int = 0,
) -> float:
    """Pick lambda from ``grid`` by stratified k-fold CV accuracy.

    Folds that lose a class are skipped; ties keep the first (smallest)
    grid value.  The Gram matrix covers the training samples only.
    """
    y = np.asarray(labels, dtype=np.float64)
    _check_two_classes(y)
    grid = tuple(grid)
    if any(g <= 0 for g in grid):
        raise ValueError("lambda grid values must be > 0")
    rng = np.random.default_rng(seed)
    k = min(k, int(np.sum(y > 0)), int(np.sum(y < 0)))
    if k < 2:
        return grid[0]
    folds = _stratified_folds(y, k, rng)
    best_lam, best_acc = grid[0], -1.0
    for lam in grid:
        correct = 0
        total = 0
        for te in folds:
            tr = np.setdiff1d(np.arange(y.size), te)
            y_tr = y[tr]
            if not (np.any(y_tr > 0) and np.any(y_tr < 0)):
                continue
            sub = gram[np.ix_(tr, tr)]
            problem = QpProblem(sub, y_tr, lam)
            sol = solve_qp(problem)
            bias = recover_bias(sub, y_tr, sol.alpha, problem.box)
            scores = (sol.alpha * y_tr) @ gram[np.ix_(tr, te)] + bias
            pred = np.where(scores >= 0, 1.0, -1.0)
            correct += int(np.sum(pred == y[te]))
            total += te.size
        acc = correct / total if total else -1.0
        if acc > best_acc:
            best_acc, best_lam = acc, lam
    return best_lam
