"""Per-sample joint factorization of a third-order tensor and a coupled matrix.

One :class:`CoupledSample` holds a tensor ``X1`` of shape (I1, I2, I3) and a
matrix ``X2`` of shape (I4, I3); their third/second modes share latent
factors.  The factorization minimizes

    Q = gamma * ||X1 - [[zeta; A, B, C]]||_F^2
      + gamma * ||X2 - U diag(sigma) V^T||_F^2
      + xi    * ||C - V||_F^2
      + sum_k [ beta * sqrt(zeta_k^2 + eps) + beta * sqrt(sigma_k^2 + eps)
                + theta * sum over the five factors of (||col_k|| - 1)^2 ]

over the factor blocks (A, B, C, U, V) and the weight vectors (zeta, sigma),
using nonlinear conjugate gradient with Hestenes-Stiefel updates and a
strong-Wolfe line search.  The analytic gradient below is the exact gradient
of Q as written (including the factors of 2 from the squared norms), so it
matches finite differences of :func:`acmtf_objective` coordinate-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_core import KruskalTensor, fold, khatri_rao, unfold

# Guard for the Hestenes-Stiefel denominator; below this the direction
# update is replaced by steepest descent.
HS_DENOM_GUARD = 1e-12


class NumericalError(RuntimeError):
    """Raised when the optimizer encounters a non-finite objective."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True, eq=False)
class CoupledSample:
    """One (tensor, matrix, label) unit; tensor mode 3 couples to matrix mode 2."""

    tensor: np.ndarray
    matrix: np.ndarray
    label: int = 0  # +1 / -1, or 0 when unlabeled

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float64)
        m = np.asarray(self.matrix, dtype=np.float64)
        if t.ndim != 3:
            raise ValueError(f"tensor must be third-order, got ndim={t.ndim}")
        if m.ndim != 2:
            raise ValueError(f"matrix must be second-order, got ndim={m.ndim}")
        if t.shape[2] != m.shape[1]:
            raise ValueError(
                f"coupled mode mismatch: tensor dim 3 is {t.shape[2]}, "
                f"matrix has {m.shape[1]} columns"
            )
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(m))):
            raise ValueError("sample contains non-finite entries")
        if self.label not in (-1, 0, 1):
            raise ValueError("label must be +1, -1, or 0 (unlabeled)")
        object.__setattr__(self, "tensor", t)
        object.__setattr__(self, "matrix", m)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(I1, I2, I3, I4)."""
        return (*self.tensor.shape, self.matrix.shape[0])


@dataclass(frozen=True)
class AcmtfHyperParams:
    """Weights and solver knobs for the coupled factorization.

    gamma weighs both data-fit terms, beta the smoothed-l1 sparsity on the
    component weights, xi the coupling penalty, theta the unit-norm penalty;
    epsilon smooths the l1 term.  cg_tol is the objective-change stopping
    threshold and max_iters the iteration cap of the CG loop.
    """

    gamma: float = 1.0
    beta: float = 0.001
    xi: float = 1.0
    theta: float = 1.0
    epsilon: float = 1e-8
    rank: int = 5
    cg_tol: float = 1e-9
    max_iters: int = 500

    def __post_init__(self):
        for name in ("gamma", "beta", "xi", "theta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.cg_tol <= 0:
            raise ValueError("cg_tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True, eq=False)
class AcmtfFactors:
    """Joint factorization result: tensor Kruskal, matrix Kruskal, shared factor.

    ``shared`` is the elementwise average of the tensor's third-mode factor
    and the matrix's second-mode factor.  ``objective_history`` and
    ``converged`` are optional solver provenance.
    """

    u1: KruskalTensor
    u2: KruskalTensor
    shared: np.ndarray
    objective_history: tuple[float, ...] = field(default=(), compare=False)
    converged: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.u1.order != 3:
            raise ValueError("u1 must have three factor matrices")
        if self.u2.order != 2:
            raise ValueError("u2 must have two factor matrices")
        if self.u1.rank != self.u2.rank:
            raise ValueError("u1 and u2 must share the same rank")
        if self.u1.shape[2] != self.u2.shape[1]:
            raise ValueError("coupled-mode dimensions differ between u1 and u2")
        expected = (self.u1.factors[2] + self.u2.factors[1]) / 2
        if not np.array_equal(np.asarray(self.shared, dtype=np.float64), expected):
            raise ValueError("shared must equal the average of the coupled factors")
        object.__setattr__(self, "shared", expected)

    @classmethod
    def from_kruskals(
        cls,
        u1: KruskalTensor,
        u2: KruskalTensor,
        objective_history: tuple[float, ...] = (),
        converged: bool = True,
    ) -> "AcmtfFactors":
        shared = (u1.factors[2] + u2.factors[1]) / 2
        return cls(u1, u2, shared, objective_history, converged)

    @property
    def rank(self) -> int:
        return self.u1.rank

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (*self.u1.shape, self.u2.shape[0])

    def pruned(self, rel_tol: float) -> "AcmtfFactors":
        """Drop components whose weight is negligible in both modalities.

        Component k survives if |zeta_k| >= rel_tol * max|zeta| or
        |sigma_k| >= rel_tol * max|sigma| (the sparsity penalty drives the
        weights of unused components to zero; shared indexing across the
        two modalities must be preserved, so pruning is joint).  At least
        one component is always kept.
        """
        if rel_tol <= 0:
            return self
        z = np.abs(self.u1.weights)
        s = np.abs(self.u2.weights)
        # The largest weight always satisfies its own threshold, so at
        # least one component survives.
        keep = (z >= rel_tol * z.max()) | (s >= rel_tol * s.max())
        if keep.all():
            return self
        u1 = KruskalTensor(
            self.u1.weights[keep], tuple(f[:, keep] for f in self.u1.factors)
        )
        u2 = KruskalTensor(
            self.u2.weights[keep], tuple(f[:, keep] for f in self.u2.factors)
        )
        return AcmtfFactors.from_kruskals(
            u1, u2, self.objective_history, self.converged
        )


def shared_factor(f: AcmtfFactors) -> np.ndarray:
    """Average of the tensor third-mode and matrix second-mode factors."""
    return (f.u1.factors[2] + f.u2.factors[1]) / 2


# ---------------------------------------------------------------------------
# Flat parameter vector <-> factor blocks
# ---------------------------------------------------------------------------

def _block_sizes(dims: tuple[int, int, int, int], rank: int) -> list[int]:
    i1, i2, i3, i4 = dims
    return [i1 * rank, i2 * rank, i3 * rank, i4 * rank, i3 * rank, rank, rank]


def pack(blocks) -> np.ndarray:
    """Concatenate (A, B, C, U, V, zeta, sigma) into one flat vector."""
    return np.concatenate([np.asarray(b, dtype=np.float64).ravel() for b in blocks])


def unpack(x: np.ndarray, dims: tuple[int, int, int, int], rank: int):
    """Split a flat vector back into (A, B, C, U, V, zeta, sigma)."""
    i1, i2, i3, i4 = dims
    sizes = _block_sizes(dims, rank)
    if x.size != sum(sizes):
        raise ValueError(f"parameter vector has size {x.size}, expected {sum(sizes)}")
    parts = np.split(x, np.cumsum(sizes)[:-1])
    shapes = [(i1, rank), (i2, rank), (i3, rank), (i4, rank), (i3, rank)]
    blocks = [p.reshape(s) for p, s in zip(parts, shapes)]
    return (*blocks, parts[5], parts[6])


def _norm_penalty_grad(F: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d/dF sum_k (||f_k|| - 1)^2 = 2 (F - Fbar), Fbar column-normalized.
    safe = np.where(norms > 0, norms, 1.0)
    # Zero columns sit at a non-differentiable point; use the 0 subgradient.
    unit = np.where(norms > 0, F / safe, 0.0)
    return 2.0 * (F - unit)


class _Evaluator:
    """Objective/gradient evaluation for one sample, sharing intermediates.

    The tensor data-fit residual is kept in mode-1 unfolded form; the mode-1
    Khatri-Rao product is reused between the reconstruction, the first
    factor's gradient, and the weight gradient.
    """

    def __init__(self, sample: CoupledSample, h: AcmtfHyperParams):
        self.h = h
        self.tshape = sample.tensor.shape
        self.x1_unf = unfold(sample.tensor, 1)
        self.x2 = sample.matrix

    def __call__(self, blocks, need_grad: bool = True):
        A, B, C, U, V, zeta, sigma = blocks
        h = self.h
        kr_cb = khatri_rao(C, B)
        e1 = (A * zeta) @ kr_cb.T - self.x1_unf
        f2 = (U * sigma) @ V.T - self.x2
        cv = C - V
        norms = [np.linalg.norm(F, axis=0) for F in (A, B, C, U, V)]
        root_z = np.sqrt(zeta**2 + h.epsilon)
        root_s = np.sqrt(sigma**2 + h.epsilon)
        q = h.gamma * (np.sum(e1 * e1) + np.sum(f2 * f2))
        q += h.xi * np.sum(cv * cv)
        q += h.beta * (root_z.sum() + root_s.sum())
        q += h.theta * sum(np.sum((n - 1.0) ** 2) for n in norms)
        if not need_grad:
            return float(q), None

        g2 = 2.0 * h.gamma
        err = fold(e1, 1, self.tshape)
        core1 = e1 @ kr_cb  # shared by the A-block and zeta gradients
        grad_a = g2 * core1 * zeta + h.theta * _norm_penalty_grad(A, norms[0])
        grad_zeta = g2 * np.sum(A * core1, axis=0) + h.beta * zeta / root_z
        grad_b = g2 * unfold(err, 2) @ (khatri_rao(C, A) * zeta)
        grad_b += h.theta * _norm_penalty_grad(B, norms[1])
        grad_c = g2 * unfold(err, 3) @ (khatri_rao(B, A) * zeta)
        grad_c += 2.0 * h.xi * cv + h.theta * _norm_penalty_grad(C, norms[2])
        core2 = f2 @ V  # shared by the U-block and sigma gradients
        grad_u = g2 * core2 * sigma + h.theta * _norm_penalty_grad(U, norms[3])
        grad_sigma = g2 * np.sum(U * core2, axis=0) + h.beta * sigma / root_s
        grad_v = g2 * f2.T @ (U * sigma)
        grad_v += -2.0 * h.xi * cv + h.theta * _norm_penalty_grad(V, norms[4])
        grad = pack((grad_a, grad_b, grad_c, grad_u, grad_v, grad_zeta, grad_sigma))
        return float(q), grad


def _raw_objective(sample, A, B, C, U, V, zeta, sigma, h: AcmtfHyperParams) -> float:
    return _Evaluator(sample, h)((A, B, C, U, V, zeta, sigma), need_grad=False)[0]


def _raw_gradient(sample, A, B, C, U, V, zeta, sigma, h: AcmtfHyperParams):
    return _Evaluator(sample, h)((A, B, C, U, V, zeta, sigma))[1]


def _factors_to_blocks(f: AcmtfFactors):
    return (
        f.u1.factors[0],
        f.u1.factors[1],
        f.u1.factors[2],
        f.u2.factors[0],
        f.u2.factors[1],
        f.u1.weights,
        f.u2.weights,
    )


def _check_compat(s: CoupledSample, f: AcmtfFactors):
    if f.dims != s.dims:
        raise ValueError(f"factor dims {f.dims} do not match sample dims {s.dims}")


def acmtf_objective(s: CoupledSample, f: AcmtfFactors, h: AcmtfHyperParams) -> float:
    """Value of the unconstrained coupled-factorization objective Q."""
    _check_compat(s, f)
    return _raw_objective(s, *_factors_to_blocks(f), h)


def acmtf_gradient(s: CoupledSample, f: AcmtfFactors, h: AcmtfHyperParams) -> np.ndarray:
    """Exact gradient of Q, flattened as (A, B, C, U, V, zeta, sigma)."""
    _check_compat(s, f)
    return _raw_gradient(s, *_factors_to_blocks(f), h)


# ---------------------------------------------------------------------------
# Strong-Wolfe line search and the conjugate-gradient loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LineSearchResult:
    step: float
    value: float
    gradient: np.ndarray
    wolfe_satisfied: bool


def _wolfe_search(
    fg,
    x: np.ndarray,
    direction: np.ndarray,
    f0: float,
    g0: np.ndarray,
    c1: float = 1e-4,
    c2: float = 0.1,
    max_evals: int = 50,
    init_step: float = 1.0,
) -> LineSearchResult:
    """Strong-Wolfe line search (bracket + zoom).

    ``fg(x)`` returns (value, gradient).  If no Wolfe point is found within
    ``max_evals`` evaluations, the best simple-decrease step seen is
    returned with ``wolfe_satisfied=False``.
    """
    dphi0 = float(g0 @ direction)
    if dphi0 >= 0:
        raise ValueError("direction is not a descent direction")

    evals = 0
    best = None  # (step, value, gradient) with the lowest value seen

    def phi(a: float):
        nonlocal evals, best
        evals += 1
        val, grad = fg(x + a * direction)
        if best is None or val < best[1]:
            best = (a, val, grad)
        return val, float(grad @ direction), grad

    def fallback() -> LineSearchResult:
        # Backtrack from the smallest bracketing point for plain decrease.
        a = best[0] if best is not None and best[1] < f0 else 1.0
        val, _, grad = phi(a)
        while val > f0 and a > 1e-16:
            a *= 0.5
            val, _, grad = phi(a)
        step, value, gradient = best
        return LineSearchResult(step, value, gradient, False)

    def zoom(a_lo, f_lo, d_lo, a_hi, f_hi) -> LineSearchResult:
        while evals < max_evals:
            # Quadratic interpolation with bisection safeguard.
            denom = 2.0 * (f_hi - f_lo - d_lo * (a_hi - a_lo))
            if denom != 0:
                a = a_lo - d_lo * (a_hi - a_lo) ** 2 / denom
            else:
                a = 0.5 * (a_lo + a_hi)
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            width = hi - lo
            if not (lo + 0.1 * width <= a <= hi - 0.1 * width):
                a = 0.5 * (a_lo + a_hi)
            f_a, d_a, g_a = phi(a)
            if f_a > f0 + c1 * a * dphi0 or f_a >= f_lo:
                a_hi, f_hi = a, f_a
            else:
                if abs(d_a) <= -c2 * dphi0:
                    return LineSearchResult(a, f_a, g_a, True)
                if d_a * (a_hi - a_lo) >= 0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, d_lo = a, f_a, d_a
            if abs(a_hi - a_lo) < 1e-16:
                break
        return fallback()

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = init_step if np.isfinite(init_step) and init_step > 0 else 1.0
    first = True
    while evals < max_evals:
        f_a, d_a, g_a = phi(a)
        if f_a > f0 + c1 * a * dphi0 or (not first and f_a >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f_a)
        if abs(d_a) <= -c2 * dphi0:
            return LineSearchResult(a, f_a, g_a, True)
        if d_a >= 0:
            return zoom(a, f_a, d_a, a_prev, f_prev)
        a_prev, f_prev, d_prev = a, f_a, d_a
        a *= 2.0
        first = False
    return fallback()


def line_search(
    s: CoupledSample,
    x: np.ndarray,
    direction: np.ndarray,
    h: AcmtfHyperParams,
) -> LineSearchResult:
    """Strong-Wolfe step along ``direction`` for the coupled objective.

    ``x`` is a flat parameter vector as produced by :func:`pack`.  Requires
    a descent direction; callers restart with steepest descent otherwise.
    """
    evaluate = _Evaluator(s, h)
    dims = s.dims

    def fg(v):
        return evaluate(unpack(v, dims, h.rank))

    f0, g0 = fg(x)
    return _wolfe_search(fg, x, direction, f0, g0)


def _initial_point(dims, rank: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    i1, i2, i3, i4 = dims
    blocks = []
    for d in (i1, i2, i3, i4, i3):
        f = rng.standard_normal((d, rank))
        f /= np.linalg.norm(f, axis=0)
        blocks.append(f)
    blocks.append(np.ones(rank))
    blocks.append(np.ones(rank))
    return pack(blocks)


def acmtf_decompose(
    s: CoupledSample, h: AcmtfHyperParams, seed: int = 0, normalize: bool = True
) -> AcmtfFactors:
    """Joint factorization by Hestenes-Stiefel nonlinear conjugate gradient.

    Starts from seeded Gaussian factors with unit-norm columns and unit
    weights, takes a steepest-descent first step, then HS-CG steps with a
    strong-Wolfe line search.  Stops when the objective change drops below
    ``h.cg_tol`` or after ``h.max_iters`` iterations.  The returned factors
    are column-normalized with norms folded into the component weights.

    With ``normalize`` (the usual practice for coupled factorizations),
    each modality is scaled to unit Frobenius norm before optimization so
    the data-fit, coupling, sparsity, and unit-norm terms are comparable;
    the scales are folded back into the returned weights, so the factors
    describe the original data.  The objective history refers to the
    scaled problem.
    """
    scale_t = scale_m = 1.0
    if normalize:
        nt = float(np.linalg.norm(s.tensor))
        nm = float(np.linalg.norm(s.matrix))
        if nt > 0 or nm > 0:
            scale_t = nt if nt > 0 else 1.0
            scale_m = nm if nm > 0 else 1.0
            s = CoupledSample(s.tensor / scale_t, s.matrix / scale_m, s.label)
    dims = s.dims
    rank = h.rank
    evaluate = _Evaluator(s, h)

    def fg(v):
        return evaluate(unpack(v, dims, rank))

    x = _initial_point(dims, rank, seed)
    f_val, grad = fg(x)
    if not np.isfinite(f_val):
        raise NumericalError("non-finite objective at initialization", 0)
    history = [f_val]

    delta = -grad  # negated gradient
    direction = delta
    converged = False
    prev_step = None
    prev_dphi = None
    for it in range(h.max_iters):
        if not np.isfinite(f_val) or not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite objective or gradient", it)
        grad_norm = np.linalg.norm(grad)
        if grad_norm == 0.0:
            converged = True
            break
        if float(grad @ direction) >= 0:
            direction = -grad  # restart on a non-descent direction
        # First-order initial step guess: keep the directional decrease of
        # the previous accepted step.
        dphi = float(grad @ direction)
        if prev_step is None:
            init = 1.0 / grad_norm
        else:
            init = prev_step * prev_dphi / dphi if dphi != 0 else 1.0
        ls = _wolfe_search(fg, x, direction, f_val, grad, init_step=init)
        if ls.value >= f_val and not np.array_equal(direction, -grad):
            # Stagnant CG direction: retry once along steepest descent.
            direction = -grad
            dphi = float(grad @ direction)
            ls = _wolfe_search(fg, x, direction, f_val, grad)
        if ls.value >= f_val:
            converged = True  # no descent possible within line-search accuracy
            break
        x = x + ls.step * direction
        prev_step, prev_dphi = ls.step, dphi
        f_new, grad_new = ls.value, ls.gradient
        if not np.isfinite(f_new):
            raise NumericalError("non-finite objective after step", it)
        history.append(f_new)
        if abs(f_new - f_val) < h.cg_tol:
            f_val, grad = f_new, grad_new
            converged = True
            break
        delta_new = -grad_new
        y = delta_new - delta
        denom = float(-direction @ y)
        if abs(denom) < HS_DENOM_GUARD:
            direction = delta_new
        else:
            beta_hs = float(delta_new @ y) / denom
            direction = delta_new + beta_hs * direction
        delta = delta_new
        f_val, grad = f_new, grad_new

    A, B, C, U, V, zeta, sigma = unpack(x, dims, rank)
    u1 = KruskalTensor(zeta * scale_t, (A, B, C)).normalized()
    u2 = KruskalTensor(sigma * scale_m, (U, V)).normalized()
    return AcmtfFactors.from_kruskals(
        u1, u2, objective_history=tuple(history), converged=converged
    )
