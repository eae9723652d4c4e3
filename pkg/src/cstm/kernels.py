"""Vector kernels, CP-factor tensor kernels, and the coupled three-kernel.

The tensor kernel between two CP-decomposed inputs sums, over all pairs of
components, the product of per-mode vector kernel values.  The coupled
kernel combines three such measures with nonnegative weights: a two-mode
product kernel on the tensor's individual factors, a kernel on the averaged
shared factor, and a kernel on the matrix's individual factor.  All kernels
ignore the component weights; they operate on the (normalized) factor
columns themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .acmtf import AcmtfFactors
from .tensor_core import KruskalTensor

_KINDS = ("rbf", "linear", "polynomial")


@dataclass(frozen=True)
class KernelSpec:
    """A vector kernel: rbf (Gaussian), linear, or polynomial."""

    kind: str = "rbf"
    bandwidth: float = 1.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; use one of {_KINDS}")
        if self.kind == "rbf" and not self.bandwidth > 0:
            raise ValueError("rbf bandwidth must be > 0")
        if self.kind == "polynomial":
            if self.degree < 1:
                raise ValueError("polynomial degree must be >= 1")
            if not np.isfinite(self.offset):
                raise ValueError("polynomial offset must be finite")


@dataclass(frozen=True)
class CoupledKernelSpec:
    """Kernels and weights for the three-part coupled similarity.

    k1_mode1/k1_mode2 act on the tensor's first/second-mode factors (their
    values are multiplied per component pair), k2 on the averaged shared
    factor, k3 on the matrix's individual factor.
    """

    k1_mode1: KernelSpec = KernelSpec()
    k1_mode2: KernelSpec = KernelSpec()
    k2: KernelSpec = KernelSpec()
    k3: KernelSpec = KernelSpec()
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) != 3:
            raise ValueError("weights must be a triple")
        if not all(np.isfinite(v) and v >= 0 for v in w):
            raise ValueError("weights must be finite and >= 0")
        if sum(w) == 0:
            raise ValueError("weights must not all be zero")
        object.__setattr__(self, "weights", w)


def kernel_matrix(a: np.ndarray, b: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Pairwise kernel values between the columns of two (p x m), (p x n) arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    inner = a.T @ b
    if spec.kind == "linear":
        return inner
    if spec.kind == "polynomial":
        return (inner + spec.offset) ** spec.degree
    sq = (
        np.sum(a * a, axis=0)[:, None]
        + np.sum(b * b, axis=0)[None, :]
        - 2.0 * inner
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * spec.bandwidth**2))


def vector_kernel(x: np.ndarray, y: np.ndarray, spec: KernelSpec) -> float:
    """Kernel value between two vectors."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    return float(kernel_matrix(x, y, spec)[0, 0])


def cp_kernel(
    a: KruskalTensor, b: KruskalTensor, specs: Sequence[KernelSpec]
) -> float:
    """Tensor kernel on CP factors: sum over component pairs of per-mode products.

    The inputs must have the same order and per-mode dimensions; ranks may
    differ.  Component weights are ignored.
    """
    if a.order != b.order:
        raise ValueError(f"orders differ: {a.order} vs {b.order}")
    if a.shape != b.shape:
        raise ValueError(f"mode dimensions differ: {a.shape} vs {b.shape}")
    if len(specs) != a.order:
        raise ValueError(f"need {a.order} kernel specs, got {len(specs)}")
    prod = np.ones((a.rank, b.rank))
    for fa, fb, spec in zip(a.factors, b.factors, specs):
        prod *= kernel_matrix(fa, fb, spec)
    return float(prod.sum())


def coupled_kernel(
    fa: AcmtfFactors, fb: AcmtfFactors, spec: CoupledKernelSpec
) -> float:
    """Three-part similarity between two joint factorizations."""
    if fa.dims != fb.dims:
        raise ValueError(f"factor dims differ: {fa.dims} vs {fb.dims}")
    w1, w2, w3 = spec.weights
    total = 0.0
    if w1 > 0:
        m1 = kernel_matrix(fa.u1.factors[0], fb.u1.factors[0], spec.k1_mode1)
        m2 = kernel_matrix(fa.u1.factors[1], fb.u1.factors[1], spec.k1_mode2)
        total += w1 * float((m1 * m2).sum())
    if w2 > 0:
        total += w2 * float(kernel_matrix(fa.shared, fb.shared, spec.k2).sum())
    if w3 > 0:
        total += w3 * float(
            kernel_matrix(fa.u2.factors[0], fb.u2.factors[0], spec.k3).sum()
        )
    return total


def _stack(arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(arrays, axis=1)


def _block_sum(big: np.ndarray, n_a: int, r_a: int, n_b: int, r_b: int) -> np.ndarray:
    return big.reshape(n_a, r_a, n_b, r_b).sum(axis=(1, 3))


def _check_same_dims(a: Sequence[AcmtfFactors], b: Sequence[AcmtfFactors]):
    ref = a[0].dims
    for name, seq in (("a", a), ("b", b)):
        for i, f in enumerate(seq):
            if f.dims != ref:
                raise ValueError(
                    f"factor dims differ: {name}[{i}] has {f.dims}, "
                    f"a[0] has {ref}"
                )


def gram_cross(
    a: Sequence[AcmtfFactors],
    b: Sequence[AcmtfFactors],
    spec: CoupledKernelSpec,
) -> np.ndarray:
    """Matrix of coupled-kernel values K[i, j] = K(a[i], b[j])."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("factor lists must be nonempty")
    _check_same_dims(a, b)
    ranks = {f.rank for f in a} | {f.rank for f in b}
    if len(ranks) > 1:
        # Mixed ranks (e.g. after pruning): plain pairwise loop.
        out = np.empty((len(a), len(b)))
        for i, fi in enumerate(a):
            for j, fj in enumerate(b):
                try:
                    out[i, j] = coupled_kernel(fi, fj, spec)
                except ValueError as exc:
                    raise ValueError(f"kernel failed at pair ({i}, {j}): {exc}") from exc
        return out
    r = ranks.pop()
    w1, w2, w3 = spec.weights
    out = np.zeros((len(a), len(b)))
    if w1 > 0:
        m1 = kernel_matrix(
            _stack([f.u1.factors[0] for f in a]),
            _stack([f.u1.factors[0] for f in b]),
            spec.k1_mode1,
        )
        m2 = kernel_matrix(
            _stack([f.u1.factors[1] for f in a]),
            _stack([f.u1.factors[1] for f in b]),
            spec.k1_mode2,
        )
        out += w1 * _block_sum(m1 * m2, len(a), r, len(b), r)
    if w2 > 0:
        ms = kernel_matrix(
            _stack([f.shared for f in a]), _stack([f.shared for f in b]), spec.k2
        )
        out += w2 * _block_sum(ms, len(a), r, len(b), r)
    if w3 > 0:
        mu = kernel_matrix(
            _stack([f.u2.factors[0] for f in a]),
            _stack([f.u2.factors[0] for f in b]),
            spec.k3,
        )
        out += w3 * _block_sum(mu, len(a), r, len(b), r)
    return out


def gram_matrix(
    factors: Sequence[AcmtfFactors], spec: CoupledKernelSpec
) -> np.ndarray:
    """Symmetric Gram matrix of pairwise coupled-kernel values.

    The lower triangle is mirrored onto the upper one, so the result is
    exactly symmetric.
    """
    if len(factors) == 0:
        raise ValueError("factor list must be nonempty")
    try:
        full = gram_cross(factors, factors, spec)
    except ValueError as exc:
        raise ValueError(f"gram assembly failed: {exc}") from exc
    lower = np.tril(full)
    return lower + np.tril(full, -1).T


def cp_gram(
    tensors: Sequence[KruskalTensor], specs: Sequence[KernelSpec]
) -> np.ndarray:
    """Symmetric Gram matrix of pairwise CP tensor-kernel values."""
    if len(tensors) == 0:
        raise ValueError("tensor list must be nonempty")
    for i, t in enumerate(tensors):
        if t.shape != tensors[0].shape:
            raise ValueError(
                f"factor dims differ: tensors[{i}] has {t.shape}, "
                f"tensors[0] has {tensors[0].shape}"
            )
    ranks = {t.rank for t in tensors}
    n = len(tensors)
    if len(ranks) > 1:
        full = np.empty((n, n))
        for i in range(n):
            for j in range(i + 1):
                try:
                    full[i, j] = cp_kernel(tensors[i], tensors[j], specs)
                except ValueError as exc:
                    raise ValueError(f"kernel failed at pair ({i}, {j}): {exc}") from exc
    else:
        r = ranks.pop()
        prod = np.ones((n * r, n * r))
        for mode, spec in enumerate(specs):
            stacked = _stack([t.factors[mode] for t in tensors])
            prod *= kernel_matrix(stacked, stacked, spec)
        full = _block_sum(prod, n, r, n, r)
    lower = np.tril(full)
    return lower + np.tril(full, -1).T


def cp_gram_cross(
    a: Sequence[KruskalTensor],
    b: Sequence[KruskalTensor],
    specs: Sequence[KernelSpec],
) -> np.ndarray:
    """Matrix of CP tensor-kernel values K[i, j] = K(a[i], b[j])."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("tensor lists must be nonempty")
    for name, seq in (("a", a), ("b", b)):
        for i, t in enumerate(seq):
            if t.shape != a[0].shape:
                raise ValueError(
                    f"factor dims differ: {name}[{i}] has {t.shape}, "
                    f"a[0] has {a[0].shape}"
                )
    ranks = {t.rank for t in a} | {t.rank for t in b}
    if len(ranks) > 1:
        out = np.empty((len(a), len(b)))
        for i, ti in enumerate(a):
            for j, tj in enumerate(b):
                try:
                    out[i, j] = cp_kernel(ti, tj, specs)
                except ValueError as exc:
                    raise ValueError(f"kernel failed at pair ({i}, {j}): {exc}") from exc
        return out
    r = ranks.pop()
    prod = np.ones((len(a) * r, len(b) * r))
    for mode, spec in enumerate(specs):
        prod *= kernel_matrix(
            _stack([t.factors[mode] for t in a]),
            _stack([t.factors[mode] for t in b]),
            spec,
        )
    return _block_sum(prod, len(a), r, len(b), r)


def median_bandwidth(columns: np.ndarray, fallback: float = 1.0) -> float:
    """Median pairwise distance between columns; the usual rbf heuristic.

    Zero distances are excluded; if every pair coincides, returns
    ``fallback``.
    """
    c = np.asarray(columns, dtype=np.float64)
    sq = (
        np.sum(c * c, axis=0)[:, None]
        + np.sum(c * c, axis=0)[None, :]
        - 2.0 * (c.T @ c)
    )
    np.maximum(sq, 0.0, out=sq)
    d = np.sqrt(sq[np.triu_indices(c.shape[1], k=1)])
    d = d[d > 0]
    if d.size == 0:
        return fallback
    return float(np.median(d))


def default_coupled_spec(
    factors: Sequence[AcmtfFactors],
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
) -> CoupledKernelSpec:
    """Rbf kernels with median-heuristic bandwidths fit on training factors."""
    if len(factors) == 0:
        raise ValueError("factor list must be nonempty")
    roles = (
        _stack([f.u1.factors[0] for f in factors]),
        _stack([f.u1.factors[1] for f in factors]),
        _stack([f.shared for f in factors]),
        _stack([f.u2.factors[0] for f in factors]),
    )
    k1, k2, ks, km = (KernelSpec("rbf", median_bandwidth(r)) for r in roles)
    return CoupledKernelSpec(k1, k2, ks, km, weights)


def default_cp_specs(tensors: Sequence[KruskalTensor]) -> tuple[KernelSpec, ...]:
    """Per-mode rbf kernels with median-heuristic bandwidths."""
    if len(tensors) == 0:
        raise ValueError("tensor list must be nonempty")
    order = tensors[0].order
    specs = []
    for mode in range(order):
        stacked = _stack([t.factors[mode] for t in tensors])
        specs.append(KernelSpec("rbf", median_bandwidth(stacked)))
    return tuple(specs)
