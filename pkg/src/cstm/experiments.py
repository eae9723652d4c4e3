"""Synthetic benchmark: data generation, splitting, metrics, orchestration.

Each simulation case draws rank-3 latent factors from multivariate normals
(identity covariance, case-specific means) and assembles a 30x20x10 tensor
plus a 50x10 matrix per sample; the tensor's third-mode factors and the
matrix's second-mode factors are the same draws (the shared role).  Class 1
is labeled -1 and class 2 (the shifted one) +1.

The experiment harness decomposes every sample once (the factorizations do
not depend on the train/test split), then repeats: stratified split,
bandwidth fit and lambda cross-validation on the training part only, dual
solve, and test-set scoring.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import stm
from .acmtf import AcmtfFactors, AcmtfHyperParams, CoupledSample, acmtf_decompose
from .kernels import (
    CoupledKernelSpec,
    KernelSpec,
    cp_gram,
    default_coupled_spec,
    default_cp_specs,
    gram_matrix,
)
from .tensor_core import KruskalTensor, cp_als

TENSOR_DIMS = (30, 20, 10)
MATRIX_DIMS = (50, 10)
GEN_RANK = 3

METHODS = ("cstm", "cpstm_tensor", "cpstm_matrix")
METRIC_NAMES = ("accuracy", "precision", "sensitivity", "specificity", "auc")

# Seed-derivation roles, so the per-sample/per-repetition streams never collide.
_ROLE_DECOMPOSE = 1
_ROLE_CPALS = 2
_ROLE_SPLIT = 3
_ROLE_CV = 4


def derive_seed(base: int, role: int, index: int) -> int:
    """Stable scalar seed for a (base seed, role, index) triple."""
    return int(np.random.SeedSequence((base, role, index)).generate_state(1)[0])


@dataclass(frozen=True)
class SimCaseSpec:
    """Per-class factor means for one simulation case.

    Mean tuples are (tensor factor 1, tensor factor 2, shared factor,
    matrix factor); each value is the constant mean of the corresponding
    multivariate normal (identity covariance).
    """

    case_id: int
    class1: tuple[float, float, float, float]
    class2: tuple[float, float, float, float]
    tensor_dims: tuple[int, int, int] = TENSOR_DIMS
    matrix_rows: int = MATRIX_DIMS[0]
    rank: int = GEN_RANK


_BASE = (1.0, 1.0, 1.0, 1.0)
SIM_CASES: dict[int, SimCaseSpec] = {
    1: SimCaseSpec(1, _BASE, (1.5, 1.0, 1.0, 1.25)),
    2: SimCaseSpec(2, _BASE, (1.5, 1.0, 1.0, 1.5)),
    3: SimCaseSpec(3, _BASE, (1.5, 1.0, 1.0, 1.75)),
    4: SimCaseSpec(4, _BASE, (1.5, 1.0, 1.0, 2.0)),
    5: SimCaseSpec(5, _BASE, (1.5, 1.0, 1.0, 2.25)),
    6: SimCaseSpec(6, _BASE, (2.0, 1.0, 1.0, 1.0)),
    7: SimCaseSpec(7, _BASE, (1.0, 1.0, 1.0, 2.0)),
    8: SimCaseSpec(8, _BASE, (1.0, 1.0, 2.0, 1.0)),
}


def gen_case(
    spec: SimCaseSpec | int, n_per_class: int, seed: int
) -> list[CoupledSample]:
    """Generate ``n_per_class`` coupled samples per class for one case.

    For each sample, three components of each factor role are drawn from
    the case's normals; the tensor is the rank-3 sum of outer products and
    the matrix shares the third-mode draws as its column factors.
    """
    if isinstance(spec, int):
        if spec not in SIM_CASES:
            raise ValueError(f"unknown case id {spec}; valid: {sorted(SIM_CASES)}")
        spec = SIM_CASES[spec]
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    i1, i2, i3 = spec.tensor_dims
    i4 = spec.matrix_rows
    r = spec.rank
    samples: list[CoupledSample] = []
    for label, means in ((-1, spec.class1), (1, spec.class2)):
        m1, m2, ms, mm = means
        for _ in range(n_per_class):
            f1 = rng.standard_normal((i1, r)) + m1
            f2 = rng.standard_normal((i2, r)) + m2
            fs = rng.standard_normal((i3, r)) + ms
            fm = rng.standard_normal((i4, r)) + mm
            tensor = np.einsum("ir,jr,kr->ijk", f1, f2, fs)
            matrix = fm @ fs.T
            samples.append(CoupledSample(tensor, matrix, label))
    return samples


def stratified_split(
    labels, test_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class random split into (train_idx, test_idx) index arrays.

    The test count per class is ``round(n_class * test_fraction)`` (ties
    round half to even).  Indices partition ``range(len(labels))``.
    """
    y = np.asarray(labels)
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("both classes must be present")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in classes:
        idx = np.flatnonzero(y == cls)
        if idx.size == 0:
            raise ValueError(f"class {cls} is empty")
        idx = idx[rng.permutation(idx.size)]
        n_test = round(idx.size * test_fraction)
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


@dataclass(frozen=True, eq=False)
class MetricsRow:
    """One scoring pass; undefined ratios (0/0) are NaN and excluded from means."""

    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    auc: float

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.accuracy,
            self.precision,
            self.sensitivity,
            self.specificity,
            self.auc,
        )

    def __eq__(self, other):
        if not isinstance(other, MetricsRow):
            return NotImplemented
        # NaN marks an undefined metric; two undefined values are equal.
        return all(
            a == b or (np.isnan(a) and np.isnan(b))
            for a, b in zip(self.as_tuple(), other.as_tuple())
        )


def compute_metrics(labels, scores) -> MetricsRow:
    """Classification metrics from decision scores against +1/-1 labels.

    Predictions are sign(score) with ties mapped to +1.  AUC is the rank
    statistic over positive-negative pairs with 0.5 credit for tied scores.
    """
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError("labels and scores must have equal length")
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("labels must be +1 or -1")
    pred = np.where(s >= 0, 1.0, -1.0)
    tp = float(np.sum((pred > 0) & (y > 0)))
    tn = float(np.sum((pred < 0) & (y < 0)))
    fp = float(np.sum((pred > 0) & (y < 0)))
    fn = float(np.sum((pred < 0) & (y > 0)))

    def ratio(num, den):
        return num / den if den > 0 else float("nan")

    pos = s[y > 0]
    neg = s[y < 0]
    if pos.size and neg.size:
        diff = pos[:, None] - neg[None, :]
        auc = float((np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size)
    else:
        auc = float("nan")
    return MetricsRow(
        accuracy=ratio(tp + tn, y.size),
        precision=ratio(tp, tp + fp),
        sensitivity=ratio(tp, tp + fn),
        specificity=ratio(tn, tn + fp),
        auc=auc,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one benchmark run needs; see ``cstm.config`` for the file form."""

    case: int | None = None
    dataset: str | None = None
    n_per_class: int = 50
    test_fraction: float = 0.2
    repetitions: int = 50
    seed: int = 0
    acmtf: AcmtfHyperParams = AcmtfHyperParams()
    prune_rel: float = 0.05  # drop components below this relative weight
    kernel_kind: str = "rbf"
    kernel_bandwidth: float | None = None  # None: median heuristic per split
    kernel_degree: int = 2
    kernel_offset: float = 1.0
    kernel_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    tune_weights: bool = False
    lambda_grid: tuple[float, ...] = stm.DEFAULT_LAMBDA_GRID
    cv_folds: int = 5
    methods: tuple[str, ...] = METHODS
    tolerate_failures: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.case is None and self.dataset is None:
            raise ValueError("missing: case")
        if self.case is not None and self.case not in SIM_CASES:
            raise ValueError(f"unknown case id {self.case}")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; valid: {METHODS}")
        if len(self.methods) == 0:
            raise ValueError("at least one method is required")
        if any(g <= 0 for g in self.lambda_grid):
            raise ValueError("lambda grid values must be > 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.kernel_bandwidth is not None and self.kernel_bandwidth <= 0:
            raise ValueError("kernel_bandwidth must be > 0")
        if not 0 <= self.prune_rel < 1:
            raise ValueError("prune_rel must be in [0, 1)")
        # Kind/degree/offset validation is delegated to KernelSpec.
        KernelSpec(self.kernel_kind, self.kernel_bandwidth or 1.0,
                   self.kernel_degree, self.kernel_offset)


@dataclass
class MetricsSummary:
    """Per-repetition metric rows, selections, and stage timings."""

    methods: tuple[str, ...]
    rows: dict[str, list[MetricsRow]] = field(default_factory=dict)
    lambdas: dict[str, list[float]] = field(default_factory=dict)
    weights: dict[str, list[tuple[float, float, float]]] = field(default_factory=dict)
    failures: list[tuple[int, str]] = field(default_factory=list)
    decompose_seconds: float = 0.0
    repetitions_seconds: float = 0.0
    mean_final_objective: float = float("nan")

    def mean(self, method: str, metric: str) -> float:
        vals = [getattr(r, metric) for r in self.rows[method]]
        return float(np.nanmean(vals))

    def sd(self, method: str, metric: str) -> float:
        vals = [getattr(r, metric) for r in self.rows[method]]
        return float(np.nanstd(vals))

    def write_results_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("method", "repetition") + tuple(METRIC_NAMES))
            for method in self.methods:
                for rep, row in enumerate(self.rows[method]):
                    w.writerow(
                        [method, rep] + [repr(v) for v in row.as_tuple()]
                    )

    def write_summary_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("method", "metric", "mean", "sd"))
            for method in self.methods:
                for metric in METRIC_NAMES:
                    w.writerow(
                        [method, metric, repr(self.mean(method, metric)),
                         repr(self.sd(method, metric))]
                    )


def _decompose_one(args) -> AcmtfFactors:
    sample, params, seed = args
    return acmtf_decompose(sample, params, seed)


def _cp_one(args) -> KruskalTensor:
    tensor, rank, seed = args
    return cp_als(tensor, rank, tol=1e-8, max_iter=100, seed=seed)


def _map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


_WEIGHT_GRID_STEP = 0.1


def _weight_grid() -> list[tuple[float, float, float]]:
    steps = np.arange(0.0, 1.0 + 1e-9, _WEIGHT_GRID_STEP)
    grid = []
    for a in steps:
        for b in steps:
            c = 1.0 - a - b
            if c >= -1e-9:
                grid.append((float(a), float(b), float(max(c, 0.0))))
    return grid


def _coupled_spec_for(cfg: ExperimentConfig, train_factors, weights):
    if cfg.kernel_kind == "rbf" and cfg.kernel_bandwidth is None:
        return default_coupled_spec(train_factors, weights)
    k = KernelSpec(cfg.kernel_kind, cfg.kernel_bandwidth or 1.0,
                   cfg.kernel_degree, cfg.kernel_offset)
    return CoupledKernelSpec(k, k, k, k, weights)


def _cp_specs_for(cfg: ExperimentConfig, train_tensors):
    if cfg.kernel_kind == "rbf" and cfg.kernel_bandwidth is None:
        return default_cp_specs(train_tensors)
    k = KernelSpec(cfg.kernel_kind, cfg.kernel_bandwidth or 1.0,
                   cfg.kernel_degree, cfg.kernel_offset)
    return (k,) * train_tensors[0].order


def _tune_cstm(train_factors, y_tr, cfg: ExperimentConfig, cv_seed: int):
    """Pick kernel weights (optionally) and lambda on the training part.

    The coupled kernel is linear in its three weights, so the per-part
    Gram matrices are assembled once and weight candidates are scored by
    cheap linear combinations.
    """
    base = _coupled_spec_for(cfg, train_factors, cfg.kernel_weights)
    if not cfg.tune_weights:
        gram = gram_matrix(train_factors, base)
        lam = stm.select_lambda(
            gram, y_tr, cfg.lambda_grid, k=cfg.cv_folds, seed=cv_seed
        )
        return cfg.kernel_weights, base, gram, lam

    masks = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    parts = [
        gram_matrix(
            train_factors,
            CoupledKernelSpec(base.k1_mode1, base.k1_mode2, base.k2, base.k3, m),
        )
        for m in masks
    ]
    best = None
    for w in _weight_grid():
        if sum(w) == 0:
            continue
        gram = w[0] * parts[0] + w[1] * parts[1] + w[2] * parts[2]
        lam = stm.select_lambda(
            gram, y_tr, cfg.lambda_grid, k=cfg.cv_folds, seed=cv_seed
        )
        acc = _cv_accuracy(gram, y_tr, lam, cfg.cv_folds, cv_seed)
        if best is None or acc > best[0]:
            best = (acc, w, gram, lam)
    _, w, gram, lam = best
    spec = CoupledKernelSpec(base.k1_mode1, base.k1_mode2, base.k2, base.k3, w)
    return w, spec, gram, lam


def _cv_accuracy(gram, y, lam, k, seed) -> float:
    rng = np.random.default_rng(seed)
    k = min(k, int(np.sum(y > 0)), int(np.sum(y < 0)))
    if k < 2:
        return 0.0
    folds = stm._stratified_folds(y, k, rng)
    correct = total = 0
    for te in folds:
        tr = np.setdiff1d(np.arange(y.size), te)
        y_tr = y[tr]
        if not (np.any(y_tr > 0) and np.any(y_tr < 0)):
            continue
        sub = gram[np.ix_(tr, tr)]
        problem = stm.QpProblem(sub, y_tr, lam)
        sol = stm.solve_qp(problem)
        bias = stm.recover_bias(sub, y_tr, sol.alpha, problem.box)
        scores = (sol.alpha * y_tr) @ gram[np.ix_(tr, te)] + bias
        pred = np.where(scores >= 0, 1.0, -1.0)
        correct += int(np.sum(pred == y[te]))
        total += te.size
    return correct / total if total else 0.0


def run_experiment(
    cfg: ExperimentConfig, samples: list[CoupledSample] | None = None
) -> MetricsSummary:
    """Run the repeated benchmark for one case (or a supplied dataset).

    Decomposes every sample once (per-sample seeds derived from the config
    seed), then for each repetition: stratified split, median-heuristic
    bandwidths and lambda CV on the training part, dual solve, test scoring.
    """
    if samples is None:
        if cfg.case is None:
            raise ValueError("config has no case and no samples were supplied")
        samples = gen_case(cfg.case, cfg.n_per_class, cfg.seed)
    labels = np.array([s.label for s in samples], dtype=np.float64)
    if np.any(labels == 0):
        raise ValueError("all samples must be labeled")

    rank = cfg.acmtf.rank
    coupled: list[AcmtfFactors] | None = None
    tensors_cp: list[KruskalTensor] | None = None
    matrices_cp: list[KruskalTensor] | None = None
    t0 = time.perf_counter()
    mean_final = float("nan")
    if "cstm" in cfg.methods:
        jobs = [
            (s, cfg.acmtf, derive_seed(cfg.seed, _ROLE_DECOMPOSE, i))
            for i, s in enumerate(samples)
        ]
        raw = _map(_decompose_one, jobs, cfg.threads)
        mean_final = float(np.mean([f.objective_history[-1] for f in raw]))
        coupled = [f.pruned(cfg.prune_rel) for f in raw]
    if "cpstm_tensor" in cfg.methods:
        jobs = [
            (s.tensor, rank, derive_seed(cfg.seed, _ROLE_CPALS, i))
            for i, s in enumerate(samples)
        ]
        tensors_cp = _map(_cp_one, jobs, cfg.threads)
    if "cpstm_matrix" in cfg.methods:
        matrices_cp = [stm.matrix_to_kruskal(s.matrix, rank) for s in samples]
    t_decompose = time.perf_counter() - t0

    summary = MetricsSummary(
        methods=cfg.methods,
        rows={m: [] for m in cfg.methods},
        lambdas={m: [] for m in cfg.methods},
        weights={m: [] for m in cfg.methods},
        decompose_seconds=t_decompose,
        mean_final_objective=mean_final,
    )
    t1 = time.perf_counter()
    for rep in range(cfg.repetitions):
        try:
            _run_repetition(
                cfg, rep, labels, coupled, tensors_cp, matrices_cp, summary
            )
        except Exception as exc:  # noqa: BLE001 - recorded or re-raised below
            if cfg.tolerate_failures:
                seed = derive_seed(cfg.seed, _ROLE_SPLIT, rep)
                summary.failures.append(
                    (rep, f"seed {seed}: {type(exc).__name__}: {exc}")
                )
                continue
            raise
    summary.repetitions_seconds = time.perf_counter() - t1
    return summary


def _run_repetition(cfg, rep, labels, coupled, tensors_cp, matrices_cp, summary):
    split_seed = derive_seed(cfg.seed, _ROLE_SPLIT, rep)
    cv_seed = derive_seed(cfg.seed, _ROLE_CV, rep)
    tr, te = stratified_split(labels, cfg.test_fraction, split_seed)
    y_tr, y_te = labels[tr], labels[te]

    staged = {}
    for method in cfg.methods:
        if method == "cstm":
            train_f = [coupled[i] for i in tr]
            test_f = [coupled[i] for i in te]
            w, spec, gram, lam = _tune_cstm(train_f, y_tr, cfg, cv_seed)
            model = stm.fit(train_f, y_tr, spec, lam, gram=gram)
            scores = stm.decision_many(model, test_f)
        else:
            pool = tensors_cp if method == "cpstm_tensor" else matrices_cp
            train_t = [pool[i] for i in tr]
            test_t = [pool[i] for i in te]
            specs = _cp_specs_for(cfg, train_t)
            gram = cp_gram(train_t, specs)
            lam = stm.select_lambda(
                gram, y_tr, cfg.lambda_grid, k=cfg.cv_folds, seed=cv_seed
            )
            model = stm.cpstm_fit(train_t, y_tr, specs, lam, gram=gram)
            scores = stm.cpstm_decision_many(model, test_t)
            w = (float("nan"),) * 3
        staged[method] = (compute_metrics(y_te, scores), lam, w)
    # All methods succeeded: merge so per-method lists stay aligned even
    # when a repetition fails under tolerate_failures.
    for method, (row, lam, w) in staged.items():
        summary.rows[method].append(row)
        summary.lambdas[method].append(lam)
        summary.weights[method].append(w)
