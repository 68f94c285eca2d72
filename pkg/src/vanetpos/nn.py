"""Feedforward network estimating street position from RSS readings.

One tanh hidden layer, linear output, inputs and output min-max normalized
to [-1, 1] on the training split only. Training is full-batch gradient
descent (classical momentum) with early stopping on the validation set:
the returned weights are the snapshot from the best validation epoch. The
sweep trains one network per (hidden size, seed) pair and ranks the
results the way the experiment logs report them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel import SurveyDataset
from .errors import DimensionMismatch, EmptyBatch, TooFewSamples
from .metrics import MetricsReport, regression_metrics

_VAL_FRACTION = 0.15
_TEST_FRACTION = 0.15


@dataclass
class MlpModel:
    """Single-hidden-layer regression network plus its normalization."""

    n_inputs: int
    n_hidden: int
    w1: np.ndarray  # (n_hidden, n_inputs)
    b1: np.ndarray  # (n_hidden,)
    w2: np.ndarray  # (n_hidden,)
    b2: float
    in_min: np.ndarray  # (n_inputs,)
    in_max: np.ndarray  # (n_inputs,)
    out_min: float = -1.0
    out_max: float = 1.0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MlpModel):
            return NotImplemented
        return (
            self.n_inputs == other.n_inputs
            and self.n_hidden == other.n_hidden
            and np.array_equal(self.w1, other.w1)
            and np.array_equal(self.b1, other.b1)
            and np.array_equal(self.w2, other.w2)
            and self.b2 == other.b2
            and np.array_equal(self.in_min, other.in_min)
            and np.array_equal(self.in_max, other.in_max)
            and self.out_min == other.out_min
            and self.out_max == other.out_max
        )

    def copy(self) -> "MlpModel":
        return MlpModel(
            n_inputs=self.n_inputs,
            n_hidden=self.n_hidden,
            w1=self.w1.copy(),
            b1=self.b1.copy(),
            w2=self.w2.copy(),
            b2=self.b2,
            in_min=self.in_min.copy(),
            in_max=self.in_max.copy(),
            out_min=self.out_min,
            out_max=self.out_max,
        )


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint train/validation/test index partition of a dataset."""

    train: Tuple[int, ...]
    validation: Tuple[int, ...]
    test: Tuple[int, ...]


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 6
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_epochs <= 0 or self.patience <= 0 or self.learning_rate <= 0:
            raise ValueError("max_epochs, patience and learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse_m2: float
    val_mse_m2: float


@dataclass(frozen=True)
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float


@dataclass(frozen=True)
class NnDataset:
    """Regression samples: one RSS vector per row, street position target."""

    inputs: np.ndarray  # (n, n_inputs)
    targets: np.ndarray  # (n,)
    feature_names: Tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.targets)


@dataclass(frozen=True)
class SweepConfig:
    hidden_sizes: Tuple[int, ...] = tuple(range(2, 11))
    seeds: Tuple[int, ...] = tuple(range(20))
    train: TrainConfig = TrainConfig()


@dataclass(frozen=True)
class SweepRow:
    rank: int
    hidden: int
    seed: int
    test: MetricsReport
    all: MetricsReport


@dataclass(frozen=True)
class SweepTable:
    rows: Tuple[SweepRow, ...]

    def best(self) -> SweepRow:
        return self.rows[0]


def split_dataset(n: int, seed: int) -> SplitIndices:
    """Shuffled 70/15/15 split; validation and test take floor(0.15 n) each."""
    if n < 7:
        raise TooFewSamples(f"need >= 7 samples to split, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(math.floor(_TEST_FRACTION * n))
    n_val = int(math.floor(_VAL_FRACTION * n))
    test = tuple(int(i) for i in perm[:n_test])
    validation = tuple(int(i) for i in perm[n_test : n_test + n_val])
    train = tuple(int(i) for i in perm[n_test + n_val :])
    return SplitIndices(train=train, validation=validation, test=test)


def init_mlp(n_inputs: int, n_hidden: int, seed: int) -> MlpModel:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero biases.

    Normalization starts as the identity ([-1, 1] onto itself); training
    replaces it with ranges measured on the training split.
    """
    if n_inputs < 1 or n_hidden < 1:
        raise ValueError("n_inputs and n_hidden must be >= 1")
    rng = np.random.default_rng(seed)
    bound1 = 1.0 / math.sqrt(n_inputs)
    bound2 = 1.0 / math.sqrt(n_hidden)
    return MlpModel(
        n_inputs=n_inputs,
        n_hidden=n_hidden,
        w1=rng.uniform(-bound1, bound1, size=(n_hidden, n_inputs)),
        b1=np.zeros(n_hidden),
        w2=rng.uniform(-bound2, bound2, size=n_hidden),
        b2=0.0,
        in_min=-np.ones(n_inputs),
        in_max=np.ones(n_inputs),
    )


def _normalize_inputs(model: MlpModel, x: np.ndarray) -> np.ndarray:
    return 2.0 * (x - model.in_min) / (model.in_max - model.in_min) - 1.0


def _denormalize_output(model: MlpModel, yn):
    return (yn + 1.0) / 2.0 * (model.out_max - model.out_min) + model.out_min


def _normalize_targets(model: MlpModel, y: np.ndarray) -> np.ndarray:
    return 2.0 * (y - model.out_min) / (model.out_max - model.out_min) - 1.0


def _forward_normalized(model: MlpModel, xn: np.ndarray) -> np.ndarray:
    hidden = np.tanh(xn @ model.w1.T + model.b1)
    return hidden @ model.w2 + model.b2


def forward(model: MlpModel, inputs: Sequence[float]) -> float:
    """Estimate position (meters) from one RSS vector (dBm per RSU)."""
    x = np.asarray(inputs, dtype=float)
    if x.shape != (model.n_inputs,):
        raise DimensionMismatch(
            f"expected {model.n_inputs} inputs, got shape {x.shape}"
        )
    xn = _normalize_inputs(model, x[None, :])
    yn = _forward_normalized(model, xn)[0]
    return float(_denormalize_output(model, yn))


def forward_batch(model: MlpModel, inputs: np.ndarray) -> np.ndarray:
    """Vectorized forward over rows of `inputs`."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise DimensionMismatch(
            f"expected (n, {model.n_inputs}) inputs, got shape {x.shape}"
        )
    xn = _normalize_inputs(model, x)
    return _denormalize_output(model, _forward_normalized(model, xn))


def batch_loss(model: MlpModel, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error in the normalized output space."""
    xn = _normalize_inputs(model, np.asarray(inputs, dtype=float))
    yn = _normalize_targets(model, np.asarray(targets, dtype=float))
    pred = _forward_normalized(model, xn)
    return float(np.mean((pred - yn) ** 2))


def gradients(
    model: MlpModel, inputs: np.ndarray, targets: np.ndarray
) -> Gradients:
    """Backpropagation gradients of the normalized-space batch MSE."""
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise EmptyBatch("gradients needs a nonempty (n, n_inputs) batch")
    if x.shape[1] != model.n_inputs or len(y) != len(x):
        raise DimensionMismatch(
            f"batch shape {x.shape} vs targets {y.shape} does not match "
            f"a {model.n_inputs}-input model"
        )
    n = len(x)
    xn = _normalize_inputs(model, x)
    yn = _normalize_targets(model, y)

    a1 = xn @ model.w1.T + model.b1
    h1 = np.tanh(a1)
    pred = h1 @ model.w2 + model.b2

    d_pred = 2.0 * (pred - yn) / n  # (n,)
    g_w2 = h1.T @ d_pred
    g_b2 = float(np.sum(d_pred))
    d_h1 = np.outer(d_pred, model.w2)
    d_a1 = d_h1 * (1.0 - h1**2)
    g_w1 = d_a1.T @ xn
    g_b1 = d_a1.sum(axis=0)
    return Gradients(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2)


def _fit_normalization(
    model: MlpModel, inputs: np.ndarray, targets: np.ndarray
) -> MlpModel:
    in_min = inputs.min(axis=0)
    in_max = inputs.max(axis=0)
    if np.any(in_max - in_min <= 0):
        raise ValueError("degenerate input range in the training split")
    out_min = float(targets.min())
    out_max = float(targets.max())
    if out_max - out_min <= 0:
        raise ValueError("degenerate target range in the training split")
    m = model.copy()
    m.in_min = in_min.astype(float)
    m.in_max = in_max.astype(float)
    m.out_min = out_min
    m.out_max = out_max
    return m


def train(
    model: MlpModel,
    dataset: NnDataset,
    splits: SplitIndices,
    config: TrainConfig,
) -> Tuple[MlpModel, List[EpochRecord]]:
    """Full-batch momentum gradient descent with best-validation stopping.

    Stops after `patience` consecutive epochs without a new validation
    minimum (or at max_epochs) and returns the best-validation snapshot.
    History MSEs are reported in meters squared.
    """
    if len(splits.train) == 0:
        raise TooFewSamples("training split is empty")
    x_train = dataset.inputs[list(splits.train)]
    y_train = dataset.targets[list(splits.train)]
    x_val = dataset.inputs[list(splits.validation)]
    y_val = dataset.targets[list(splits.validation)]

    current = _fit_normalization(model, x_train, y_train)
    to_m2 = ((current.out_max - current.out_min) / 2.0) ** 2

    best = current.copy()
    best_val = batch_loss(current, x_val, y_val) if len(x_val) else math.inf
    epochs_since_best = 0
    history: List[EpochRecord] = []
    v_w1 = np.zeros_like(current.w1)
    v_b1 = np.zeros_like(current.b1)
    v_w2 = np.zeros_like(current.w2)
    v_b2 = 0.0

    for epoch in range(1, config.max_epochs + 1):
        grads = gradients(current, x_train, y_train)
        v_w1 = config.momentum * v_w1 - config.learning_rate * grads.w1
        v_b1 = config.momentum * v_b1 - config.learning_rate * grads.b1
        v_w2 = config.momentum * v_w2 - config.learning_rate * grads.w2
        v_b2 = config.momentum * v_b2 - config.learning_rate * grads.b2
        current.w1 = current.w1 + v_w1
        current.b1 = current.b1 + v_b1
        current.w2 = current.w2 + v_w2
        current.b2 = current.b2 + v_b2

        train_mse = batch_loss(current, x_train, y_train)
        val_mse = (
            batch_loss(current, x_val, y_val) if len(x_val) else train_mse
        )
        history.append(
            EpochRecord(
                epoch=epoch,
                train_mse_m2=train_mse * to_m2,
                val_mse_m2=val_mse * to_m2,
            )
        )
        if val_mse < best_val:
            best_val = val_mse
            best = current.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break
    return best, history


def dataset_from_survey(survey: SurveyDataset) -> NnDataset:
    """Pivot a survey grid into (RSS vector, position) training rows."""
    rsu_ids = survey.rsu_ids()
    by_cell: Dict[float, Dict[str, float]] = {}
    for s in survey.samples:
        by_cell.setdefault(s.x_m, {})[s.rsu_id] = s.rss_dbm
    xs = sorted(by_cell.keys())
    rows = []
    for x in xs:
        cell = by_cell[x]
        if set(cell.keys()) != set(rsu_ids):
            raise ValueError(f"incomplete survey grid at x={x}")
        rows.append([cell[r] for r in rsu_ids])
    return NnDataset(
        inputs=np.asarray(rows, dtype=float),
        targets=np.asarray(xs, dtype=float),
        feature_names=tuple(rsu_ids),
    )


def dataset_from_columns(
    samples, rsu_ids: Optional[Sequence[str]] = None
) -> NnDataset:
    """Build an NnDataset from flat RssSample rows (e.g. a survey CSV)."""
    by_cell: Dict[float, Dict[str, float]] = {}
    seen = set()
    for s in samples:
        by_cell.setdefault(s.x_m, {})[s.rsu_id] = s.rss_dbm
        seen.add(s.rsu_id)
    ids = tuple(sorted(rsu_ids if rsu_ids is not None else seen))
    xs = sorted(by_cell.keys())
    rows = []
    for x in xs:
        cell = by_cell[x]
        if set(ids) - set(cell.keys()):
            raise ValueError(f"incomplete survey grid at x={x}")
        rows.append([cell[r] for r in ids])
    return NnDataset(
        inputs=np.asarray(rows, dtype=float),
        targets=np.asarray(xs, dtype=float),
        feature_names=ids,
    )


def _evaluate_row(
    hidden: int,
    seed: int,
    dataset: NnDataset,
    config: TrainConfig,
) -> Tuple[MetricsReport, MetricsReport]:
    splits = split_dataset(dataset.n, seed)
    model = init_mlp(dataset.inputs.shape[1], hidden, seed)
    trained, _ = train(model, dataset, splits, replace(config, seed=seed))

    pred_all = forward_batch(trained, dataset.inputs)
    test_idx = list(splits.test)
    report_test = regression_metrics(
        dataset.targets[test_idx], pred_all[test_idx]
    )
    report_all = regression_metrics(dataset.targets, pred_all)
    return report_test, report_all


def sweep(dataset: NnDataset, config: SweepConfig) -> SweepTable:
    """Train the full (hidden size x seed) grid and rank the results.

    Sorted by MSE over all samples, then max absolute error over all
    samples; ties break on (hidden, seed) so the table is reproducible
    regardless of execution order.
    """
    results = []
    for hidden in config.hidden_sizes:
        for seed in config.seeds:
            report_test, report_all = _evaluate_row(
                hidden, seed, dataset, config.train
            )
            results.append((hidden, seed, report_test, report_all))
    results.sort(
        key=lambda r: (r[3].mse, r[3].max_abs_error, r[0], r[1])
    )
    rows = tuple(
        SweepRow(rank=i + 1, hidden=h, seed=s, test=t, all=a)
        for i, (h, s, t, a) in enumerate(results)
    )
    return SweepTable(rows=rows)
