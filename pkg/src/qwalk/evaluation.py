"""Classification metrics, the training loop, and ensemble statistics.

evaluate() is strictly read-only on the model. train() runs an
epoch/batch schedule of with-replacement SGD and records a history row
per epoch: training loss always, test metrics on a fixed cadence and on
the final epoch. Metrics with a zero denominator (no examples or no
predictions of a class) are reported as None, never as 0, so ensemble
averages are not dragged toward zero by undefined entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cqcnn import CqcnnModel, forward, loss_and_gradients, score_loss, sgd_step
from .datasets import Dataset
from .walkers import CLASSICAL, QUANTUM

__all__ = [
    "Metrics",
    "Schedule",
    "TrainingError",
    "EnsembleStats",
    "evaluate",
    "train",
    "ensemble_stats",
    "write_history_csv",
    "write_metrics_csv",
]

_CLASS_NAMES = ("classical", "quantum")


class TrainingError(RuntimeError):
    """The training loss stopped being finite."""


@dataclass(frozen=True, eq=False)
class Metrics:
    mean_loss: float
    accuracy: float
    confusion: np.ndarray  # [true class, predicted class] counts
    precision: tuple[float | None, float | None]
    recall: tuple[float | None, float | None]


def evaluate(
    model: CqcnnModel,
    dataset: Dataset,
    kappas: Sequence[float] | None = None,
    inverse_class_weights: bool = False,
) -> Metrics:
    """Score every example without touching the model.

    The loss is weighted by the evaluated dataset's own class fractions
    unless explicit kappas are given.
    """
    if kappas is None:
        kappas = dataset.class_fractions
    confusion = np.zeros((2, 2), dtype=np.int64)
    total_loss = 0.0
    for example in dataset:
        x = forward(model, example.graph)
        predicted = QUANTUM if x[QUANTUM] > x[CLASSICAL] else CLASSICAL
        confusion[example.label, predicted] += 1
        total_loss += score_loss(x, example.label, kappas, inverse_class_weights)
    total = int(confusion.sum())
    diag = np.diagonal(confusion)
    row_sums = confusion.sum(axis=1)
    col_sums = confusion.sum(axis=0)
    recall = tuple(
        float(diag[c] / row_sums[c]) if row_sums[c] > 0 else None for c in (0, 1)
    )
    precision = tuple(
        float(diag[c] / col_sums[c]) if col_sums[c] > 0 else None for c in (0, 1)
    )
    return Metrics(
        mean_loss=total_loss / total,
        accuracy=float(diag.sum()) / total,
        confusion=confusion,
        precision=precision,
        recall=recall,
    )


@dataclass(frozen=True)
class Schedule:
    """How long and how densely to train, and where the batch draws come from."""

    epochs: int
    batches_per_epoch: int = 1
    batch_size: int = 3
    seed: int = 0
    eval_every: int = 10
    inverse_class_weights: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batches_per_epoch < 1:
            raise ValueError(f"batches_per_epoch must be >= 1, got {self.batches_per_epoch}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")


def _as_test_list(test_set) -> list[Dataset]:
    if test_set is None:
        return []
    if isinstance(test_set, Dataset):
        return [test_set]
    return list(test_set)


def _test_columns(model: CqcnnModel, tests: list[Dataset], row: dict) -> None:
    for i, test in enumerate(tests):
        suffix = "" if len(tests) == 1 else f"_{i + 1}"
        m = evaluate(model, test)
        row[f"test_loss{suffix}"] = m.mean_loss
        row[f"test_accuracy{suffix}"] = m.accuracy
        for c, name in enumerate(_CLASS_NAMES):
            row[f"test_precision_{name}{suffix}"] = m.precision[c]
            row[f"test_recall_{name}{suffix}"] = m.recall[c]


def train(
    model: CqcnnModel,
    train_set: Dataset,
    test_set=None,
    schedule: Schedule = Schedule(epochs=2000),
) -> tuple[CqcnnModel, list[dict]]:
    """Run the schedule and return the trained model plus its history.

    Batches are drawn uniformly with replacement. The class weights come
    from the training set. `test_set` may be one dataset or a sequence;
    each gets its own suffixed history columns. Epoch 0 records the
    untrained baseline; zero-epoch schedules return an empty history.
    """
    tests = _as_test_list(test_set)
    if schedule.epochs == 0:
        return model, []
    kappas = train_set.class_fractions
    rng = np.random.default_rng(schedule.seed)
    examples = train_set.examples

    first: dict = {
        "epoch": 0,
        "train_loss": evaluate(
            model, train_set, kappas, schedule.inverse_class_weights
        ).mean_loss,
    }
    _test_columns(model, tests, first)
    history = [first]

    for epoch in range(1, schedule.epochs + 1):
        epoch_loss = 0.0
        for _ in range(schedule.batches_per_epoch):
            picks = rng.integers(0, len(examples), size=schedule.batch_size)
            batch = [examples[i] for i in picks]
            value, grads = loss_and_gradients(
                model, batch, kappas, schedule.inverse_class_weights
            )
            if not math.isfinite(value):
                raise TrainingError(f"loss became non-finite at epoch {epoch}")
            model = sgd_step(model, grads)
            epoch_loss += value
        row: dict = {"epoch": epoch, "train_loss": epoch_loss / schedule.batches_per_epoch}
        if epoch % schedule.eval_every == 0 or epoch == schedule.epochs:
            _test_columns(model, tests, row)
        history.append(row)
    return model, history


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Elementwise mean and mean squared deviation across runs."""

    runs: int
    last_layer_mean: np.ndarray
    last_layer_msd: np.ndarray
    epochs: np.ndarray
    history_mean: dict[str, np.ndarray]
    history_msd: dict[str, np.ndarray]


def ensemble_stats(runs: Sequence[tuple[CqcnnModel, list[dict]]]) -> EnsembleStats:
    """Average an ensemble of (model, history) pairs sharing one architecture."""
    if not runs:
        raise ValueError("ensemble_stats needs at least one run")
    models = [m for m, _ in runs]
    histories = [h for _, h in runs]
    head = models[0]
    for m in models[1:]:
        if (
            m.variant != head.variant
            or m.n_max != head.n_max
            or m.weights["last"].shape != head.weights["last"].shape
        ):
            raise ValueError("ensemble runs must share one architecture")
    stack = np.stack([m.weights["last"] for m in models])
    mean = stack.mean(axis=0)
    msd = ((stack - mean) ** 2).mean(axis=0)

    lengths = {len(h) for h in histories}
    if len(lengths) != 1:
        raise ValueError("ensemble histories must share one schedule")
    epochs = np.array([row["epoch"] for row in histories[0]], dtype=np.int64)
    for h in histories[1:]:
        if any(row["epoch"] != e for row, e in zip(h, epochs)):
            raise ValueError("ensemble histories must share one schedule")

    history_mean: dict[str, np.ndarray] = {}
    history_msd: dict[str, np.ndarray] = {}
    columns: list[str] = []
    for row in histories[0]:
        for key in row:
            if key != "epoch" and key not in columns:
                columns.append(key)
    for key in columns:
        table = np.full((len(runs), len(epochs)), np.nan)
        for r, h in enumerate(histories):
            for i, row in enumerate(h):
                value = row.get(key)
                if value is not None:
                    table[r, i] = value
        col_mean = np.full(len(epochs), np.nan)
        col_msd = np.full(len(epochs), np.nan)
        complete = ~np.isnan(table).any(axis=0)
        col_mean[complete] = table[:, complete].mean(axis=0)
        col_msd[complete] = ((table[:, complete] - col_mean[complete]) ** 2).mean(axis=0)
        history_mean[key] = col_mean
        history_msd[key] = col_msd
    return EnsembleStats(
        runs=len(runs),
        last_layer_mean=mean,
        last_layer_msd=msd,
        epochs=epochs,
        history_mean=history_mean,
        history_msd=history_msd,
    )


# ====== CSV export ======


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_history_csv(history: list[dict], path) -> None:
    """One row per epoch; columns appear in first-use order, blanks for absent."""
    columns: list[str] = ["epoch", "train_loss"]
    for row in history:
        for key in row:
            if key not in columns:
                columns.append(key)
    lines = [",".join(columns)]
    for row in history:
        lines.append(",".join(_format_cell(row.get(c)) for c in columns))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_metrics_csv(metrics: Metrics, path) -> None:
    """Long-format metric,value rows; undefined metrics stay blank."""
    rows: list[tuple[str, object]] = [
        ("accuracy", metrics.accuracy),
        ("mean_loss", metrics.mean_loss),
    ]
    for c, name in enumerate(_CLASS_NAMES):
        rows.append((f"precision_{name}", metrics.precision[c]))
        rows.append((f"recall_{name}", metrics.recall[c]))
    for t, t_name in enumerate(_CLASS_NAMES):
        for p, p_name in enumerate(_CLASS_NAMES):
            rows.append((f"confusion_{t_name}_{p_name}", int(metrics.confusion[t, p])))
    lines = ["metric,value"] + [f"{k},{_format_cell(v)}" for k, v in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
