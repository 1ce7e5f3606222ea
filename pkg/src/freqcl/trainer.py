"""Task-stream training loop, task-boundary hooks, Class-IL/Task-IL
evaluation and the accuracy/forgetting metrics."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .rehearsal import Batch, BufferEntry
from .tensor import no_grad
from .wavelet import freeze_fuser

logger = logging.getLogger(__name__)


class EvalMode(str, enum.Enum):
    CLASS_IL = "class_il"
    TASK_IL = "task_il"


@dataclass
class Task:
    classes: tuple
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class TaskStream:
    tasks: list

    @property
    def class_map(self):
        return [t.classes for t in self.tasks]

    def __len__(self):
        return len(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]


def split_tasks(train_x, train_y, test_x, test_y, n_tasks, class_order=None):
    """Partition a labelled dataset into tasks of consecutive classes.

    With no ``class_order`` classes are assigned in ascending label order.
    """
    classes = np.unique(np.concatenate([train_y, test_y])) if class_order is None else np.asarray(class_order)
    if len(classes) % n_tasks:
        raise ValueError(f"{len(classes)} classes do not split evenly into {n_tasks} tasks")
    if len(set(classes.tolist())) != len(classes):
        raise ValueError("class order repeats a class")
    per = len(classes) // n_tasks
    tasks = []
    for t in range(n_tasks):
        part = tuple(int(c) for c in classes[t * per:(t + 1) * per])
        tr = np.isin(train_y, part)
        te = np.isin(test_y, part)
        tasks.append(Task(part, train_x[tr], train_y[tr], test_x[te], test_y[te]))
    return TaskStream(tasks)


@dataclass
class TaskContext:
    task_index: int
    classes: tuple
    past_classes: frozenset = field(default_factory=frozenset)


def train_task(net, strategy, buffer, optimizer, x, y, ctx, epochs, batch_size=32, rng=None, on_epoch=None):
    """Train on one task; returns ``(epoch_losses, samples_processed)``.

    Every live sample is offered to the buffer exactly once, during the
    first epoch, with the high-frequency input as the fuser produced it at
    that moment.
    """
    rng = np.random.default_rng(rng)
    n = len(y)
    epoch_losses = []
    processed = 0
    net.train()
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            pair = net.frequency_pair(x[idx])
            live = Batch(pair, y[idx])
            loss, logits, samples = strategy.step(net, optimizer, live, buffer, ctx)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at task {ctx.task_index}, epoch {epoch}, step {start // batch_size}")
            processed += samples
            total += loss * len(idx)
            count += len(idx)
            if epoch == 0:
                _offer(buffer, pair, y[idx], logits if strategy.stores_logits else None, ctx.task_index)
        epoch_losses.append(total / max(count, 1))
        logger.debug("task %d epoch %d loss %.4f", ctx.task_index, epoch, epoch_losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, epoch_losses[-1])
    return epoch_losses, processed


def _offer(buffer, pair, labels, logits, task_index):
    low = pair.low.data
    high = pair.high.data
    for i, label in enumerate(labels):
        buffer.offer(BufferEntry(
            low[i].copy(), high[i].copy(), int(label), task_index,
            None if logits is None else logits.data[i].copy(),
        ))


def end_task_hook(net, task_index, strategy=None, freeze=True):
    """Task-boundary bookkeeping: the fuser stops learning after task 0."""
    if freeze and task_index == 0 and not net.fuser.frozen:
        freeze_fuser(net.fuser)
    if strategy is not None:
        strategy.end_task(net, task_index)
    return net


def predict_logits(net, x, batch_size=256):
    was_training = net.training
    net.eval()
    out = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            pair = net.frequency_pair(x[start:start + batch_size])
            out.append(net(pair).data)
    net.train(was_training)
    if not out:
        return np.zeros((0, net.num_classes))
    return np.concatenate(out)


def restricted_argmax(logits, candidates):
    """Argmax over ``candidates`` only; ties go to the lowest class index."""
    allowed = np.zeros(logits.shape[1], dtype=bool)
    allowed[list(candidates)] = True
    return np.argmax(np.where(allowed, logits, -np.inf), axis=1)


def evaluate(net, stream, mode, upto_task, logits_fn=None):
    """Accuracy on each task ``0..upto_task`` (0-based) after training
    through ``upto_task``."""
    mode = EvalMode(mode)
    logits_fn = logits_fn or (lambda x: predict_logits(net, x))
    seen = sorted(c for t in stream.tasks[:upto_task + 1] for c in t.classes)
    row = []
    for tau in range(upto_task + 1):
        task = stream[tau]
        logits = logits_fn(task.test_x)
        candidates = seen if mode is EvalMode.CLASS_IL else task.classes
        pred = restricted_argmax(logits, candidates)
        row.append(float(np.mean(pred == task.test_y)) if len(pred) else 0.0)
    return row


def _check_row(A, t):
    A = np.asarray(A, dtype=float)
    if not 1 <= t <= A.shape[0]:
        raise IndexError(f"task {t} outside 1..{A.shape[0]}")
    return A


def average_accuracy(A, t):
    """Mean accuracy over tasks 1..t after learning task t (1-based ``t``;
    ``A[t-1, tau-1]`` holds the accuracy on task tau after task t)."""
    A = _check_row(A, t)
    return float(np.mean(A[t - 1, :t]))


def forgetting(A, t):
    """Mean drop from each earlier task's best accuracy to its accuracy after task t.

    The best value for task tau is taken over the rows after it was learned.
    """
    A = _check_row(A, t)
    if t == 1:
        return 0.0
    drops = [A[tau:t - 1, tau].max() - A[t - 1, tau] for tau in range(t - 1)]
    return float(np.mean(drops))


@dataclass
class AccuracyMatrix:
    values: np.ndarray

    @classmethod
    def empty(cls, n_tasks):
        return cls(np.full((n_tasks, n_tasks), np.nan))

    def set_row(self, t, row):
        self.values[t, :len(row)] = row

    def average(self, t=None):
        t = self.values.shape[0] if t is None else t
        return average_accuracy(self.values, t)

    def forgetting(self, t=None):
        t = self.values.shape[0] if t is None else t
        return forgetting(self.values, t)

    def lower_triangle(self):
        n = self.values.shape[0]
        return [(t, tau, float(self.values[t, tau])) for t in range(n) for tau in range(t + 1)]


__all__ = [
    "AccuracyMatrix",
    "EvalMode",
    "Task",
    "TaskContext",
    "TaskStream",
    "average_accuracy",
    "end_task_hook",
    "evaluate",
    "forgetting",
    "predict_logits",
    "restricted_argmax",
    "split_tasks",
    "train_task",
]
