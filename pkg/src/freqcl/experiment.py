"""End-to-end experiment driver and the variant/selection sweeps."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, with_overrides
from .data import load_dataset
from .estimator import FrequencyReplayClassifier
from .model import (
    AggregatorVariant,
    ScalingMode,
    backbone_param_count,
    build_baseline,
    estimate_activation_memory,
    flops_forward,
    flops_train,
    param_count,
)
from .tensor import default_dtype
from .trainer import AccuracyMatrix, EvalMode, evaluate, predict_logits, split_tasks
from .wavelet import Selection

logger = logging.getLogger(__name__)


@dataclass
class Report:
    config: ExperimentConfig
    class_il: AccuracyMatrix
    task_il: AccuracyMatrix
    curves: list
    counts: dict
    wall_time: float
    learner: FrequencyReplayClassifier | None = field(default=None, repr=False)

    @property
    def n_tasks(self):
        return self.class_il.values.shape[0]

    def summary(self):
        t = self.n_tasks
        return {
            "tasks": t,
            "acc_class_il": self.class_il.average(t),
            "acc_task_il": self.task_il.average(t),
            "forgetting_class_il": self.class_il.forgetting(t),
            "forgetting_task_il": self.task_il.forgetting(t),
            "acc_class_il_per_task": [self.class_il.average(i) for i in range(1, t + 1)],
            "acc_task_il_per_task": [self.task_il.average(i) for i in range(1, t + 1)],
            **self.counts,
            "wall_time_s": self.wall_time,
        }


def make_learner(config):
    s = config.strategy
    return FrequencyReplayClassifier(
        n_classes=config.dataset.num_classes,
        strategy=s.kind.value,
        buffer_capacity=config.buffer_capacity,
        variant=config.variant.value,
        selection=config.selection.value,
        scaling_mode=config.backbone.scaling_mode.value,
        base_width=config.backbone.base_width,
        blocks_per_stage=config.backbone.blocks_per_stage,
        epochs=config.epochs,
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        batch_size=config.batch_size,
        replay_batch_size=config.replay_batch_size,
        alpha=s.alpha,
        beta=s.beta,
        plastic_decay=s.plastic_decay,
        stable_decay=s.stable_decay,
        plastic_update_prob=s.plastic_update_prob,
        stable_update_prob=s.stable_update_prob,
        consistency_weight=s.consistency_weight,
        freeze_fuser=config.freeze_fuser,
        precision=config.precision,
        random_state=config.seed,
    )


def count_model(config, samples_processed=0):
    """Parameter, FLOP and memory accounting for ``config``'s dual network
    next to the full single-branch baseline."""
    with default_dtype(config.precision):
        learner = make_learner(config)
        learner._initialize(config.backbone.in_channels, config.dataset.num_classes)
        return _counts(config, learner.net_, samples_processed)


def _counts(config, net, samples_processed):
    shape = (config.backbone.in_channels, config.dataset.image_size, config.dataset.image_size)
    baseline = build_baseline(config.backbone, rng=0)
    step_batch = config.batch_size + (config.replay_batch_size if config.buffer_capacity else 0)
    itemsize = np.dtype(config.precision).itemsize
    half = (shape[0], shape[1] // 2, shape[2] // 2)
    entry_bytes = 2 * int(np.prod(half)) * itemsize
    return {
        "params_total": param_count(net),
        "params_backbone": backbone_param_count(net),
        "baseline_params_total": param_count(baseline),
        "baseline_params_backbone": backbone_param_count(baseline),
        "backbone_param_ratio": backbone_param_count(net) / backbone_param_count(baseline),
        "flops_forward_per_sample": flops_forward(net, shape),
        "baseline_flops_forward_per_sample": flops_forward(baseline, shape),
        "samples_processed": int(samples_processed),
        "flops_train": flops_train(net, shape, samples_processed),
        "baseline_flops_train": flops_train(baseline, shape, samples_processed),
        "activation_memory_bytes": estimate_activation_memory(net, shape, step_batch, itemsize),
        "baseline_activation_memory_bytes": estimate_activation_memory(baseline, shape, step_batch, itemsize),
        "buffer_entry_bytes": entry_bytes,
        "buffer_full_image_entry_bytes": int(np.prod(shape)) * itemsize,
        "buffer_bytes_at_capacity": entry_bytes * config.buffer_capacity,
    }


def run_experiment(config, data=None, on_task=None):
    """Train through every task of ``config`` and evaluate after each one.

    ``data`` may supply pre-loaded ``(train_x, train_y, test_x, test_y)``.
    """
    start = time.perf_counter()
    train_x, train_y, test_x, test_y = data if data is not None else load_dataset(config.dataset)
    dtype = np.dtype(config.precision)
    stream = split_tasks(train_x.astype(dtype), train_y, test_x.astype(dtype), test_y,
                         config.tasks, config.class_order)
    learner = make_learner(config)
    class_il = AccuracyMatrix.empty(config.tasks)
    task_il = AccuracyMatrix.empty(config.tasks)
    for t, task in enumerate(stream.tasks):
        learner.partial_fit(task.train_x, task.train_y)
        with default_dtype(config.precision):
            cache = {}

            def logits_fn(x):
                key = id(x)
                if key not in cache:
                    cache[key] = predict_logits(learner.eval_net_, x)
                return cache[key]

            class_il.set_row(t, evaluate(learner.eval_net_, stream, EvalMode.CLASS_IL, t, logits_fn))
            task_il.set_row(t, evaluate(learner.eval_net_, stream, EvalMode.TASK_IL, t, logits_fn))
        logger.info("task %d/%d: class-IL %s task-IL %s", t + 1, config.tasks,
                    np.round(class_il.values[t, :t + 1], 4).tolist(), np.round(task_il.values[t, :t + 1], 4).tolist())
        if on_task is not None:
            on_task(t, learner)
    with default_dtype(config.precision):
        counts = _counts(config, learner.net_, learner.samples_processed_)
    return Report(config, class_il, task_il, list(learner.loss_curve_), counts,
                  time.perf_counter() - start, learner)


def ablation_grid(config):
    """Named config variants: every aggregator design, the two single-axis
    reductions, and every high-frequency input selection."""
    grid = {}
    for variant in AggregatorVariant:
        grid[f"variant={variant.value}"] = with_overrides(config, variant=variant)
    for mode in (ScalingMode.HALVE_WIDTH_ONLY, ScalingMode.HALVE_DEPTH_ONLY):
        grid[f"scaling={mode.value}"] = with_overrides(config, variant=AggregatorVariant.MUTUAL, scaling_mode=mode)
    for sel in Selection:
        grid[f"selection={sel.value}"] = with_overrides(config, variant=AggregatorVariant.MUTUAL, selection=sel)
    return grid


def run_ablation(config, data=None):
    """Run every grid entry; returns ``{name: Report}``."""
    if data is None:
        data = load_dataset(config.dataset)
    reports = {}
    for name, cfg in ablation_grid(config).items():
        logger.info("ablation %s", name)
        reports[name] = run_experiment(cfg, data=data)
    return reports
