"""scikit-learn style front ends.

:class:`HaarDecomposer` is a stateless transformer exposing the wavelet
bands; :class:`FrequencyReplayClassifier` learns a stream of tasks through
repeated :meth:`~FrequencyReplayClassifier.partial_fit` calls, one per task.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .model import AggregatorVariant, BackboneConfig, ScalingMode, build_dual_net
from .optim import SGD
from .rehearsal import ReplayBuffer, StrategyConfig, make_strategy
from .tensor import default_dtype
from .trainer import TaskContext, end_task_hook, predict_logits, restricted_argmax, train_task
from .validation import check_images, check_labels
from .wavelet import Selection, WaveletQuad, dwt2d, idwt2d


class HaarDecomposer(TransformerMixin, BaseEstimator):
    """Map ``(N, C, H, W)`` images to ``(N, 4C, H/2, W/2)`` stacked
    ll, lh, hl, hh bands."""

    def fit(self, X, y=None):
        X = check_images(X)
        self.n_channels_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_channels_")
        X = check_images(X)
        if X.shape[1] != self.n_channels_:
            raise ValueError(f"fitted on {self.n_channels_} channels, got {X.shape[1]}")
        q = dwt2d(X)
        return np.concatenate([q.ll, q.lh, q.hl, q.hh], axis=1)

    def inverse_transform(self, Z):
        check_is_fitted(self, "n_channels_")
        Z = np.asarray(Z)
        c = self.n_channels_
        return idwt2d(WaveletQuad(Z[:, :c], Z[:, c:2 * c], Z[:, 2 * c:3 * c], Z[:, 3 * c:]))


class FrequencyReplayClassifier(ClassifierMixin, BaseEstimator):
    """Rehearsal-based continual learner on wavelet-decomposed images.

    Each :meth:`partial_fit` call is one task. ``predict`` scores over all
    classes seen so far (class-incremental); pass ``task`` to restrict the
    prediction to one task's classes (task-incremental).

    Parameters mirror the experiment config keys; see the README for their
    meaning and defaults.
    """

    def __init__(
        self,
        n_classes=None,
        strategy="er",
        buffer_capacity=125,
        variant="mutual",
        selection="fuse_no_ll",
        scaling_mode="halve_both",
        base_width=64,
        blocks_per_stage=(2, 2, 2, 2),
        epochs=5,
        lr=0.03,
        momentum=0.0,
        weight_decay=0.0,
        batch_size=32,
        replay_batch_size=32,
        alpha=0.1,
        beta=0.5,
        plastic_decay=0.999,
        stable_decay=0.9999,
        plastic_update_prob=0.9,
        stable_update_prob=0.1,
        consistency_weight=0.1,
        freeze_fuser=True,
        precision="float32",
        random_state=None,
    ):
        self.n_classes = n_classes
        self.strategy = strategy
        self.buffer_capacity = buffer_capacity
        self.variant = variant
        self.selection = selection
        self.scaling_mode = scaling_mode
        self.base_width = base_width
        self.blocks_per_stage = blocks_per_stage
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.replay_batch_size = replay_batch_size
        self.alpha = alpha
        self.beta = beta
        self.plastic_decay = plastic_decay
        self.stable_decay = stable_decay
        self.plastic_update_prob = plastic_update_prob
        self.stable_update_prob = stable_update_prob
        self.consistency_weight = consistency_weight
        self.freeze_fuser = freeze_fuser
        self.precision = precision
        self.random_state = random_state

    def _strategy_config(self):
        return StrategyConfig(
            kind=self.strategy, alpha=self.alpha, beta=self.beta,
            plastic_decay=self.plastic_decay, stable_decay=self.stable_decay,
            plastic_update_prob=self.plastic_update_prob, stable_update_prob=self.stable_update_prob,
            consistency_weight=self.consistency_weight,
        )

    def _initialize(self, n_channels, n_classes):
        seeds = np.random.SeedSequence(self.random_state).spawn(4)
        model_seed, buffer_seed, strategy_seed, shuffle_seed = (np.random.default_rng(s) for s in seeds)
        config = BackboneConfig(
            base_width=self.base_width, blocks_per_stage=tuple(self.blocks_per_stage),
            num_classes=n_classes, scaling_mode=ScalingMode(self.scaling_mode), in_channels=n_channels,
        )
        self.net_ = build_dual_net(config, AggregatorVariant(self.variant), Selection(self.selection), rng=model_seed)
        self.buffer_ = ReplayBuffer(self.buffer_capacity, rng=buffer_seed)
        self.strategy_ = make_strategy(self._strategy_config(), self.replay_batch_size, rng=strategy_seed)
        self.optimizer_ = SGD(self.net_.parameters(), self.lr, self.momentum, self.weight_decay)
        self._shuffle_rng = shuffle_seed
        self.classes_ = np.arange(n_classes)
        self.n_channels_ = n_channels
        self.task_classes_ = []
        self.loss_curve_ = []
        self.samples_processed_ = 0

    def partial_fit(self, X, y, classes=None):
        """Learn one more task from ``(X, y)``."""
        with default_dtype(self.precision):
            X = check_images(X, dtype=np.dtype(self.precision))
            if not hasattr(self, "net_"):
                n_classes = self.n_classes
                if n_classes is None:
                    if classes is None:
                        raise ValueError("pass n_classes or classes= on the first partial_fit call")
                    n_classes = len(classes)
                self._initialize(X.shape[1], int(n_classes))
            y = check_labels(y, len(X), len(self.classes_))
            task_index = len(self.task_classes_)
            past = frozenset(c for part in self.task_classes_ for c in part)
            task_classes = tuple(int(c) for c in np.unique(y))
            ctx = TaskContext(task_index, task_classes, past)
            self.task_classes_.append(task_classes)
            losses, processed = train_task(
                self.net_, self.strategy_, self.buffer_, self.optimizer_, X, y, ctx,
                self.epochs, self.batch_size, rng=self._shuffle_rng,
            )
            self.samples_processed_ += processed
            self.loss_curve_.extend((task_index, e, l) for e, l in enumerate(losses))
            end_task_hook(self.net_, task_index, self.strategy_, freeze=self.freeze_fuser)
        return self

    def fit(self, X, y):
        """Train from scratch on ``(X, y)`` as a single task."""
        for attr in ("net_", "buffer_", "strategy_", "optimizer_"):
            self.__dict__.pop(attr, None)
        y = np.asarray(y)
        classes = None if self.n_classes is not None else np.unique(y)
        if classes is not None:
            classes = np.arange(int(classes.max()) + 1)
        return self.partial_fit(X, y, classes=classes)

    @property
    def eval_net_(self):
        return self.strategy_.eval_net(self.net_)

    @property
    def seen_classes_(self):
        return sorted(c for part in self.task_classes_ for c in part)

    def decision_function(self, X):
        check_is_fitted(self, "net_")
        with default_dtype(self.precision):
            X = check_images(X, dtype=np.dtype(self.precision))
            return predict_logits(self.eval_net_, X)

    def predict(self, X, task=None):
        logits = self.decision_function(X)
        candidates = self.seen_classes_ if task is None else self.task_classes_[task]
        return restricted_argmax(logits, candidates)

    def predict_proba(self, X):
        logits = self.decision_function(X).astype(np.float64)
        mask = np.zeros(logits.shape[1], dtype=bool)
        mask[self.seen_classes_] = True
        z = np.where(mask, logits, -np.inf)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)
