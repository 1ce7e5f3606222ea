"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line."""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from freqcl import ops
from freqcl.config import parse_config, parse_config_text, with_overrides
from freqcl.data import load_dataset
from freqcl.experiment import run_experiment
from freqcl.model import (
    AggregatorVariant,
    BackboneConfig,
    DualNet,
    backbone_param_count,
    build_baseline,
    flops_forward,
)
from freqcl.optim import SGD
from freqcl.rehearsal import ReplayBuffer, StrategyConfig, make_strategy
from freqcl.report import emit_report
from freqcl.tensor import Parameter, default_dtype
from freqcl.trainer import TaskContext, average_accuracy, end_task_hook, train_task
from freqcl.wavelet import dwt2d, idwt2d

from acceptance_log import record
from gradcheck import probe_gradients, weighted_sum
from test_trainer import separable

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"


# 1

def test_wavelet_round_trip_and_energy():
    start = time.perf_counter()
    x = np.random.default_rng(0).random((1000, 3, 32, 32))
    quad = dwt2d(x)
    round_trip = np.max(np.abs(idwt2d(quad) - x))
    energy = sum(np.sum(b ** 2, axis=(1, 2, 3)) for b in (quad.ll, quad.lh, quad.hl, quad.hh))
    energy_err = np.max(np.abs(energy - np.sum(x ** 2, axis=(1, 2, 3))))
    elapsed = time.perf_counter() - start
    ok = round_trip < 1e-6 and energy_err < 1e-6 and elapsed < 10
    record(1, "wavelet round trip and energy", ok,
           f"max err {round_trip:.2e}, energy err {energy_err:.2e}, {elapsed:.2f}s")
    assert ok


# 2

def _op_cases(rng):
    def leaf(*shape):
        return Parameter(rng.uniform(-1, 1, shape))

    def weights(shape):
        return rng.standard_normal(shape)

    x, w, b = leaf(2, 3, 6, 6), leaf(4, 3, 3, 3), leaf(4)
    r_conv = weights((2, 4, 3, 3))
    yield "conv2d", lambda: weighted_sum(ops.conv2d(x, w, b, stride=2, padding=1), r_conv), [x, w, b]

    xl, wl, bl = leaf(5, 6), leaf(3, 6), leaf(3)
    r_lin = weights((5, 3))
    yield "linear", lambda: weighted_sum(ops.linear(xl, wl, bl), r_lin), [xl, wl, bl]

    for training in (True, False):
        xb, gb, sb = leaf(4, 3, 3, 3), leaf(3), leaf(3)
        rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
        r_bn = weights((4, 3, 3, 3))

        def bn(xb=xb, gb=gb, sb=sb, rm=rm, rv=rv, r=r_bn, training=training):
            out = ops.batchnorm2d(xb, gb, sb, rm.copy(), rv.copy(), training=training)
            return weighted_sum(out, r)

        yield f"batchnorm2d[{'train' if training else 'eval'}]", bn, [xb, gb, sb]

    xr = Parameter(rng.uniform(0.05, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)))
    r_relu = weights((3, 4))
    yield "relu", lambda: weighted_sum(ops.relu(xr), r_relu), [xr]

    a1, a2 = leaf(2, 3, 2, 2), leaf(2, 3, 2, 2)
    r_add = weights((2, 3, 2, 2))
    yield "add", lambda: weighted_sum(ops.add(a1, a2), r_add), [a1, a2]

    c1, c2 = leaf(2, 2, 3, 3), leaf(2, 1, 3, 3)
    r_cat = weights((2, 3, 3, 3))
    yield "concat_channels", lambda: weighted_sum(ops.concat_channels([c1, c2]), r_cat), [c1, c2]

    p = leaf(2, 3, 4, 4)
    r_pool = weights((2, 3))
    yield "global_avg_pool", lambda: weighted_sum(ops.global_avg_pool(p), r_pool), [p]

    z = leaf(4, 5)
    labels = [0, 3, 4, 1]
    yield "softmax_cross_entropy", lambda: ops.softmax_cross_entropy(z, labels), [z]

    zm = leaf(3, 5)
    mask = np.array([False, True, True, True, False])
    yield "softmax_cross_entropy[masked]", lambda: ops.softmax_cross_entropy(zm, [1, 2, 3], mask), [zm]

    m1, m2 = leaf(3, 4), leaf(3, 4)
    yield "mse", lambda: ops.mse(m1, m2), [m1, m2]


def test_gradient_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {}
    with default_dtype("float64"):
        for name, loss_fn, leaves in _op_cases(rng):
            errors[name] = probe_gradients(loss_fn, leaves, n_probes=20, h=1e-6, rng=1)

        net = DualNet(BackboneConfig(base_width=4, blocks_per_stage=(1, 1, 1, 1), num_classes=4), rng=0)
        net.train()
        images = rng.standard_normal((4, 3, 8, 8))
        labels = np.array([0, 1, 2, 3])

        def dual_loss():
            return ops.softmax_cross_entropy(net(net.frequency_pair(images)), labels)

        errors["DualNet"] = probe_gradients(dual_loss, net.parameters(), n_probes=20, h=1e-6, rng=2)
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = all(e < 1e-4 for e in errors.values()) and elapsed < 120
    record(2, "finite-difference gradient suite", ok,
           f"{len(errors)} checks, worst {worst} {errors[worst]:.1e}, {elapsed:.1f}s")
    assert ok, errors


# 3

def test_backbone_parameter_ratio():
    config = BackboneConfig(num_classes=10)
    ratio = backbone_param_count(DualNet(config, rng=0)) / backbone_param_count(build_baseline(config, rng=0))
    ok = 0.18 <= ratio <= 0.26
    record(3, "backbone parameter ratio in [0.18, 0.26]", ok, f"ratio {ratio:.4f}, reduction {1 - ratio:.1%}")
    assert ok


# 4

def test_forward_flops_ratio():
    config = BackboneConfig(num_classes=10)
    shape = (3, 32, 32)
    ratio = flops_forward(DualNet(config, rng=0), shape) / flops_forward(build_baseline(config, rng=0), shape)
    ok = ratio < 0.15
    record(4, "forward FLOPs ratio < 0.15", ok, f"ratio {ratio:.4f}")
    assert ok


# 5

def test_reservoir_residency():
    capacity, stream, trials = 50, 500, 20_000
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    counts = np.zeros(stream)
    for _ in range(trials):
        buf = ReplayBuffer(capacity, rng=rng)
        for i in range(stream):
            buf.offer(i)
        counts[buf.entries] += 1
    elapsed = time.perf_counter() - start
    p = capacity / stream
    sigma = math.sqrt(p * (1 - p) / trials)
    z = np.abs(counts / trials - p) / sigma
    outside = int(np.sum(z > 3))
    # diagnostic only: the per-item z scores should look standard normal
    chi2_p = stats.chi2.sf(np.sum(z ** 2), stream - 1)
    ok = outside == 0 and elapsed < 30
    record(5, "reservoir residency within 3 sigma of B/N", ok,
           f"max |z| {z.max():.2f}, {outside} of {stream} outside "
           f"(expected {stream * 2 * stats.norm.sf(3):.2f} by chance), chi-square p={chi2_p:.2f}, {elapsed:.1f}s")
    assert ok


# 6

def test_average_accuracy_exact():
    cases = [
        (np.array([[0.9, np.nan], [0.6, 0.8]]), 2, (0.6 + 0.8) / 2),
        (np.array([[0.25]]), 1, 0.25),
        (np.array([[1.0, 0, 0], [0.5, 1.0, 0], [0.1, 0.2, 0.3]]), 3, (0.1 + 0.2 + 0.3) / 3),
        (np.array([[1.0, 0, 0], [0.5, 1.0, 0], [0.1, 0.2, 0.3]]), 2, 0.75),
    ]
    got = [average_accuracy(A, t) for A, t, _ in cases]
    ok = all(g == expect for g, (_, _, expect) in zip(got, cases)) and got[0] == 0.7
    record(6, "average accuracy matches hand arithmetic", ok, f"values {got}")
    assert ok


# 7

class _Recorder:
    """Wraps a strategy and keeps every per-step loss."""

    def __init__(self, inner):
        self.inner = inner
        self.losses = []

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def step(self, net, optimizer, live, buffer, ctx):
        loss, logits, samples = self.inner.step(net, optimizer, live, buffer, ctx)
        self.losses.append(loss)
        return loss, logits, samples


def _trajectory(cfg, capacity, n_tasks, seed=0):
    """Per-step losses of a seeded multi-task run with strategy ``cfg``."""
    rng = np.random.default_rng(seed)
    with default_dtype("float64"):
        net = DualNet(BackboneConfig(base_width=4, blocks_per_stage=(1, 1, 1, 1), num_classes=4), rng=seed)
        strategy = _Recorder(make_strategy(cfg, 8, rng=seed))
        buffer = ReplayBuffer(capacity, rng=seed)
        opt = SGD(net.parameters(), lr=0.05)
        past = frozenset()
        for t in range(n_tasks):
            classes = (2 * t, 2 * t + 1)
            x, y = separable(rng, 12, classes)
            ctx = TaskContext(t, classes, past)
            train_task(net, strategy, buffer, opt, x.astype(np.float64), y, ctx, epochs=2, batch_size=8, rng=seed)
            end_task_hook(net, t, strategy)
            past = past | set(classes)
    return np.array(strategy.losses)


def test_strategy_reductions():
    er = StrategyConfig(kind="er")
    checks = {
        "DER++(a=b=0) vs ER, empty buffer, 2 tasks": (
            _trajectory(StrategyConfig(kind="derpp", alpha=0.0, beta=0.0), 0, 2), _trajectory(er, 0, 2)),
        "DER++(a=0,b=1) vs ER, B=16, 2 tasks": (
            _trajectory(StrategyConfig(kind="derpp", alpha=0.0, beta=1.0), 16, 2), _trajectory(er, 16, 2)),
        "ER-ACE vs ER, first task, B=16": (
            _trajectory(StrategyConfig(kind="erace"), 16, 1), _trajectory(er, 16, 1)),
        "CLS-ER(consistency 0) vs ER, B=16, 2 tasks": (
            _trajectory(StrategyConfig(kind="clser", consistency_weight=0.0), 16, 2), _trajectory(er, 16, 2)),
    }
    gaps = {name: float(np.max(np.abs(a - b))) if a.shape == b.shape else math.inf for name, (a, b) in checks.items()}
    steps = {name: len(a) for name, (a, _) in checks.items()}
    ok = all(g < 1e-10 for g in gaps.values())
    record(7, "strategy reductions to ER within 1e-10", ok,
           "; ".join(f"{k}: {steps[k]} steps, max gap {v:.1e}" for k, v in gaps.items()))
    assert ok, gaps


# 8

def _sign_test_p(wins, n):
    """One-sided binomial tail P(X >= wins) with X ~ Bin(n, 1/2)."""
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2 ** n


@pytest.mark.slow
def test_desk_scale_replay_behaviour():
    start = time.perf_counter()
    base = parse_config(DESK_CONFIG)
    data = load_dataset(base.dataset)
    seeds = range(5)
    runs = {
        "B=0": dict(buffer_capacity=0),
        "B=50": dict(buffer_capacity=50),
        "B=125": dict(buffer_capacity=125),
        "B=125 no_integration": dict(buffer_capacity=125, variant=AggregatorVariant.NO_INTEGRATION),
    }
    acc = {name: [] for name in runs}
    for seed in seeds:
        for name, overrides in runs.items():
            report = run_experiment(with_overrides(base, seed=seed, **overrides), data=data)
            acc[name].append(report.summary()["acc_class_il"])
    acc = {k: np.array(v) for k, v in acc.items()}
    means = {k: float(v.mean()) for k, v in acc.items()}
    elapsed = time.perf_counter() - start

    wins = int(np.sum(acc["B=125"] > acc["B=0"]))
    a_ok = wins >= 4
    b_ok = means["B=0"] <= means["B=50"] <= means["B=125"]
    mutual_wins = int(np.sum(acc["B=125"] > acc["B=125 no_integration"]))
    ties = int(np.sum(acc["B=125"] == acc["B=125 no_integration"]))
    c_ok = means["B=125"] >= means["B=125 no_integration"]
    p_value = _sign_test_p(mutual_wins, len(seeds) - ties)
    ok = a_ok and b_ok and c_ok and elapsed < 15 * 60
    record(8, "desk-scale replay behaviour", ok,
           f"(a) {wins}/5 paired wins; (b) means "
           + ", ".join(f"{k} {means[k]:.4f}" for k in ("B=0", "B=50", "B=125"))
           + f"; (c) mutual {means['B=125']:.4f} vs no_integration {means['B=125 no_integration']:.4f}, "
           f"sign test {mutual_wins}/{len(seeds) - ties} p={p_value:.3f}; {elapsed:.0f}s")
    assert a_ok, acc
    assert b_ok, means
    assert c_ok, means
    assert elapsed < 15 * 60


# 9

TINY = """\
dataset = synthetic
classes = 6
samples_per_class = 16
test_samples_per_class = 4
image_size = 8
tasks = 3
base_width = 4
blocks_per_stage = 1,1,1,1
epochs = 2
batch_size = 8
replay_batch_size = 8
buffer_capacity = 12
"""


def test_fuser_frozen_after_first_task():
    snapshots = []

    def on_task(t, learner):
        snapshots.append([p.data.copy() for p in learner.net_.fuser.parameters()])

    for strategy in ("er", "derpp", "erace", "clser"):
        run_experiment(parse_config_text(TINY, [f"strategy={strategy}"]), on_task=on_task)
    per_run = [snapshots[i:i + 3] for i in range(0, len(snapshots), 3)]
    ok = all(
        all(np.array_equal(a, b) for later in run[1:] for a, b in zip(run[0], later))
        for run in per_run
    )
    record(9, "fuser bitwise constant after task 1", ok, f"{len(per_run)} strategies x 3 tasks")
    assert ok


# 10

def test_float64_runs_repeat_exactly(tmp_path):
    cfg = parse_config_text(TINY, ["precision=float64", "strategy=clser"])
    texts = []
    for name in ("a", "b"):
        paths = emit_report(run_experiment(cfg), tmp_path / name)
        texts.append(Path(paths["metrics"]).read_bytes())
    ok = texts[0] == texts[1]
    record(10, "identical metrics.csv across float64 reruns", ok, f"{len(texts[0])} bytes")
    assert ok
