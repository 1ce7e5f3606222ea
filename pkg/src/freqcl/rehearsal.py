"""Reservoir replay buffer over stored frequency pairs and the rehearsal
strategies that consume it (ER, DER++, ER-ACE, CLS-ER)."""

from __future__ import annotations

import copy
import enum
import struct
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, GraphError, NumericalError, ShapeError
from .tensor import Tensor, no_grad
from .wavelet import FrequencyPair


class StrategyKind(str, enum.Enum):
    ER = "er"
    DERPP = "derpp"
    ERACE = "erace"
    CLSER = "clser"


@dataclass(frozen=True)
class StrategyConfig:
    kind: StrategyKind = StrategyKind.ER
    alpha: float = 0.1
    beta: float = 0.5
    plastic_decay: float = 0.999
    stable_decay: float = 0.9999
    plastic_update_prob: float = 0.9
    stable_update_prob: float = 0.1
    consistency_weight: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        for name in ("plastic_decay", "stable_decay", "plastic_update_prob", "stable_update_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("must lie in [0, 1]", key=f"strategy.{name}")


@dataclass(frozen=True, eq=False)
class BufferEntry:
    low: np.ndarray
    high: np.ndarray
    label: int
    task_id: int
    logits: np.ndarray | None = None

    def __post_init__(self):
        if self.low.shape[1:] != self.high.shape[1:]:
            raise ShapeError(f"buffer entry: low {self.low.shape} and high {self.high.shape} spatial dims differ")
        for arr in (self.low, self.high, self.logits):
            if arr is not None:
                arr.setflags(write=False)


class ReplayBuffer:
    """Fixed-capacity reservoir (capacity counted in samples)."""

    def __init__(self, capacity, rng=None):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = int(capacity)
        self.entries = []
        self.seen = 0
        self.rng = np.random.default_rng(rng)

    def __len__(self):
        return len(self.entries)

    def is_empty(self):
        return not self.entries

    def offer(self, entry):
        if len(self.entries) < self.capacity:
            self.entries.append(entry)
        elif self.capacity:
            slot = int(self.rng.integers(0, self.seen + 1))
            if slot < self.capacity:
                self.entries[slot] = entry
        self.seen += 1
        return self

    def sample(self, k, rng=None):
        return sample_batch(self, k, rng if rng is not None else self.rng)

    def nbytes(self):
        total = 0
        for e in self.entries:
            total += e.low.nbytes + e.high.nbytes + (e.logits.nbytes if e.logits is not None else 0)
        return total

    def class_counts(self):
        counts = {}
        for e in self.entries:
            counts[e.label] = counts.get(e.label, 0) + 1
        return dict(sorted(counts.items()))


def reservoir_offer(buffer, entry):
    return buffer.offer(entry)


def sample_batch(buffer, k, rng):
    """``k`` entries drawn uniformly with replacement; empty if the buffer is."""
    if buffer.is_empty() or k <= 0:
        return []
    idx = rng.integers(0, len(buffer.entries), size=k)
    return [buffer.entries[i] for i in idx]


@dataclass
class Batch:
    """Network inputs with labels; ``logits`` holds stored soft targets."""

    pair: FrequencyPair
    labels: np.ndarray
    logits: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)


def entries_to_batch(entries):
    if not entries:
        return None
    low = np.stack([e.low for e in entries])
    high = np.stack([e.high for e in entries])
    labels = np.array([e.label for e in entries], dtype=np.int64)
    logits = None
    if all(e.logits is not None for e in entries):
        logits = np.stack([e.logits for e in entries])
    return Batch(FrequencyPair(Tensor(low), Tensor(high)), labels, logits)


# losses

def _er_terms(net, live, replay):
    live_logits = net(live.pair)
    loss = ops.softmax_cross_entropy(live_logits, live.labels)
    if replay is not None and len(replay):
        loss = loss + ops.softmax_cross_entropy(net(replay.pair), replay.labels)
    return loss, live_logits


def er_loss(net, live, replay):
    return _er_terms(net, live, replay)[0]


def _derpp_terms(net, live, replay1, replay2, alpha, beta):
    live_logits = net(live.pair)
    loss = ops.softmax_cross_entropy(live_logits, live.labels)
    if alpha and replay1 is not None and len(replay1):
        if replay1.logits is None:
            raise GraphError("DER++ replay batch carries no stored logits")
        loss = loss + alpha * ops.mse(net(replay1.pair), Tensor(replay1.logits))
    if beta and replay2 is not None and len(replay2):
        loss = loss + beta * ops.softmax_cross_entropy(net(replay2.pair), replay2.labels)
    return loss, live_logits


def derpp_loss(net, live, replay1, replay2, alpha=0.1, beta=0.5):
    """Cross-entropy on live data, logit matching on one replay batch and
    cross-entropy on a second."""
    return _derpp_terms(net, live, replay1, replay2, alpha, beta)[0]


def erace_mask(num_classes, live_labels, past_classes):
    """Classes visible to the live-batch softmax: everything except earlier
    tasks' classes that are absent from the live batch."""
    allowed = np.ones(num_classes, dtype=bool)
    past = np.asarray(sorted(past_classes), dtype=np.int64)
    if past.size:
        allowed[past] = False
    allowed[np.unique(live_labels)] = True
    return allowed


def _erace_terms(net, live, replay, past_classes):
    live_logits = net(live.pair)
    mask = erace_mask(live_logits.shape[1], live.labels, past_classes)
    loss = ops.softmax_cross_entropy(live_logits, live.labels, mask=mask)
    if replay is not None and len(replay):
        loss = loss + ops.softmax_cross_entropy(net(replay.pair), replay.labels)
    return loss, live_logits


def erace_loss(net, live, replay, past_classes):
    """Asymmetric cross-entropy: the live term cannot push down logits of
    earlier-task classes; the replay term sees every class.

    ``past_classes`` are the classes of tasks before the current one, so on
    the first task the live term is plain cross-entropy.
    """
    return _erace_terms(net, live, replay, past_classes)[0]


def ema_update(target, source, decay):
    for t, s in zip(target.state_arrays(), source.state_arrays()):
        t *= decay
        t += (1.0 - decay) * s


def check_same_structure(*nets):
    shapes = [[a.shape for a in n.state_arrays()] for n in nets]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ShapeError("CLS-ER networks differ in structure")


@dataclass
class ClsErNets:
    working: object
    plastic: object
    stable: object

    @classmethod
    def from_working(cls, net):
        return cls(net, copy.deepcopy(net), copy.deepcopy(net))


def clser_step(nets, optimizer, live, replay, cfg, rng):
    """One CLS-ER update: train the working model, then stochastically move
    the plastic and stable semantic memories towards it.

    Returns ``(loss_value, live_logits)``.
    """
    check_same_structure(nets.working, nets.plastic, nets.stable)
    optimizer.zero_grad()
    loss, live_logits = _er_terms(nets.working, live, replay)
    if cfg.consistency_weight and replay is not None and len(replay):
        nets.stable.eval()
        with no_grad():
            target = nets.stable(replay.pair).data
        working_replay = nets.working(replay.pair)
        loss = loss + cfg.consistency_weight * ops.mse(working_replay, Tensor(target))
    _check_finite(loss)
    loss.backward()
    optimizer.step()
    if rng.random() < cfg.plastic_update_prob:
        ema_update(nets.plastic, nets.working, cfg.plastic_decay)
    if rng.random() < cfg.stable_update_prob:
        ema_update(nets.stable, nets.working, cfg.stable_decay)
    return loss.item(), live_logits


def _check_finite(loss):
    if not loss.is_finite():
        raise NumericalError(f"non-finite loss {loss.item()!r}")


# strategies as used by the training loop

class Strategy:
    """Per-step driver for one rehearsal method.

    ``step`` returns ``(loss, live_logits, samples)`` where ``samples`` is
    the number of examples that went through forward and backward passes.
    """

    stores_logits = False

    def __init__(self, cfg, replay_batch_size=32, rng=None):
        self.cfg = cfg
        self.replay_batch_size = replay_batch_size
        self.rng = np.random.default_rng(rng)

    def eval_net(self, net):
        return net

    def end_task(self, net, task_index):
        pass

    def _replay(self, buffer):
        return entries_to_batch(sample_batch(buffer, self.replay_batch_size, buffer.rng))

    def _apply(self, loss, optimizer):
        _check_finite(loss)
        loss.backward()
        optimizer.step()
        return loss.item()


class ERStrategy(Strategy):
    def step(self, net, optimizer, live, buffer, ctx):
        replay = self._replay(buffer)
        optimizer.zero_grad()
        loss, logits = _er_terms(net, live, replay)
        return self._apply(loss, optimizer), logits, len(live) + (len(replay) if replay else 0)


class DerppStrategy(Strategy):
    stores_logits = True

    def step(self, net, optimizer, live, buffer, ctx):
        replay1 = self._replay(buffer) if self.cfg.alpha else None
        replay2 = self._replay(buffer) if self.cfg.beta else None
        optimizer.zero_grad()
        loss, logits = _derpp_terms(net, live, replay1, replay2, self.cfg.alpha, self.cfg.beta)
        n = len(live) + sum(len(r) for r in (replay1, replay2) if r)
        return self._apply(loss, optimizer), logits, n


class EraceStrategy(Strategy):
    def step(self, net, optimizer, live, buffer, ctx):
        replay = self._replay(buffer)
        optimizer.zero_grad()
        loss, logits = _erace_terms(net, live, replay, ctx.past_classes)
        return self._apply(loss, optimizer), logits, len(live) + (len(replay) if replay else 0)


class ClsErStrategy(Strategy):
    def __init__(self, cfg, replay_batch_size=32, rng=None):
        super().__init__(cfg, replay_batch_size, rng)
        self.nets = None

    def _ensure(self, net):
        if self.nets is None or self.nets.working is not net:
            self.nets = ClsErNets.from_working(net)

    def step(self, net, optimizer, live, buffer, ctx):
        self._ensure(net)
        replay = self._replay(buffer)
        loss, logits = clser_step(self.nets, optimizer, live, replay, self.cfg, self.rng)
        return loss, logits, len(live) + (len(replay) if replay else 0)

    def eval_net(self, net):
        if self.nets is None:
            return net
        return self.nets.stable


def make_strategy(cfg, replay_batch_size=32, rng=None):
    cls = {
        StrategyKind.ER: ERStrategy,
        StrategyKind.DERPP: DerppStrategy,
        StrategyKind.ERACE: EraceStrategy,
        StrategyKind.CLSER: ClsErStrategy,
    }[StrategyKind(cfg.kind)]
    return cls(cfg, replay_batch_size, rng)


# snapshot files

SNAPSHOT_MAGIC = b"FQRB"
SNAPSHOT_VERSION = 1


def save_buffer(buffer, path):
    """Header (capacity, seen, count, shapes, dtype) then one record per
    entry: label, task id, low, high and optional logits, little-endian.

    Arrays are written at their stored precision (float32 for training
    runs) so the round trip is bit-exact.
    """
    entries = buffer.entries
    if entries:
        low_shape, high_shape = entries[0].low.shape, entries[0].high.shape
        dtype = entries[0].low.dtype
        n_logits = entries[0].logits.size if entries[0].logits is not None else 0
    else:
        low_shape = high_shape = (0, 0, 0)
        dtype = np.dtype(np.float32)
        n_logits = 0
    code = {np.dtype(np.float32): 4, np.dtype(np.float64): 8}[np.dtype(dtype)]
    le = np.dtype(dtype).newbyteorder("<")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<IQQQB", SNAPSHOT_VERSION, buffer.capacity, buffer.seen, len(entries), code))
        fh.write(struct.pack("<3I3II", *low_shape, *high_shape, n_logits))
        for e in entries:
            fh.write(struct.pack("<qq", e.label, e.task_id))
            fh.write(np.ascontiguousarray(e.low, dtype=le).tobytes())
            fh.write(np.ascontiguousarray(e.high, dtype=le).tobytes())
            if n_logits:
                fh.write(np.ascontiguousarray(e.logits, dtype=le).tobytes())


def load_buffer(path, rng=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a buffer snapshot")
    version, capacity, seen, count, code = struct.unpack_from("<IQQQB", raw, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    offset = 4 + struct.calcsize("<IQQQB")
    dims = struct.unpack_from("<3I3II", raw, offset)
    offset += struct.calcsize("<3I3II")
    low_shape, high_shape, n_logits = dims[:3], dims[3:6], dims[6]
    dtype = np.dtype("<f4" if code == 4 else "<f8")
    buffer = ReplayBuffer(capacity, rng)
    buffer.seen = seen

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype=dtype, count=n, offset=offset).reshape(shape).astype(dtype.newbyteorder("="))
        offset += n * dtype.itemsize
        return arr

    for _ in range(count):
        label, task_id = struct.unpack_from("<qq", raw, offset)
        offset += 16
        low, high = take(low_shape), take(high_shape)
        logits = take((n_logits,)) if n_logits else None
        buffer.entries.append(BufferEntry(low, high, int(label), int(task_id), logits))
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return buffer
