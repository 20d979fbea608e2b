"""Triplet training of the descriptor network.

Batches are random triplets: an anchor drawn from all patches, a positive
from the anchor's class (the anchor itself for singleton classes) and a
negative from a different, uniformly chosen class.  While one batch is
being trained on, a producer thread prepares the next one.
"""
from __future__ import annotations

import contextlib
import dataclasses
import logging
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentSchedule, augment_many
from .net import build_descriptor_net, normalize_patches, save_model

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8192
    alpha: float = 1.5
    iterations: int = 5000
    optimizer: str = "sgd_momentum"  # "sgd_momentum" | "plain_sgd"
    lr: float = 0.01
    momentum: float = 0.9
    lr_halving_every: int = 1500
    seed: int = 0
    deterministic_mode: bool = True
    pipeline: bool = True
    augment: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd_momentum", "plain_sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def learning_rate(self, iteration):
        if self.lr_halving_every <= 0:
            return self.lr
        return self.lr * 0.5 ** (iteration // self.lr_halving_every)


@dataclass
class TripletBatch:
    anchor_idx: np.ndarray
    positive_idx: np.ndarray
    negative_idx: np.ndarray
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self):
        return len(self.anchor_idx)


@dataclass
class TrainStats:
    loss: list = field(default_factory=list)
    frac_solved: list = field(default_factory=list)
    frac_close: list = field(default_factory=list)

    def append(self, loss, solved, close):
        self.loss.append(float(loss))
        self.frac_solved.append(float(solved))
        self.frac_close.append(float(close))

    def __len__(self):
        return len(self.loss)

    def moving_average(self, name, window=50):
        x = np.asarray(getattr(self, name), dtype=np.float64)
        c = np.cumsum(np.insert(x, 0, 0.0))
        out = np.empty_like(x)
        for i in range(len(x)):
            lo = max(0, i + 1 - window)
            out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
        return out

    def to_tsv(self, meta=None):
        rows = [f"# {k}={v}" for k, v in (meta or {}).items()]
        rows.append("iteration\tmean_loss\tfrac_solved\tfrac_close")
        for i, (l, s, c) in enumerate(zip(self.loss, self.frac_solved, self.frac_close)):
            rows.append(f"{i}\t{l:.6f}\t{s:.6f}\t{c:.6f}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_tsv(cls, text):
        stats = cls()
        for line in text.splitlines():
            if line.strip() and not line.startswith(("#", "iteration")):
                _, l, s, c = line.split("\t")
                stats.append(float(l), float(s), float(c))
        return stats


def sample_indices(dataset, size, rng):
    """Triplet indices (anchor, positive, negative) into ``dataset``."""
    if dataset.n_classes < 2:
        raise ValueError("triplet sampling needs at least two classes")
    classes = dataset.classes
    anchors = rng.integers(0, len(dataset), size=size)
    positives = np.empty(size, dtype=np.int64)
    negatives = np.empty(size, dtype=np.int64)
    neg_classes = rng.integers(0, dataset.n_classes - 1, size=size)
    for k, a in enumerate(anchors):
        c = dataset.labels[a]
        members = classes[c]
        if len(members) == 1:
            positives[k] = a
        else:
            others = members[members != a]
            positives[k] = others[rng.integers(0, len(others))]
        nc = neg_classes[k] + (neg_classes[k] >= c)
        pool = classes[nc]
        negatives[k] = pool[rng.integers(0, len(pool))]
    return anchors, positives, negatives


def sample_batch(dataset, size=8192, rng=None, schedule=None, augment=True):
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    schedule = schedule or AugmentSchedule()
    a, p, n = sample_indices(dataset, size, rng)
    pa, pp, pn = dataset.patches[a], dataset.patches[p], dataset.patches[n]
    if augment:
        pa = augment_many(pa, "anchor_positive", schedule, rng)
        pp = augment_many(pp, "anchor_positive", schedule, rng)
        pn = augment_many(pn, "negative", schedule, rng)
    return TripletBatch(a, p, n, pa, pp, pn)


def triplet_loss(d_ap, d_an, alpha=1.5):
    """``max(0, d_ap - d_an + alpha)``, elementwise."""
    return np.maximum(0.0, np.asarray(d_ap) - np.asarray(d_an) + alpha)


def _safe_unit(diff, dist):
    with np.errstate(invalid="ignore", divide="ignore"):
        u = diff / dist[:, None]
    return np.where(dist[:, None] > 0, u, 0.0)


def triplet_objective(fa, fp, fn, alpha):
    """Mean triplet loss over a batch and its gradients w.r.t. the three descriptor sets.

    The distance gradient at zero distance is taken as zero.
    """
    dap_vec = fa - fp
    dan_vec = fa - fn
    d_ap = np.sqrt(np.sum(dap_vec * dap_vec, axis=1))
    d_an = np.sqrt(np.sum(dan_vec * dan_vec, axis=1))
    losses = triplet_loss(d_ap, d_an, alpha)
    active = (losses > 0).astype(fa.dtype)[:, None] / len(fa)
    u_ap = _safe_unit(dap_vec, d_ap)
    u_an = _safe_unit(dan_vec, d_an)
    g_a = active * (u_ap - u_an)
    g_p = -active * u_ap
    g_n = active * u_an
    return losses.mean(), (g_a, g_p, g_n), d_ap, d_an, losses


def batch_loss_and_grads(net, batch, alpha):
    """Forward the three branches through one set of weights and backpropagate."""
    b = len(batch)
    x = normalize_patches(np.concatenate([batch.anchors, batch.positives, batch.negatives]), net.dtype)
    out, cache = net.forward_float(x, keep_cache=True)
    loss, (g_a, g_p, g_n), d_ap, d_an, losses = triplet_objective(out[:b], out[b:2 * b], out[2 * b:], alpha)
    grads = net.backward(cache, np.concatenate([g_a, g_p, g_n]).astype(out.dtype))
    return loss, grads, d_ap, d_an, losses


class Optimizer:
    def __init__(self, config):
        self.config = config
        self.velocity = None
        self.iteration = 0

    def step(self, params, grads):
        lr = self.config.learning_rate(self.iteration)
        if self.config.optimizer == "sgd_momentum":
            if self.velocity is None:
                self.velocity = [np.zeros_like(p) for p in params]
            for p, g, v in zip(params, grads, self.velocity):
                v *= self.config.momentum
                v += g
                p -= lr * v
        else:
            for p, g in zip(params, grads):
                p -= lr * g
        self.iteration += 1


def train_step(net, batch, optimizer, alpha=1.5):
    """One update in place; returns ``(loss, frac_solved, frac_close)``."""
    loss, grads, d_ap, _, losses = batch_loss_and_grads(net, batch, alpha)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError(f"non-finite loss/gradient at iteration {optimizer.iteration}: loss={loss}, "
                            f"max |d_ap|={np.abs(d_ap).max() if len(d_ap) else 0}")
    optimizer.step(net.parameters(), grads)
    solved = float(np.mean(losses == 0))
    close = float(np.mean(d_ap < alpha / 2))
    return float(loss), solved, close


def batch_rng(seed, iteration):
    return np.random.default_rng([int(seed), 1, int(iteration)])


def init_rng(seed):
    return np.random.default_rng([int(seed), 0])


def _put(out_q, item, stop):
    """Blocking put that gives up once ``stop`` is set."""
    while not stop.is_set():
        try:
            out_q.put(item, timeout=0.1)
            return True
        except queue.Full:
            continue
    return False


def _produce(dataset, config, schedule, out_q, stop):
    try:
        for k in range(config.iterations):
            batch = sample_batch(dataset, config.batch_size, batch_rng(config.seed, k), schedule, config.augment)
            if not _put(out_q, batch, stop):
                return
    except BaseException as exc:  # forwarded to the consumer
        _put(out_q, exc, stop)


@contextlib.contextmanager
def _single_threaded_blas(enabled):
    if not enabled:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(1):
        yield


def train(dataset, config, net=None, schedule=None, model_path=None, stats_path=None, progress=None):
    """Run ``config.iterations`` triplet steps; returns ``(net, stats)``.

    With ``config.pipeline`` the next batch is prepared on a producer thread
    and handed over through a single-slot queue.  Batch ``k`` is always
    drawn from its own generator seeded by ``(seed, k)``, so pipelining
    changes latency only, never results.
    """
    schedule = schedule or AugmentSchedule()
    if net is None:
        net = build_descriptor_net(init_rng(config.seed))
    if dataset.n_classes < 2:
        raise ValueError("triplet sampling needs at least two classes")
    optimizer = Optimizer(config)
    stats = TrainStats()

    with _single_threaded_blas(config.deterministic_mode):
        if config.pipeline and config.iterations > 0:
            q = queue.Queue(maxsize=1)
            stop = threading.Event()
            producer = threading.Thread(target=_produce, args=(dataset, config, schedule, q, stop), daemon=True)
            producer.start()
            try:
                for k in range(config.iterations):
                    batch = q.get()
                    if isinstance(batch, BaseException):
                        raise batch
                    stats.append(*train_step(net, batch, optimizer, config.alpha))
                    if progress:
                        progress(k, stats)
            finally:
                stop.set()
                with contextlib.suppress(queue.Empty):
                    while True:
                        q.get_nowait()
                producer.join()
        else:
            for k in range(config.iterations):
                batch = sample_batch(dataset, config.batch_size, batch_rng(config.seed, k), schedule, config.augment)
                stats.append(*train_step(net, batch, optimizer, config.alpha))
                if progress:
                    progress(k, stats)

    if model_path is not None:
        save_model(net, model_path)
    if stats_path is not None:
        with open(stats_path, "w") as fh:
            fh.write(stats.to_tsv(dataclasses.asdict(config)))
    return net, stats
