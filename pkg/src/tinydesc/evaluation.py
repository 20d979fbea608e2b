"""Patch verification and retrieval evaluation.

Two tasks, following the HPatches protocol:

* verification - rank labelled patch pairs by descriptor distance and score
  with average precision, separately against negatives from other source
  families ("inter") and from the same family ("intra"), with negatives
  either subsampled to the positive count (balanced) or all kept.
* retrieval - rank each query's true match against ``n`` distractors for
  every ``n`` on a ladder and report mean average precision.

A synthetic easy/hard/tough benchmark built from a held-out
:class:`~tinydesc.patches.PatchDataset` stands in for the real data; real
patch stacks can be loaded with :func:`ingest_patch_stack`.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .augment import AugmentSchedule, apply_augmentation
from .imaging import read_pgm, resize, to_uint8
from .net import DescriptorNet, dequantize, model_checksum, output_bounds, quantize

DEFAULT_LADDER = (100, 500, 1000, 5000, 10000, 15000, 20000)


class InsufficientDataError(ValueError):
    pass


def average_precision(distances, is_positive=None):
    """Ranked-retrieval AP with ascending distance (ties keep input order).

    Accepts either two parallel sequences or one sequence of
    ``(distance, is_positive)`` pairs.
    """
    if is_positive is None:
        pairs = list(distances)
        distances = [d for d, _ in pairs]
        is_positive = [p for _, p in pairs]
    d = np.asarray(distances, dtype=np.float64)
    rel = np.asarray(is_positive, dtype=bool)
    if not rel.any():
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(d, kind="stable")
    rel = rel[order]
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, len(rel) + 1)
    # fsum is order-independent, so AP is exactly the rounded sum of its terms
    return math.fsum(precision[rel]) / int(rel.sum())


@dataclass
class PairSet:
    a: np.ndarray  # (N, 32, 32) uint8
    b: np.ndarray
    labels: np.ndarray  # (N,) bool, True for same class
    kinds: np.ndarray  # (N,) "inter" | "intra" for negatives, "" for positives

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=bool)
        self.kinds = np.asarray(self.kinds, dtype=object)
        if not self.labels.any() or self.labels.all():
            raise ValueError("a pair set needs at least one positive and one negative pair")

    def __len__(self):
        return len(self.labels)


@dataclass
class RetrievalSet:
    queries: np.ndarray  # (Q, 32, 32)
    matches: np.ndarray  # (Q, 32, 32)
    pool: np.ndarray  # (M, 32, 32) distractors, none from a query class
    ladder: tuple = DEFAULT_LADDER


@dataclass
class EvalReport:
    task: str
    tier: str
    metrics: dict
    config: dict = field(default_factory=dict)

    def to_tsv(self):
        lines = [f"# task={self.task}", f"# tier={self.tier}"]
        lines += [f"# {k}={v}" for k, v in self.config.items()]
        lines.append("metric\tvalue")
        lines += [f"{k}\t{v:.6f}" for k, v in self.metrics.items()]
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_tsv())


class QuantizedDescriber:
    """Descriptors passed through 8-bit output quantization and back."""

    def __init__(self, net, bounds=None):
        self.net = net
        self.bounds = bounds if bounds is not None else output_bounds(net)

    def __call__(self, patches):
        return dequantize(quantize(self.net.describe(patches), self.bounds))


def _describer(net):
    if isinstance(net, DescriptorNet):
        return net.describe
    if callable(net):
        return net
    raise TypeError("expected a DescriptorNet or a callable mapping patches to descriptors")


def _net_echo(net):
    if isinstance(net, DescriptorNet):
        return {"net_crc32": f"{model_checksum(net):08x}"}
    if isinstance(net, QuantizedDescriber):
        return {"net_crc32": f"{model_checksum(net.net):08x}", "quantized": "8bit"}
    return {"net": getattr(net, "__name__", type(net).__name__)}


def pair_distances(net, pairset):
    describe = _describer(net)
    da = np.asarray(describe(pairset.a), dtype=np.float64)
    db = np.asarray(describe(pairset.b), dtype=np.float64)
    return np.linalg.norm(da - db, axis=1)


def verify(net, pairset, mode="balanced", seed=0):
    """Verification AP against inter- and intra-family negatives.

    Pairs are put in a seeded random order before ranking so that equal
    distances do not favour whichever label was listed first.
    """
    if mode not in ("balanced", "imbalanced"):
        raise ValueError(f"unknown mode {mode!r}")
    dist = pair_distances(net, pairset)
    pos = np.flatnonzero(pairset.labels)
    metrics, counts = {}, {}
    for k, kind in enumerate(("inter", "intra")):
        neg = np.flatnonzero(~pairset.labels & (pairset.kinds == kind))
        if len(neg) == 0:
            continue
        rng = np.random.default_rng([int(seed), k])
        if mode == "balanced" and len(neg) > len(pos):
            neg = np.sort(rng.choice(neg, size=len(pos), replace=False))
        idx = np.concatenate([pos, neg])
        idx = idx[rng.permutation(len(idx))]
        metrics[kind] = average_precision(dist[idx], pairset.labels[idx])
        counts[f"{kind}_negatives"] = len(neg)
    config = {**_net_echo(net), "mode": mode, "seed": seed, "positives": len(pos), **counts}
    return EvalReport("verification", "", metrics, config)


def retrieve(net, rset, seed=0, ladder=None):
    """mAP of ranking each true match among ``n`` sampled distractors.

    Distractors for smaller ``n`` are prefixes of the same per-query random
    order, and distractors tied with the true match rank ahead of it.
    """
    ladder = tuple(rset.ladder if ladder is None else ladder)
    pool_n = len(rset.pool)
    if ladder and max(ladder) > pool_n:
        raise InsufficientDataError(f"distractor pool has {pool_n} patches, ladder needs {max(ladder)}")
    describe = _describer(net)
    q = np.asarray(describe(rset.queries), dtype=np.float64)
    m = np.asarray(describe(rset.matches), dtype=np.float64)
    p = np.asarray(describe(rset.pool), dtype=np.float64) if pool_n else np.zeros((0, q.shape[1]))
    true_d = np.linalg.norm(q - m, axis=1)
    rng = np.random.default_rng(seed)
    n_max = max(ladder) if ladder else 0
    ranks = {n: np.empty(len(q)) for n in ladder}
    for i in range(len(q)):
        chosen = rng.permutation(pool_n)[:n_max] if n_max else np.zeros(0, int)
        d = np.linalg.norm(p[chosen] - q[i], axis=1)
        closer = np.cumsum(d <= true_d[i])
        for n in ladder:
            ranks[n][i] = 1 + (closer[n - 1] if n > 0 else 0)
    metrics = {str(n): float(np.mean(1.0 / ranks[n])) for n in ladder}
    if metrics:
        metrics["mean"] = float(np.mean(list(metrics.values())))
    config = {**_net_echo(net), "seed": seed, "queries": len(q), "pool": pool_n}
    return EvalReport("retrieval", "", metrics, config)


def random_baseline_map(n):
    """Expected mAP when the true match lands uniformly among n+1 ranks."""
    return float(np.mean(1.0 / np.arange(1, n + 2)))


# ---------------------------------------------------------------------------
# synthetic tiers

@dataclass(frozen=True)
class TierParams:
    max_shift: int
    max_noise: float
    augment: bool = True


TIERS = {
    "easy": TierParams(2, 4.0),
    "hard": TierParams(4, 8.0),
    "tough": TierParams(6, 12.0),
}


def jitter_patch(patch, params, rng, schedule=None):
    """Re-augment a patch: photometric augmentation, integer shift, Gaussian noise."""
    out = patch
    if params.augment:
        out = apply_augmentation(out, "anchor_positive", schedule or AugmentSchedule(), rng)
    if params.max_shift > 0:
        dy, dx = rng.integers(-params.max_shift, params.max_shift + 1, size=2)
        if dy or dx:
            out = ndimage.shift(out, (dy, dx), order=0, mode="nearest")
    if params.max_noise > 0:
        sigma = rng.uniform(0, params.max_noise)
        out = to_uint8(out + rng.normal(0, sigma, size=out.shape))
    return np.asarray(out, dtype=np.uint8)


def _partner(dataset, index, rng):
    members = dataset.classes[dataset.labels[index]]
    if len(members) == 1:
        return index
    others = members[members != index]
    return int(others[rng.integers(0, len(others))])


def make_tiered_benchmark(dataset, tier="easy", rng=None, n_pairs=500, negatives_per_positive=5,
                          n_queries=500, pool_size=None, ladder=DEFAULT_LADDER, schedule=None):
    """Pair and retrieval sets with tier-scaled jitter.

    ``tier`` is a tier name or a :class:`TierParams`.  Positives are two
    re-augmented members of one class (the same patch twice for singleton
    classes); intra negatives pair classes of the same source family, inter
    negatives classes of different families.
    """
    params = TIERS[tier] if isinstance(tier, str) else tier
    tier_name = tier if isinstance(tier, str) else "custom"
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n_classes = dataset.n_classes
    if n_classes < 2:
        raise InsufficientDataError("a benchmark needs at least two classes")
    fam = dataset.class_families()
    by_family = {f: np.flatnonzero(fam == f) for f in np.unique(fam)}
    rep = np.array([dataset.classes[c][0] for c in range(n_classes)])
    jit = lambda p: jitter_patch(p, params, rng, schedule)  # noqa: E731

    # verification pairs
    a, b, labels, kinds = [], [], [], []
    pos_classes = rng.choice(n_classes, size=n_pairs, replace=n_pairs > n_classes)
    for c in pos_classes:
        i = int(dataset.classes[c][rng.integers(0, len(dataset.classes[c]))])
        a.append(jit(dataset.patches[i]))
        b.append(jit(dataset.patches[_partner(dataset, i, rng)]))
        labels.append(True)
        kinds.append("")
    for kind in ("inter", "intra"):
        for _ in range(n_pairs * negatives_per_positive):
            c = int(rng.integers(0, n_classes))
            if kind == "intra":
                pool = by_family[fam[c]]
                if len(pool) < 2:
                    continue
                c2 = c
                while c2 == c:
                    c2 = int(pool[rng.integers(0, len(pool))])
            else:
                others = [f for f in by_family if f != fam[c]]
                if not others:
                    continue
                pool = by_family[others[rng.integers(0, len(others))]]
                c2 = int(pool[rng.integers(0, len(pool))])
            i = int(dataset.classes[c][rng.integers(0, len(dataset.classes[c]))])
            j = int(dataset.classes[c2][rng.integers(0, len(dataset.classes[c2]))])
            a.append(jit(dataset.patches[i]))
            b.append(jit(dataset.patches[j]))
            labels.append(False)
            kinds.append(kind)
    if not any(k for k in kinds):
        raise InsufficientDataError("no negative pairs could be formed")
    pairset = PairSet(np.stack(a), np.stack(b), np.array(labels), np.array(kinds, dtype=object))

    # retrieval: queries from some classes, distractors from all the others
    n_queries = min(n_queries, n_classes - 1)
    perm = rng.permutation(n_classes)
    q_classes, rest = perm[:n_queries], perm[n_queries:]
    queries, matches = [], []
    for c in q_classes:
        i = int(dataset.classes[c][rng.integers(0, len(dataset.classes[c]))])
        queries.append(jit(dataset.patches[i]))
        matches.append(jit(dataset.patches[_partner(dataset, i, rng)]))
    if pool_size is None:
        pool_size = min(len(rest), max(ladder) if ladder else 0)
    if pool_size > len(rest):
        raise InsufficientDataError(f"only {len(rest)} classes left for a distractor pool of {pool_size}")
    pool = [jit(dataset.patches[rep[c]]) for c in rest[:pool_size]]
    pool = np.stack(pool) if pool else np.zeros((0, 32, 32), np.uint8)
    usable = tuple(n for n in ladder if n <= len(pool))
    rset = RetrievalSet(np.stack(queries), np.stack(matches), pool, usable)
    rset.tier = tier_name
    return pairset, rset


# ---------------------------------------------------------------------------
# external patch stacks

class PatchStackError(ValueError):
    pass


def _read_stack(path):
    sidecar = str(path) + ".geom"
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            w, h = (int(v) for v in fh.read().split()[:2])
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) != w * h:
            raise PatchStackError(f"{path}: {len(raw)} bytes, geometry says {w}x{h}")
        return np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    return read_pgm(path)


def fit_patch(patch, edge=32, fit="center_crop"):
    h, w = patch.shape
    if (h, w) == (edge, edge):
        return patch.copy()
    if fit == "center_crop" and h >= edge and w >= edge:
        y, x = (h - edge) // 2, (w - edge) // 2
        return patch[y:y + edge, x:x + edge].copy()
    if fit in ("center_crop", "downscale"):
        return to_uint8(resize(patch, (edge, edge)))
    raise ValueError(f"unknown fit mode {fit!r}")


def ingest_patch_stack(path, patch_edge=32, fit="center_crop"):
    """Split a vertical stack of square patches and fit each to ``patch_edge``."""
    try:
        stack = _read_stack(path)
    except OSError as exc:
        raise PatchStackError(f"{path}: unreadable ({exc})") from exc
    except ValueError as exc:
        raise PatchStackError(str(exc)) from exc
    h, w = stack.shape
    if w == 0 or h % w:
        raise PatchStackError(f"{path}: stack height {h} is not a multiple of width {w}")
    return np.stack([fit_patch(stack[k * w:(k + 1) * w], patch_edge, fit) for k in range(h // w)])
