"""Batch construction: class-balanced batches and distance-weighted triplets.

Batches hold ``batch_size / k_per_class`` distinct classes with exactly
``k_per_class`` examples each, drawn without replacement within an epoch.
Negatives for the triplet loss are sampled with probability inversely
proportional to the density of pairwise distances on the unit sphere, which
concentrates them near the anchor without collapsing to the single hardest
example.
"""

from __future__ import annotations

import numpy as np

from .baselines import TripletIndexBatch
from .errors import ConfigError, SamplingError

DISTANCE_CUTOFF = 0.5


def class_balanced_batches(labels, batch_size: int, k_per_class: int,
                           seed) -> list[np.ndarray]:
    """Split an epoch into class-balanced index batches, deterministically.

    Each class's examples are shuffled and chunked into groups of
    ``k_per_class``; batches greedily collect groups of distinct classes.
    Leftover groups that cannot fill a batch are dropped, so every index
    appears at most once per epoch.
    """
    labels = np.asarray(labels)
    if batch_size <= 0 or k_per_class <= 0:
        raise ConfigError("batch_size and k_per_class must be positive")
    if batch_size % k_per_class != 0:
        raise ConfigError(
            f"batch_size {batch_size} not divisible by k_per_class {k_per_class}")
    classes_per_batch = batch_size // k_per_class
    classes = np.unique(labels)
    if classes_per_batch > len(classes):
        raise ConfigError(
            f"batch needs {classes_per_batch} distinct classes, dataset has "
            f"{len(classes)}")

    rng = np.random.default_rng(seed)
    groups = []  # (class, index-chunk) pool for this epoch
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if len(idx) < k_per_class:
            raise ConfigError(
                f"class {c} has {len(idx)} examples, needs >= {k_per_class}")
        idx = rng.permutation(idx)
        for start in range(0, len(idx) - k_per_class + 1, k_per_class):
            groups.append((c, idx[start:start + k_per_class]))

    order = rng.permutation(len(groups))
    pool = [groups[i] for i in order]

    batches = []
    while True:
        picked, used_classes = [], set()
        remaining = []
        for c, chunk in pool:
            if len(picked) < classes_per_batch and c not in used_classes:
                picked.append(chunk)
                used_classes.add(c)
            else:
                remaining.append((c, chunk))
        if len(picked) < classes_per_batch:
            break
        batches.append(np.concatenate(picked))
        pool = remaining
    return batches


def distance_weighted_triplets(embeddings, labels, seed,
                               cutoff: float = DISTANCE_CUTOFF,
                               uniform: bool = False) -> TripletIndexBatch:
    """One negative per ordered same-class (anchor, positive) pair.

    Sampling weight for a negative at distance d is 1/q(d) with
    q(d) proportional to d^(n-2) * (1 - d^2/4)^((n-3)/2), the density of
    pairwise distances of uniform points on the unit (n-1)-sphere; the
    embeddings are therefore assumed L2-normalized. Distances are clipped
    below at ``cutoff`` and log-weights are shifted by their max so the
    weights stay bounded before normalization. ``uniform=True`` ignores
    distances entirely.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n, dim = emb.shape
    if len(np.unique(labels)) < 2:
        raise SamplingError("need at least 2 classes to sample negatives")

    delta = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt(np.maximum(np.square(delta).sum(axis=2), 0.0))

    rng = np.random.default_rng(seed)
    anchors, positives, negatives = [], [], []
    for a in range(n):
        pos = np.flatnonzero((labels == labels[a]) & (np.arange(n) != a))
        if pos.size == 0:
            continue
        cand = np.flatnonzero(labels != labels[a])
        if uniform:
            probs = np.full(cand.size, 1.0 / cand.size)
        else:
            d = np.maximum(dist[a, cand], cutoff)
            log_q = ((dim - 2) * np.log(d)
                     + ((dim - 3) / 2.0) * np.log(np.maximum(1.0 - 0.25 * d * d, 1e-8)))
            weights = np.exp(-log_q - np.max(-log_q))
            probs = weights / weights.sum()
        chosen = rng.choice(cand, size=pos.size, p=probs)
        anchors.extend([a] * pos.size)
        positives.extend(pos)
        negatives.extend(chosen)
    return TripletIndexBatch(np.array(anchors, dtype=np.intp),
                             np.array(positives, dtype=np.intp),
                             np.array(negatives, dtype=np.intp))
