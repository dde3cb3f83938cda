"""Relational distillation losses: distance-wise and angle-wise.

Both losses compare a relational potential computed on the teacher's
embeddings against the same potential computed on the student's, penalizing
the difference with a unit-transition Huber penalty and averaging over all
tuples of distinct batch elements. Because the potentials only see distances
(normalized by the batch mean) and angles, both losses are invariant under
rotation, translation, and uniform scaling of either embedding set.

Tuples are enumerated without order: the potentials are symmetric under
swapping the outer indices, so ordered enumeration would only double every
sum, a constant that the loss weights absorb. Losses average over tuples
rather than summing so their magnitude does not grow with batch size.

Teacher potentials are computed once per call and enter the student's tape
as constants; the gradient flows through the student potentials only,
including through the student-side mean distance.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import EPS, Node
from .errors import ConfigError, DimensionError, DomainError

# Loss weights used in the experiments: (distance, angle).
METRIC_WEIGHTS = (1.0, 2.0)
CLASSIFICATION_WEIGHTS = (25.0, 50.0)


def enumerate_pairs(n: int) -> list[tuple[int, int]]:
    """All unordered index pairs (i, j), i < j, in lexicographic order."""
    if n < 2:
        raise DomainError(f"need at least 2 points for pairs, got {n}")
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def enumerate_angle_triplets(n: int) -> list[tuple[int, int, int]]:
    """All angle triplets (i, j, k): vertex j, unordered flanks i < k.

    Every point serves as the vertex once per flank pair, giving
    n * (n-1) * (n-2) / 2 triplets.
    """
    if n < 3:
        raise DomainError(f"need at least 3 points for angle triplets, got {n}")
    out = []
    for j in range(n):
        for i in range(n):
            if i == j:
                continue
            for k in range(i + 1, n):
                if k != j:
                    out.append((i, j, k))
    return out


def huber(x, y):
    """Scalar/array Huber penalty with unit transition: the distillation l.

    0.5*(x-y)^2 for |x-y| <= 1, |x-y| - 0.5 otherwise.
    """
    r = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    out = np.where(np.abs(r) <= 1.0, 0.5 * r * r, np.abs(r) - 0.5)
    return float(out) if out.ndim == 0 else out


def distance_potentials(e: Node, pairs) -> Node:
    """Pairwise distances over ``pairs`` divided by their batch mean -> P x 1.

    The gradient flows through both the distances and the mean. Duplicate
    points produce a potential of exactly 0 with a finite (zero) gradient.
    """
    i, j = _pair_arrays(pairs)
    diff = ad.sub(ad.take_rows(e, i), ad.take_rows(e, j))
    dists = ad.row_l2_norms(diff)
    mu = ad.maximum(ad.reduce_mean(dists), EPS)
    return ad.div(dists, mu)


def angle_potentials(e: Node, triplets) -> Node:
    """Cosine of the angle at each triplet's vertex -> T x 1, in [-1, 1].

    Both difference vectors are normalized by max(norm, EPS); a flank that
    coincides with the vertex contributes a zero vector, hence cosine 0.
    """
    i, j, k = _triplet_arrays(triplets)
    ei = ad.take_rows(e, i)
    ej = ad.take_rows(e, j)
    ek = ad.take_rows(e, k)
    u = ad.row_l2_normalize(ad.sub(ei, ej))
    w = ad.row_l2_normalize(ad.sub(ek, ej))
    return ad.clip(ad.row_sum(ad.mul(u, w)), -1.0, 1.0)


def distance_potential_values(embeddings: np.ndarray, pairs) -> np.ndarray:
    """Potentials of a plain array; bitwise-identical math to the tape path."""
    e = np.asarray(embeddings, dtype=np.float64)
    i, j = _pair_arrays(pairs)
    diff = e[i] - e[j]
    dists = (diff * diff).sum(axis=1, keepdims=True)
    np.sqrt(dists, out=dists)
    mu = np.maximum(dists.mean(), EPS)
    return (dists / mu)[:, 0]


def angle_potential_values(embeddings: np.ndarray, triplets) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    i, j, k = _triplet_arrays(triplets)
    u = _unit_rows(e[i] - e[j])
    w = _unit_rows(e[k] - e[j])
    return np.clip((u * w).sum(axis=1), -1.0, 1.0)


def rkd_distance_loss(teacher_embeddings: np.ndarray, student: Node) -> Node:
    """Mean Huber penalty between teacher and student distance potentials.

    Teacher potentials are frozen constants; requires matching batch sizes
    of at least 2.
    """
    teacher = _check_batch(teacher_embeddings, student, minimum=2)
    pairs = _pair_index_arrays(teacher.shape[0])
    target = student.tape.constant(
        distance_potential_values(teacher, pairs)[:, None])
    return ad.reduce_mean(ad.huber(distance_potentials(student, pairs), target))


def rkd_angle_loss(teacher_embeddings: np.ndarray, student: Node) -> Node:
    """Mean Huber penalty between teacher and student angle potentials."""
    teacher = _check_batch(teacher_embeddings, student, minimum=3)
    target = student.tape.constant(_all_angle_values(teacher)[:, None])
    return ad.reduce_mean(ad.huber(_full_angle_potentials(student), target))


def rkd_da_loss(teacher_embeddings: np.ndarray, student: Node,
                distance_weight: float = 1.0,
                angle_weight: float = 2.0) -> Node:
    """Weighted sum of the distance- and angle-wise losses.

    A zero-weight term is skipped entirely, so e.g. angle_weight=0 works on
    batches of 2. Both weights zero is a configuration error.
    """
    if distance_weight < 0 or angle_weight < 0:
        raise ConfigError("loss weights must be non-negative")
    if distance_weight == 0 and angle_weight == 0:
        raise ConfigError("at least one relational loss weight must be positive")
    total = None
    if distance_weight > 0:
        total = ad.scale(rkd_distance_loss(teacher_embeddings, student),
                         distance_weight)
    if angle_weight > 0:
        angle = ad.scale(rkd_angle_loss(teacher_embeddings, student),
                         angle_weight)
        total = angle if total is None else ad.add(total, angle)
    return total


def _check_batch(teacher_embeddings, student: Node, minimum: int) -> np.ndarray:
    teacher = ad.as_matrix(teacher_embeddings)
    n = student.value.shape[0]
    if teacher.shape[0] != n:
        raise DimensionError(
            f"teacher batch has {teacher.shape[0]} rows, student has {n}")
    if n < minimum:
        raise DomainError(f"need at least {minimum} points, got {n}")
    return teacher


def _pair_arrays(pairs):
    if isinstance(pairs, tuple) and len(pairs) == 2:
        return pairs
    arr = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def _triplet_arrays(triplets):
    if isinstance(triplets, tuple) and len(triplets) == 3:
        return triplets
    arr = np.asarray(triplets, dtype=np.intp).reshape(-1, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2]


@lru_cache(maxsize=128)
def _pair_index_arrays(n: int):
    """Index arrays of enumerate_pairs(n) (same order), cached by n."""
    i, j = np.triu_indices(n, k=1)
    return i.astype(np.intp), j.astype(np.intp)


def _full_angle_potentials(e: Node) -> Node:
    """Tape angle potentials over the full enumeration of e's batch.

    Same values as :func:`angle_potentials` on the full triplet list, but
    the n^2 distinct unit difference vectors are built once and the triplet
    structure only gathers rows, instead of normalizing every gathered
    duplicate.
    """
    n = e.value.shape[0]
    src, vertex = _ordered_pair_gather(n)
    units = ad.row_l2_normalize(
        ad.sub(ad.take_rows(e, src), ad.take_rows(e, vertex)))
    u_rows, w_rows = _angle_unit_gather(n)
    u = ad.take_rows(units, u_rows)
    w = ad.take_rows(units, w_rows)
    return ad.clip(ad.row_sum(ad.mul(u, w)), -1.0, 1.0)


@lru_cache(maxsize=128)
def _ordered_pair_gather(n: int):
    """Gather indices building all n^2 ordered difference vectors e_a - e_b.

    The diagonal rows are zero vectors; they are never selected by
    :func:`_angle_unit_gather` but keep the flat indexing a*n + b trivial.
    """
    a = np.repeat(np.arange(n, dtype=np.intp), n)
    b = np.tile(np.arange(n, dtype=np.intp), n)
    return a, b


@lru_cache(maxsize=128)
def _angle_unit_gather(n: int):
    """Row indices into the ordered-pair unit matrix for each triplet."""
    i, j, k = _angle_index_arrays(n)
    return (i * n + j).astype(np.intp), (k * n + j).astype(np.intp)


@lru_cache(maxsize=128)
def _angle_index_arrays(n: int):
    """Index arrays of enumerate_angle_triplets(n) (same order), cached."""
    i_all, j_all, k_all = [], [], []
    flank_p, flank_q = np.triu_indices(n - 1, k=1)
    for j in range(n):
        others = np.concatenate([np.arange(j), np.arange(j + 1, n)])
        i_all.append(others[flank_p])
        j_all.append(np.full(flank_p.size, j, dtype=np.intp))
        k_all.append(others[flank_q])
    return (np.concatenate(i_all).astype(np.intp),
            np.concatenate(j_all),
            np.concatenate(k_all).astype(np.intp))


def _all_angle_values(e: np.ndarray) -> np.ndarray:
    """Angle potentials over the full enumeration, streamed per vertex.

    Avoids materializing the n^3/2 gathered difference vectors; ordering
    matches :func:`_angle_index_arrays`.
    """
    n = e.shape[0]
    upper = np.triu_indices(n - 1, k=1)
    chunks = []
    for j in range(n):
        others = np.concatenate([np.arange(j), np.arange(j + 1, n)])
        u = _unit_rows(e[others] - e[j])
        chunks.append(np.clip(u @ u.T, -1.0, 1.0)[upper])
    return np.concatenate(chunks)


def _unit_rows(v: np.ndarray) -> np.ndarray:
    norms = np.sqrt((v * v).sum(axis=1, keepdims=True))
    return v / np.maximum(norms, EPS)
