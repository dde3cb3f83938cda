"""Retrieval and divergence evaluation of embedding sets.

recall@K follows the standard image-retrieval protocol: each row queries
all other rows, and the query scores 1 if any of its K nearest neighbors
shares its label. Distances tie-break by ascending index, which keeps the
ranking (and thus the metric) fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .errors import DimensionError, DomainError
from .relational import (_unit_rows, distance_potential_values,
                         enumerate_pairs, huber, rkd_distance_loss)

HISTOGRAM_BINS = 32
SUBSAMPLE_LIMIT = 512


def recall_at_k(embeddings, labels, ks) -> dict[int, float]:
    """Average recall@K over all queries, for each K in ``ks``.

    Neighbors are ranked by Euclidean distance with the query excluded;
    exact ties are broken by the lower row index.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    n = emb.shape[0]
    if n < 2:
        raise DomainError(f"recall needs at least 2 rows, got {n}")
    if lab.shape != (n,):
        raise DimensionError(f"{n} rows need as many labels, got {lab.shape}")
    ks = [int(k) for k in ks]
    for k in ks:
        if not 1 <= k < n:
            raise DomainError(f"K must satisfy 1 <= K < {n}, got {k}")

    k_max = max(ks)
    hits = {k: 0 for k in ks}
    for q in range(n):
        delta = emb - emb[q]
        sq_dist = np.square(delta).sum(axis=1)
        sq_dist[q] = np.inf  # exclude the query itself
        order = np.argsort(sq_dist, kind="stable")[:k_max]
        same = lab[order] == lab[q]
        for k in ks:
            if same[:k].any():
                hits[k] += 1
    return {k: hits[k] / n for k in ks}


def classification_accuracy(logits, labels) -> float:
    """Top-1 accuracy of classifier logits (ties to the lower class id)."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape[0] != labels.shape[0]:
        raise DimensionError(
            f"{logits.shape[0]} logit rows vs {labels.shape[0]} labels")
    if logits.shape[0] == 0:
        raise DomainError("accuracy needs a non-empty batch")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


@dataclass
class DivergenceReport:
    """Relational divergence of embedding set B from reference set A."""

    n_rows: int
    n_used: int
    subsampled: bool
    distance_divergence: float
    angle_divergence: float | None
    psi_d_edges: np.ndarray
    psi_d_hist_a: np.ndarray
    psi_d_hist_b: np.ndarray
    psi_a_edges: np.ndarray | None
    psi_a_hist_a: np.ndarray | None
    psi_a_hist_b: np.ndarray | None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def listify(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "n_rows": self.n_rows,
            "n_used": self.n_used,
            "subsampled": self.subsampled,
            "distance_divergence": self.distance_divergence,
            "angle_divergence": self.angle_divergence,
            "psi_d_edges": listify(self.psi_d_edges),
            "psi_d_hist_a": listify(self.psi_d_hist_a),
            "psi_d_hist_b": listify(self.psi_d_hist_b),
            "psi_a_edges": listify(self.psi_a_edges),
            "psi_a_hist_a": listify(self.psi_a_hist_a),
            "psi_a_hist_b": listify(self.psi_a_hist_b),
            "notes": list(self.notes),
        }


def relational_divergence_report(emb_a, emb_b, seed: int = 0,
                                 subsample_limit: int = SUBSAMPLE_LIMIT) -> DivergenceReport:
    """Distance/angle divergences of B from A, plus potential histograms.

    Row counts must match; embedding dimensions may differ (the relational
    potentials never compare coordinates across sets). Above
    ``subsample_limit`` rows, a seeded subsample keeps the cubic angle
    enumeration tractable and the report says so.
    """
    a = np.asarray(emb_a, dtype=np.float64)
    b = np.asarray(emb_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("divergence inputs must be 2-D matrices")
    if a.shape[0] != b.shape[0]:
        raise DomainError(
            f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    n = a.shape[0]
    if n < 2:
        raise DomainError(f"divergence needs at least 2 rows, got {n}")

    notes = []
    used = np.arange(n)
    if n > subsample_limit:
        rng = np.random.default_rng(seed)
        used = np.sort(rng.choice(n, size=subsample_limit, replace=False))
        notes.append(
            f"subsampled {subsample_limit} of {n} rows (seed {seed}) for "
            f"tuple enumeration")
    sub_a, sub_b = a[used], b[used]
    m = len(used)

    dist_div = float(
        rkd_distance_loss(sub_a, Tape().constant(sub_b)).value[0, 0])
    pairs = enumerate_pairs(m)
    psi_d_a = distance_potential_values(sub_a, pairs)
    psi_d_b = distance_potential_values(sub_b, pairs)
    top = max(psi_d_a.max(), psi_d_b.max())
    d_edges = np.linspace(0.0, top if top > 0 else 1.0, HISTOGRAM_BINS + 1)
    d_hist_a, _ = np.histogram(psi_d_a, bins=d_edges)
    d_hist_b, _ = np.histogram(psi_d_b, bins=d_edges)

    angle_div = a_edges = a_hist_a = a_hist_b = None
    if m >= 3:
        a_edges = np.linspace(-1.0, 1.0, HISTOGRAM_BINS + 1)
        angle_div, a_hist_a, a_hist_b = _streamed_angle_divergence(
            sub_a, sub_b, a_edges)
    else:
        notes.append("fewer than 3 rows: angle-wise divergence omitted")

    return DivergenceReport(
        n_rows=n, n_used=m, subsampled=m != n,
        distance_divergence=dist_div, angle_divergence=angle_div,
        psi_d_edges=d_edges, psi_d_hist_a=d_hist_a, psi_d_hist_b=d_hist_b,
        psi_a_edges=a_edges, psi_a_hist_a=a_hist_a, psi_a_hist_b=a_hist_b,
        notes=notes)


def _streamed_angle_divergence(a, b, edges):
    """Angle divergence + histograms without materializing all m^3/2 triplets.

    Iterates over vertices; each vertex contributes the upper triangle of a
    (m-1)x(m-1) cosine matrix, keeping memory quadratic while the tuple
    count stays cubic.
    """
    m = a.shape[0]
    upper = np.triu_indices(m - 1, k=1)
    hist_a = np.zeros(len(edges) - 1, dtype=np.int64)
    hist_b = np.zeros(len(edges) - 1, dtype=np.int64)
    total = 0.0
    count = 0
    for j in range(m):
        others = np.concatenate([np.arange(j), np.arange(j + 1, m)])
        ua = _unit_rows(a[others] - a[j])
        ub = _unit_rows(b[others] - b[j])
        cos_a = np.clip(ua @ ua.T, -1.0, 1.0)[upper]
        cos_b = np.clip(ub @ ub.T, -1.0, 1.0)[upper]
        total += float(np.sum(huber(cos_a, cos_b)))
        count += cos_a.size
        hist_a += np.histogram(cos_a, bins=edges)[0]
        hist_b += np.histogram(cos_b, bins=edges)[0]
    return total / count, hist_a, hist_b
