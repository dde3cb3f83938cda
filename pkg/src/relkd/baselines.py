"""Conventional task and per-example distillation losses.

These are the baselines the relational losses are compared against and
combined with: margin triplet loss, temperature-softened KL distillation,
projected-L2 hidden-state matching, and cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .errors import ConfigError, DimensionError, DomainError

DEFAULT_TRIPLET_MARGIN = 0.2
DEFAULT_HKD_TEMPERATURE = 4.0
DEFAULT_HKD_WEIGHT = 16.0


@dataclass
class TripletIndexBatch:
    """Aligned anchor/positive/negative index lists into one embedding batch."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.intp)
        self.positives = np.asarray(self.positives, dtype=np.intp)
        self.negatives = np.asarray(self.negatives, dtype=np.intp)
        if not (len(self.anchors) == len(self.positives) == len(self.negatives)):
            raise DimensionError("triplet index lists must have equal length")
        if np.any(self.anchors == self.positives):
            raise DomainError("anchor and positive must be distinct indices")

    def __len__(self):
        return len(self.anchors)

    def validate_labels(self, labels) -> None:
        """Check the label contract: same class for a/p, different for a/n."""
        labels = np.asarray(labels)
        if np.any(labels[self.anchors] != labels[self.positives]):
            raise DomainError("anchor and positive must share a class")
        if np.any(labels[self.anchors] == labels[self.negatives]):
            raise DomainError("anchor and negative must differ in class")


@dataclass
class ProjectionParams:
    """Linear map from student embedding space into the teacher's.

    ``weight`` has shape (teacher_dim, student_dim) and ``bias`` is a
    (1, teacher_dim) row; entries may be plain arrays or tape Nodes.
    """

    weight: object
    bias: object


def triplet_loss(embeddings: Node, triplets: TripletIndexBatch,
                 margin: float = DEFAULT_TRIPLET_MARGIN) -> Node:
    """Mean hinge on squared anchor-positive vs anchor-negative distances.

    [ ||e_a - e_p||^2 - ||e_a - e_n||^2 + margin ]_+ averaged over the
    batch; the hinge subgradient at the kink is 0.
    """
    if margin < 0:
        raise ConfigError(f"margin must be non-negative, got {margin}")
    if len(triplets) == 0:
        raise DomainError("empty triplet batch")
    a = ad.take_rows(embeddings, triplets.anchors)
    p = ad.take_rows(embeddings, triplets.positives)
    n = ad.take_rows(embeddings, triplets.negatives)
    d_ap = ad.row_sum(ad.square(ad.sub(a, p)))
    d_an = ad.row_sum(ad.square(ad.sub(a, n)))
    hinge = ad.maximum(ad.shift(ad.sub(d_ap, d_an), margin), 0.0)
    return ad.reduce_mean(hinge)


def hkd_loss(teacher_logits: np.ndarray, student_logits: Node,
             temperature: float = DEFAULT_HKD_TEMPERATURE,
             tau_squared_rescale: bool = False) -> Node:
    """Mean KL divergence between temperature-softened softmax rows.

    KL(softmax(t/tau) || softmax(s/tau)) averaged over the batch. The
    common tau^2 gradient rescale is off by default; pass
    ``tau_squared_rescale=True`` to multiply the loss by tau^2.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    teacher = ad.as_matrix(teacher_logits)
    if teacher.shape != student_logits.value.shape:
        raise DimensionError(
            f"logit shapes differ: teacher {teacher.shape}, "
            f"student {student_logits.value.shape}")
    p = ad.softmax_values(teacher, temperature)
    # Entropy term of the constant teacher; 0*log(0) contributes 0.
    p_log_p = np.where(p > 0, p * np.log(np.maximum(p, ad.EPS)), 0.0)
    entropy = p_log_p.sum(axis=1, keepdims=True)

    tape = student_logits.tape
    q = ad.softmax_rows(student_logits, temperature)
    cross = ad.row_sum(ad.mul(tape.constant(p), ad.log(q)))
    loss = ad.reduce_mean(ad.sub(tape.constant(entropy), cross))
    if tau_squared_rescale:
        loss = ad.scale(loss, temperature * temperature)
    return loss


def ikd_l2_loss(teacher_embeddings: np.ndarray, student_embeddings: Node,
                projection: ProjectionParams) -> Node:
    """Mean squared distance between teacher rows and projected student rows.

    The projection bridges differing embedding widths and is trained
    jointly, so its weight/bias are usually tape leaves.
    """
    teacher = ad.as_matrix(teacher_embeddings)
    tape = student_embeddings.tape
    weight = _as_node(tape, projection.weight)
    bias = _as_node(tape, projection.bias)
    d_t, d_s = weight.value.shape
    if student_embeddings.value.shape[1] != d_s:
        raise DimensionError(
            f"projection expects student dim {d_s}, "
            f"got {student_embeddings.value.shape[1]}")
    if teacher.shape[1] != d_t:
        raise DimensionError(
            f"projection maps to dim {d_t}, teacher has dim {teacher.shape[1]}")
    if teacher.shape[0] != student_embeddings.value.shape[0]:
        raise DimensionError(
            f"batch sizes differ: teacher {teacher.shape[0]}, "
            f"student {student_embeddings.value.shape[0]}")
    mapped = ad.add(ad.matmul(student_embeddings, ad.transpose(weight)), bias)
    diff = ad.sub(tape.constant(teacher), mapped)
    return ad.scale(ad.reduce_sum(ad.square(diff)), 1.0 / teacher.shape[0])


def cross_entropy_loss(logits: Node, labels) -> Node:
    """Mean negative log softmax probability of the true class."""
    labels = np.asarray(labels, dtype=np.intp)
    n, classes = logits.value.shape
    if n == 0:
        raise DomainError("cross-entropy needs a non-empty batch")
    if labels.shape != (n,):
        raise DimensionError(
            f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DomainError(
            f"labels must lie in [0, {classes}), got range "
            f"[{labels.min()}, {labels.max()}]")
    onehot = np.zeros((n, classes))
    onehot[np.arange(n), labels] = 1.0
    log_probs = ad.log(ad.softmax_rows(logits, 1.0))
    picked = ad.reduce_sum(ad.mul(logits.tape.constant(onehot), log_probs))
    return ad.scale(picked, -1.0 / n)


def _as_node(tape: Tape, value) -> Node:
    return value if isinstance(value, Node) else tape.constant(value)
