"""Synthetic cluster datasets and the RKEB embedding/dataset file format.

The generator stands in for image benchmarks at desk scale: class centers
on a sphere, isotropic Gaussian clusters around them. RKEB files store an
N x d float32 matrix with aligned u32 labels; computation everywhere else
is float64, so loading quantizes to 32-bit storage precision by design.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, FormatError

_MAGIC = b"RKEB"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass
class EmbeddingBatch:
    """An N x d embedding (or feature) matrix with aligned integer labels."""

    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.ndim != 2:
            raise DimensionError(
                f"embeddings must be 2-D, got shape {self.embeddings.shape}")
        if self.labels.shape != (self.embeddings.shape[0],):
            raise DimensionError(
                f"{self.embeddings.shape[0]} rows need as many labels, "
                f"got shape {self.labels.shape}")

    def __len__(self):
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class SyntheticSpec:
    """Cluster layout: centers on a sphere, Gaussian spread around them."""

    classes: int
    per_class: int
    ambient_dim: int
    cluster_spread: float
    inter_class_separation: float
    seed: int = 0

    def __post_init__(self):
        for name in ("classes", "per_class", "ambient_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.cluster_spread < 0 or self.inter_class_separation <= 0:
            raise ConfigError("spread must be >= 0 and separation > 0")


def gen_synthetic(spec: SyntheticSpec) -> EmbeddingBatch:
    """Deterministically sample the dataset described by ``spec``.

    Class centers are drawn uniformly-ish on the sphere of radius
    ``inter_class_separation`` (normalized Gaussians); each point is its
    center plus N(0, spread^2) noise. Points are ordered class-major.
    """
    if spec.cluster_spread >= spec.inter_class_separation:
        warnings.warn(
            f"cluster_spread {spec.cluster_spread} >= separation "
            f"{spec.inter_class_separation}; clusters will overlap heavily",
            stacklevel=2)
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(size=(spec.classes, spec.ambient_dim))
    norms = np.maximum(np.linalg.norm(centers, axis=1, keepdims=True), 1e-12)
    centers = centers / norms * spec.inter_class_separation
    noise = rng.normal(0.0, 1.0, (spec.classes, spec.per_class, spec.ambient_dim))
    points = centers[:, None, :] + spec.cluster_spread * noise
    features = points.reshape(spec.classes * spec.per_class, spec.ambient_dim)
    labels = np.repeat(np.arange(spec.classes), spec.per_class)
    return EmbeddingBatch(features, labels)


def write_embeddings(path, embeddings, labels) -> None:
    """Write an RKEB file: header, row-major float32 data, u32 labels."""
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    if emb.ndim != 2:
        raise DimensionError(f"embeddings must be 2-D, got shape {emb.shape}")
    if lab.shape != (emb.shape[0],):
        raise DimensionError(
            f"{emb.shape[0]} rows need as many labels, got shape {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= 2**32):
        raise DomainError("labels must fit in an unsigned 32-bit integer")
    n, d = emb.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n, d))
        fh.write(np.ascontiguousarray(emb, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(lab, dtype="<u4").tobytes())


def read_embeddings(path) -> EmbeddingBatch:
    """Read an RKEB file; malformed input raises FormatError, never crashes.

    The float32 payload is upcast to float64 for computation.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(
            f"truncated header: need {_HEADER.size} bytes, file has "
            f"{len(blob)} (at byte offset {len(blob)})")
    magic, version, n, d = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte offset 0, expected {_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported version {version} at byte offset 4")
    expected = _HEADER.size + 4 * n * d + 4 * n
    if len(blob) != expected:
        raise FormatError(
            f"wrong file length: expected {expected} bytes for {n}x{d} plus "
            f"labels, got {len(blob)}")
    off = _HEADER.size
    emb = np.frombuffer(blob, dtype="<f4", count=n * d, offset=off)
    off += 4 * n * d
    lab = np.frombuffer(blob, dtype="<u4", count=n, offset=off)
    return EmbeddingBatch(emb.astype(np.float64).reshape(n, d),
                          lab.astype(np.int64))
