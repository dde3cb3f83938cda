"""Configurable MLP embedding networks for the teacher and student roles.

A model is alternating affine + ReLU layers with a final affine layer, an
optional row-wise L2 normalization of the output, and an optional linear
classifier head on top of the embedding. Relational and projected-L2 losses
attach to the embedding; softened-softmax and cross-entropy attach to the
classifier logits.

Parameters round-trip through a little-endian binary file (magic "RKDP")
that also carries the architecture for validation on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .errors import ConfigError, DimensionError, FormatError

_MAGIC = b"RKDP"
_VERSION = 1
_ACTIVATIONS = ("relu",)


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: widths from input to embedding dim."""

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    l2_normalize_output: bool = False
    classifier_classes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ConfigError("layer_widths needs at least input and output dims")
        if any(w <= 0 for w in self.layer_widths):
            raise ConfigError(f"layer widths must be positive: {self.layer_widths}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.classifier_classes is not None and self.classifier_classes < 2:
            raise ConfigError("classifier needs at least 2 classes")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_widths[-1]

    def same_architecture(self, other: "MlpSpec") -> bool:
        """Equality of the trainable structure, ignoring output normalization."""
        return (self.layer_widths == other.layer_widths
                and self.activation == other.activation
                and self.classifier_classes == other.classifier_classes)


@dataclass
class Parameters:
    """Weights/biases per layer, plus the optional classifier head."""

    weights: list  # (fan_in, fan_out) per layer
    biases: list   # (1, fan_out) per layer
    classifier_weight: object = None  # (embedding_dim, classes)
    classifier_bias: object = None    # (1, classes)

    def arrays(self) -> list:
        """Flat parameter list in a fixed order (weights/biases interleaved)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        if self.classifier_weight is not None:
            out.extend((self.classifier_weight, self.classifier_bias))
        return out

    def copy(self) -> "Parameters":
        return Parameters(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            None if self.classifier_weight is None else self.classifier_weight.copy(),
            None if self.classifier_bias is None else self.classifier_bias.copy(),
        )


class ForwardResult(NamedTuple):
    embeddings: object
    logits: object = None


def init_params(spec: MlpSpec, seed: int) -> Parameters:
    """He-style initialization: N(0, 2/fan_in) weights, zero biases.

    Bit-reproducible for a given (spec, seed).
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths, spec.layer_widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    cw = cb = None
    if spec.classifier_classes is not None:
        d = spec.embedding_dim
        cw = rng.normal(0.0, np.sqrt(2.0 / d), (d, spec.classifier_classes))
        cb = np.zeros((1, spec.classifier_classes))
    return Parameters(weights, biases, cw, cb)


def params_to_leaves(tape: Tape, params: Parameters) -> Parameters:
    """Mirror a Parameters container with tape leaves for training."""
    return Parameters(
        [tape.leaf(w) for w in params.weights],
        [tape.leaf(b) for b in params.biases],
        None if params.classifier_weight is None else tape.leaf(params.classifier_weight),
        None if params.classifier_bias is None else tape.leaf(params.classifier_bias),
    )


def forward(params: Parameters, spec: MlpSpec, inputs, tape: Tape | None = None) -> ForwardResult:
    """Run the network; with a tape the result is differentiable.

    Without a tape the same operations run on a scratch tape and plain
    arrays are returned, so the two paths are bitwise identical. Parameters
    may be arrays or Nodes of ``tape``.
    """
    on_tape = tape is not None
    if tape is None:
        tape = Tape()
        params = params_to_leaves(tape, params)
    elif not isinstance(params.weights[0], Node):
        params = params_to_leaves(tape, params)

    x = inputs if isinstance(inputs, Node) else tape.constant(inputs)
    if x.value.shape[1] != spec.input_dim:
        raise DimensionError(
            f"input has {x.value.shape[1]} columns, spec expects {spec.input_dim}")
    if len(params.weights) != len(spec.layer_widths) - 1:
        raise DimensionError(
            f"parameters carry {len(params.weights)} layers, "
            f"spec has {len(spec.layer_widths) - 1}")

    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add(ad.matmul(h, w), b)
        if i != last:
            h = ad.maximum(h, 0.0)
    if spec.l2_normalize_output:
        h = ad.row_l2_normalize(h)

    logits = None
    if spec.classifier_classes is not None:
        if params.classifier_weight is None:
            raise ConfigError("spec has a classifier head but parameters do not")
        logits = ad.add(ad.matmul(h, params.classifier_weight), params.classifier_bias)

    if on_tape:
        return ForwardResult(h, logits)
    return ForwardResult(h.value, None if logits is None else logits.value)


def embed(params: Parameters, spec: MlpSpec, inputs) -> np.ndarray:
    """Plain-array embeddings (no gradients)."""
    return forward(params, spec, inputs).embeddings


# ---------------------------------------------------------------------------
# RKDP parameter files


def save_params(path, spec: MlpSpec, params: Parameters) -> None:
    """Write spec + parameters; float64 little-endian, lossless round-trip."""
    chunks = [_MAGIC, struct.pack("<I", _VERSION)]
    chunks.append(struct.pack("<I", len(spec.layer_widths)))
    chunks.append(struct.pack(f"<{len(spec.layer_widths)}I", *spec.layer_widths))
    chunks.append(struct.pack("<BB", _ACTIVATIONS.index(spec.activation),
                              int(spec.l2_normalize_output)))
    chunks.append(struct.pack("<I", spec.classifier_classes or 0))
    for arr in params.arrays():
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_params(path, expected_spec: MlpSpec | None = None) -> tuple[MlpSpec, Parameters]:
    """Read an RKDP file back into (spec, params), validating as it goes.

    If ``expected_spec`` is given, a mismatching stored spec is a
    FormatError naming the differing field.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)

    magic = reader.take(4, "magic")
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte offset 0, expected {_MAGIC!r}")
    (version,) = struct.unpack("<I", reader.take(4, "version"))
    if version != _VERSION:
        raise FormatError(f"unsupported version {version} at byte offset 4")
    (n_widths,) = struct.unpack("<I", reader.take(4, "layer count"))
    if n_widths < 2 or n_widths > 1_000_000:
        raise FormatError(f"implausible layer count {n_widths} at byte offset 8")
    widths = struct.unpack(f"<{n_widths}I", reader.take(4 * n_widths, "layer widths"))
    act_code, l2_flag = struct.unpack("<BB", reader.take(2, "activation/l2 flags"))
    if act_code >= len(_ACTIVATIONS):
        raise FormatError(f"unknown activation code {act_code}")
    if l2_flag not in (0, 1):
        raise FormatError(f"l2-normalize flag must be 0 or 1, got {l2_flag}")
    (classes,) = struct.unpack("<I", reader.take(4, "classifier classes"))
    try:
        spec = MlpSpec(widths, _ACTIVATIONS[act_code], bool(l2_flag),
                       classes or None)
    except ConfigError as exc:
        raise FormatError(f"stored spec is invalid: {exc}") from exc

    if expected_spec is not None:
        for name in ("layer_widths", "activation", "l2_normalize_output",
                     "classifier_classes"):
            if getattr(spec, name) != getattr(expected_spec, name):
                raise FormatError(
                    f"stored spec field {name} = {getattr(spec, name)!r} does not "
                    f"match expected {getattr(expected_spec, name)!r}")

    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths, spec.layer_widths[1:]):
        weights.append(reader.matrix(fan_in, fan_out, "layer weight"))
        biases.append(reader.matrix(1, fan_out, "layer bias"))
    cw = cb = None
    if spec.classifier_classes is not None:
        cw = reader.matrix(spec.embedding_dim, spec.classifier_classes,
                           "classifier weight")
        cb = reader.matrix(1, spec.classifier_classes, "classifier bias")
    reader.expect_end()
    return spec, Parameters(weights, biases, cw, cb)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.blob):
            raise FormatError(
                f"truncated file: needed {count} bytes for {what} at byte "
                f"offset {self.offset}, file has {len(self.blob)}")
        out = self.blob[self.offset:self.offset + count]
        self.offset += count
        return out

    def matrix(self, rows: int, cols: int, what: str) -> np.ndarray:
        raw = self.take(8 * rows * cols, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)

    def expect_end(self) -> None:
        if self.offset != len(self.blob):
            raise FormatError(
                f"trailing data: expected end at byte offset {self.offset}, "
                f"file has {len(self.blob)} bytes")
