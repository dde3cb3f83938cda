"""The distillation training loop and its configuration.

A training run is driven by a DistillConfig: a weighted list of loss terms,
an optimizer, a batch recipe, and a seed. Teacher outputs are computed
outside the tape (plain arrays), so no gradient can reach teacher
parameters; the student's tape is rebuilt every step. Runs are fully
deterministic for a given (config, data, seed): batching, negative mining,
and initialization all derive their randomness from the config seed.

Configs round-trip through JSON with strict key checking: an unknown key
anywhere is a ConfigError, not a silent ignore.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .baselines import (ProjectionParams, TripletIndexBatch,
                        cross_entropy_loss, hkd_loss, ikd_l2_loss,
                        triplet_loss)
from .errors import ConfigError, TrainingError
from .evaluate import recall_at_k
from .models import (ForwardResult, MlpSpec, Parameters, embed, forward,
                     init_params, params_to_leaves, save_params)
from .optim import OptimizerSpec
from .relational import rkd_angle_loss, rkd_distance_loss
from .sampling import class_balanced_batches, distance_weighted_triplets

LOSS_KINDS = ("rkd-d", "rkd-a", "hkd", "fitnet", "triplet", "xent")
TEACHER_KINDS = frozenset({"rkd-d", "rkd-a", "hkd", "fitnet"})


@dataclass(frozen=True)
class LossTerm:
    kind: str
    weight: float

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(
                f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.weight < 0:
            raise ConfigError(f"loss weight must be non-negative, got {self.weight}")


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int
    k_per_class: int

    def __post_init__(self):
        if self.batch_size <= 0 or self.k_per_class <= 0:
            raise ConfigError("batch_size and k_per_class must be positive")
        if self.batch_size % self.k_per_class != 0:
            raise ConfigError(
                f"batch_size {self.batch_size} not divisible by k_per_class "
                f"{self.k_per_class}")


@dataclass(frozen=True)
class DistillConfig:
    """Everything a training run needs besides the data and the teacher."""

    student: MlpSpec
    loss_terms: tuple[LossTerm, ...]
    optimizer: OptimizerSpec
    epochs: int
    batch: BatchSpec
    seed: int
    lr_milestones: tuple[tuple[int, float], ...] = ()
    teacher_path: str | None = None
    hkd_temperature: float = 4.0
    hkd_tau_squared: bool = False
    triplet_margin: float = 0.2
    sampler_cutoff: float = 0.5
    sampler_uniform: bool = False
    recall_ks: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "loss_terms",
                           tuple(t if isinstance(t, LossTerm) else LossTerm(**t)
                                 for t in self.loss_terms))
        object.__setattr__(self, "lr_milestones",
                           tuple((int(e), float(f)) for e, f in self.lr_milestones))
        object.__setattr__(self, "recall_ks", tuple(int(k) for k in self.recall_ks))
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not any(t.weight > 0 for t in self.loss_terms):
            raise ConfigError("at least one loss term needs a positive weight")
        kinds = [t.kind for t in self.loss_terms]
        if len(set(kinds)) != len(kinds):
            raise ConfigError(f"duplicate loss kinds in {kinds}")
        if any(k in ("hkd", "xent") for k in kinds) \
                and self.student.classifier_classes is None:
            raise ConfigError("hkd/xent terms require a student classifier head")

    def active_terms(self) -> tuple[LossTerm, ...]:
        return tuple(t for t in self.loss_terms if t.weight > 0)

    def needs_teacher(self) -> bool:
        return any(t.kind in TEACHER_KINDS for t in self.active_terms())


@dataclass
class MetricsRecord:
    """One structured log entry per epoch."""

    epoch: int
    losses: dict
    recall: dict
    wall_seconds: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "losses": {k: float(v) for k, v in self.losses.items()},
            "recall": {str(k): float(v) for k, v in self.recall.items()},
            "wall_seconds": self.wall_seconds,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class GenerationRecord:
    """One self-distillation generation: who taught whom, and how it scored."""

    generation: int
    teacher_path: str
    student_path: str
    final_recall: dict


# ---------------------------------------------------------------------------
# Config file round-trip (strict keys)


def config_to_dict(cfg: DistillConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["student"]["layer_widths"] = list(cfg.student.layer_widths)
    out["loss_terms"] = [dataclasses.asdict(t) for t in cfg.loss_terms]
    out["lr_milestones"] = [list(m) for m in cfg.lr_milestones]
    out["recall_ks"] = list(cfg.recall_ks)
    return out


def config_from_dict(raw: dict) -> DistillConfig:
    """Build a config from parsed JSON, rejecting unknown keys everywhere."""
    data = dict(_checked(raw, DistillConfig, "config"))
    data["student"] = MlpSpec(**_checked(data["student"], MlpSpec, "config.student"))
    data["optimizer"] = OptimizerSpec(
        **_checked(data["optimizer"], OptimizerSpec, "config.optimizer"))
    data["batch"] = BatchSpec(**_checked(data["batch"], BatchSpec, "config.batch"))
    data["loss_terms"] = tuple(
        LossTerm(**_checked(t, LossTerm, "config.loss_terms[]"))
        for t in data["loss_terms"])
    return DistillConfig(**data)


def save_config(path, cfg: DistillConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")


def load_config(path) -> DistillConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return config_from_dict(raw)


def _checked(raw: dict, cls, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be an object, got {type(raw).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return raw


# ---------------------------------------------------------------------------
# Objective assembly


def combined_objective(cfg: DistillConfig,
                       teacher_outputs: ForwardResult | None,
                       student_outputs: ForwardResult,
                       labels,
                       projection: ProjectionParams | None = None,
                       triplets: TripletIndexBatch | None = None,
                       ) -> tuple[Node, dict]:
    """Weighted sum of the active loss terms; returns (node, term values).

    Zero-weight terms are skipped entirely. Terms that need a teacher raise
    ConfigError when ``teacher_outputs`` is missing.
    """
    total = None
    values = {}
    for term in cfg.active_terms():
        if term.kind in TEACHER_KINDS and teacher_outputs is None:
            raise ConfigError(f"loss term {term.kind!r} requires a teacher")
        node = _loss_node(cfg, term.kind, teacher_outputs, student_outputs,
                          labels, projection, triplets)
        values[term.kind] = float(node.value[0, 0])
        weighted = ad.scale(node, term.weight)
        total = weighted if total is None else ad.add(total, weighted)
    return total, values


def _loss_node(cfg, kind, teacher, student, labels, projection, triplets):
    if kind == "rkd-d":
        return rkd_distance_loss(teacher.embeddings, student.embeddings)
    if kind == "rkd-a":
        return rkd_angle_loss(teacher.embeddings, student.embeddings)
    if kind == "hkd":
        if teacher.logits is None or student.logits is None:
            raise ConfigError("hkd needs classifier logits on both models")
        return hkd_loss(teacher.logits, student.logits,
                        cfg.hkd_temperature, cfg.hkd_tau_squared)
    if kind == "fitnet":
        if projection is None:
            raise ConfigError("fitnet term needs projection parameters")
        return ikd_l2_loss(teacher.embeddings, student.embeddings, projection)
    if kind == "triplet":
        if triplets is None:
            raise ConfigError("triplet term needs mined triplet indices")
        return triplet_loss(student.embeddings, triplets, cfg.triplet_margin)
    if kind == "xent":
        if student.logits is None:
            raise ConfigError("xent needs classifier logits on the student")
        return cross_entropy_loss(student.logits, labels)
    raise ConfigError(f"unknown loss kind {kind!r}")


# ---------------------------------------------------------------------------
# Training


def train(cfg: DistillConfig, features, labels,
          teacher: tuple[MlpSpec, Parameters] | None = None,
          ) -> tuple[Parameters, list[MetricsRecord]]:
    """Train a student (or teacher, when no KD terms) per the config.

    Returns the trained parameters and one MetricsRecord per epoch. The
    teacher, when given, is only ever read. A non-finite loss term aborts
    with a TrainingError naming the term and epoch.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if cfg.needs_teacher() and teacher is None:
        kinds = [t.kind for t in cfg.active_terms() if t.kind in TEACHER_KINDS]
        raise ConfigError(f"loss terms {kinds} require a teacher")

    params = init_params(cfg.student, cfg.seed)
    projection = None
    if any(t.kind == "fitnet" for t in cfg.active_terms()):
        if teacher is None:
            raise ConfigError("fitnet term requires a teacher")
        projection = _init_projection(teacher[0].embedding_dim,
                                      cfg.student.embedding_dim,
                                      _derive_seed(cfg.seed, 1))

    optimizer = cfg.optimizer.build()
    milestones = dict(cfg.lr_milestones)
    needs_triplets = any(t.kind == "triplet" for t in cfg.active_terms())

    records = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        if epoch in milestones:
            optimizer.lr *= milestones[epoch]
        batches = class_balanced_batches(labels, cfg.batch.batch_size,
                                         cfg.batch.k_per_class,
                                         seed=[cfg.seed, epoch])
        sums: dict[str, float] = {}
        for b, idx in enumerate(batches):
            xb, yb = features[idx], labels[idx]
            teacher_out = forward(teacher[1], teacher[0], xb) if teacher else None

            tape = Tape()
            leaves = params_to_leaves(tape, params)
            proj_leaves = None
            if projection is not None:
                proj_leaves = ProjectionParams(tape.leaf(projection.weight),
                                               tape.leaf(projection.bias))
            student_out = forward(leaves, cfg.student, xb, tape=tape)

            triplets = None
            if needs_triplets:
                triplets = distance_weighted_triplets(
                    student_out.embeddings.value, yb,
                    seed=[cfg.seed, epoch, b],
                    cutoff=cfg.sampler_cutoff, uniform=cfg.sampler_uniform)

            total, values = combined_objective(
                cfg, teacher_out, student_out, yb,
                projection=proj_leaves, triplets=triplets)
            for kind, value in values.items():
                if not np.isfinite(value):
                    raise TrainingError(
                        f"loss term {kind!r} became non-finite ({value}) at "
                        f"epoch {epoch}, batch {b}")
                sums[kind] = sums.get(kind, 0.0) + value
            sums["total"] = sums.get("total", 0.0) + float(total.value[0, 0])

            tape.backward(total)
            step_params = leaves.arrays()
            if proj_leaves is not None:
                step_params += [proj_leaves.weight, proj_leaves.bias]
            optimizer.step([n.value for n in step_params],
                           [n.gradient() for n in step_params])

        n_batches = max(len(batches), 1)
        losses = {k: v / n_batches for k, v in sums.items()}
        recall = {}
        if cfg.recall_ks:
            recall = recall_at_k(embed(params, cfg.student, features), labels,
                                 cfg.recall_ks)
        records.append(MetricsRecord(epoch=epoch, losses=losses, recall=recall,
                                     wall_seconds=time.perf_counter() - start))
    return params, records


def self_distill(cfg: DistillConfig, features, labels,
                 teacher_spec: MlpSpec, teacher_params: Parameters,
                 generations: int, out_dir,
                 recall_ks: tuple[int, ...] = (1,),
                 ) -> list[GenerationRecord]:
    """Chain distillation runs, each taught by the previous generation.

    The student architecture must equal the teacher's (output normalization
    may differ). Parameter snapshots land in ``out_dir`` as gen<i>.rkdp and
    generation n's teacher is generation n-1's student.
    """
    if generations < 1:
        raise ConfigError(f"generations must be >= 1, got {generations}")
    if not cfg.student.same_architecture(teacher_spec):
        raise ConfigError(
            "self-distillation requires student and teacher to share an "
            f"architecture: {cfg.student.layer_widths} vs {teacher_spec.layer_widths}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    prev_spec, prev_params = teacher_spec, teacher_params
    prev_path = str(out_dir / "gen0.rkdp")
    save_params(prev_path, prev_spec, prev_params)

    records = []
    for gen in range(1, generations + 1):
        gen_cfg = dataclasses.replace(cfg, seed=_derive_seed(cfg.seed, gen))
        params, _ = train(gen_cfg, features, labels,
                          teacher=(prev_spec, prev_params))
        path = str(out_dir / f"gen{gen}.rkdp")
        save_params(path, cfg.student, params)
        recall = recall_at_k(embed(params, cfg.student, features), labels,
                             recall_ks)
        records.append(GenerationRecord(generation=gen, teacher_path=prev_path,
                                        student_path=path, final_recall=recall))
        prev_spec, prev_params, prev_path = cfg.student, params, path
    return records


def _init_projection(teacher_dim: int, student_dim: int, seed) -> ProjectionParams:
    rng = np.random.default_rng(seed)
    weight = rng.normal(0.0, np.sqrt(2.0 / student_dim), (teacher_dim, student_dim))
    return ProjectionParams(weight, np.zeros((1, teacher_dim)))


def _derive_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])
