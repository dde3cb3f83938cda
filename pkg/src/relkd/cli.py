"""Command-line surface tying generation, training, and evaluation together.

Exit codes: 0 on success, 1 on configuration/usage errors, 2 on data or
file-format errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import SyntheticSpec, gen_synthetic, read_embeddings, write_embeddings
from .errors import (ConfigError, DimensionError, DomainError, FormatError,
                     RelkdError, SamplingError, TrainingError)
from .evaluate import recall_at_k, relational_divergence_report
from .models import MlpSpec, embed, load_params, save_params
from .optim import OptimizerSpec
from .training import (BatchSpec, DistillConfig, LossTerm, self_distill,
                       train)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting with code 2."""

    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relkd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic cluster dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--spread", type=float, required=True)
    p.add_argument("--separation", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train a model from scratch")
    _add_data_flags(p)
    p.add_argument("--arch", required=True, help="comma-separated layer widths")
    p.add_argument("--loss", choices=("triplet", "xent"), default="triplet")
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--l2norm", action="store_true",
                   help="L2-normalize the output embedding")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_teacher)

    p = sub.add_parser("distill", help="train a student guided by a teacher")
    p.add_argument("--teacher", required=True, help="teacher .rkdp file")
    _add_data_flags(p)
    p.add_argument("--student-arch", required=True)
    p.add_argument("--losses", required=True,
                   help="comma-separated kind=weight, e.g. rkd-d=1,rkd-a=2")
    p.add_argument("--no-l2norm", action="store_true",
                   help="train the student without output L2 normalization")
    p.add_argument("--hkd-temperature", type=float, default=4.0)
    p.add_argument("--triplet-margin", type=float, default=0.2)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("self-distill",
                       help="distill a model into its own architecture over generations")
    p.add_argument("--teacher", required=True)
    _add_data_flags(p)
    p.add_argument("--generations", type=int, required=True)
    p.add_argument("--losses", default="rkd-d=1,rkd-a=2")
    _add_train_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_self_distill)

    p = sub.add_parser("eval", help="recall@K of a model on a dataset")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--recall", default="1", help="comma-separated K values")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("embed", help="write a model's embeddings of a dataset")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("compare", help="relational divergence of two embedding files")
    p.add_argument("--a", required=True, help="reference embedding file")
    p.add_argument("--b", required=True)
    p.set_defaults(func=_cmd_compare)
    return parser


def _add_data_flags(p):
    p.add_argument("--data", required=True, help="RKEB dataset file")
    p.add_argument("--labels", default=None,
                   help="optional RKEB file whose labels override --data's")


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--k-per-class", type=int, default=4)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--metrics", default=None, help="write JSONL metrics here")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(parser.format_usage(), file=sys.stderr, end="")
        print(f"relkd: error: {exc}", file=sys.stderr)
        return 1
    try:
        args.func(args)
        return 0
    except (ConfigError, SamplingError, TrainingError) as exc:
        print(f"relkd: configuration error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, DomainError, DimensionError, OSError) as exc:
        print(f"relkd: data error: {exc}", file=sys.stderr)
        return 2
    except RelkdError as exc:
        print(f"relkd: error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


# ---------------------------------------------------------------------------
# Subcommand bodies


def _cmd_gen_data(args):
    spec = SyntheticSpec(classes=args.classes, per_class=args.per_class,
                         ambient_dim=args.dim, cluster_spread=args.spread,
                         inter_class_separation=args.separation, seed=args.seed)
    batch = gen_synthetic(spec)
    write_embeddings(args.out, batch.embeddings, batch.labels)
    print(f"wrote {len(batch)} x {batch.embeddings.shape[1]} points "
          f"({args.classes} classes) to {args.out}")


def _cmd_train_teacher(args):
    features, labels = _load_dataset(args)
    widths = _parse_arch(args.arch)
    classes = None
    if args.loss == "xent":
        classes = int(len(np.unique(labels)))
    spec = MlpSpec(widths, l2_normalize_output=args.l2norm,
                   classifier_classes=classes)
    cfg = DistillConfig(
        student=spec,
        loss_terms=(LossTerm(args.loss, 1.0),),
        optimizer=_optimizer_spec(args),
        epochs=args.epochs,
        batch=BatchSpec(args.batch_size, args.k_per_class),
        seed=args.seed,
        triplet_margin=args.margin,
    )
    params, records = train(cfg, features, labels)
    save_params(args.out, spec, params)
    _write_metrics(args.metrics, records)
    recall = recall_at_k(embed(params, spec, features), labels, (1,))
    print(f"saved model to {args.out}; final loss "
          f"{records[-1].losses['total']:.6f}, recall@1 = {recall[1]:.4f}")


def _cmd_distill(args):
    features, labels = _load_dataset(args)
    teacher_spec, teacher_params = load_params(args.teacher)
    widths = _parse_arch(args.student_arch)
    terms = _parse_losses(args.losses)
    kinds = {t.kind for t in terms}
    classes = None
    if kinds & {"hkd", "xent"}:
        classes = teacher_spec.classifier_classes \
            or int(len(np.unique(labels)))
    spec = MlpSpec(widths, l2_normalize_output=not args.no_l2norm,
                   classifier_classes=classes)
    cfg = DistillConfig(
        student=spec,
        loss_terms=terms,
        optimizer=_optimizer_spec(args),
        epochs=args.epochs,
        batch=BatchSpec(args.batch_size, args.k_per_class),
        seed=args.seed,
        teacher_path=args.teacher,
        hkd_temperature=args.hkd_temperature,
        triplet_margin=args.triplet_margin,
    )
    params, records = train(cfg, features, labels,
                            teacher=(teacher_spec, teacher_params))
    save_params(args.out, spec, params)
    _write_metrics(args.metrics, records)
    recall = recall_at_k(embed(params, spec, features), labels, (1,))
    print(f"saved student to {args.out}; final loss "
          f"{records[-1].losses['total']:.6f}, recall@1 = {recall[1]:.4f}")


def _cmd_self_distill(args):
    features, labels = _load_dataset(args)
    teacher_spec, teacher_params = load_params(args.teacher)
    # Per the self-distillation protocol, students drop the output
    # normalization and reuse the teacher's architecture.
    spec = MlpSpec(teacher_spec.layer_widths, teacher_spec.activation,
                   l2_normalize_output=False,
                   classifier_classes=teacher_spec.classifier_classes)
    cfg = DistillConfig(
        student=spec,
        loss_terms=_parse_losses(args.losses),
        optimizer=_optimizer_spec(args),
        epochs=args.epochs,
        batch=BatchSpec(args.batch_size, args.k_per_class),
        seed=args.seed,
        teacher_path=args.teacher,
    )
    records = self_distill(cfg, features, labels, teacher_spec, teacher_params,
                           generations=args.generations, out_dir=args.out_dir)
    teacher_recall = recall_at_k(
        embed(teacher_params, teacher_spec, features), labels, (1,))
    print(json.dumps({"generation": 0, "recall": {"1": teacher_recall[1]}}))
    for rec in records:
        print(json.dumps({
            "generation": rec.generation,
            "teacher": rec.teacher_path,
            "student": rec.student_path,
            "recall": {str(k): v for k, v in rec.final_recall.items()},
        }))


def _cmd_eval(args):
    features, labels = _load_dataset(args)
    spec, params = load_params(args.model)
    ks = _parse_ints(args.recall, "--recall")
    recall = recall_at_k(embed(params, spec, features), labels, ks)
    for k in ks:
        print(f"recall@{k} = {recall[k]:.4f}")


def _cmd_embed(args):
    features, labels = _load_dataset(args)
    spec, params = load_params(args.model)
    write_embeddings(args.out, embed(params, spec, features), labels)
    print(f"wrote embeddings to {args.out}")


def _cmd_compare(args):
    a = read_embeddings(args.a)
    b = read_embeddings(args.b)
    report = relational_divergence_report(a.embeddings, b.embeddings)
    print(json.dumps(report.to_dict(), indent=2))


# ---------------------------------------------------------------------------
# Helpers


def _load_dataset(args):
    batch = read_embeddings(args.data)
    labels = batch.labels
    if args.labels:
        labels = read_embeddings(args.labels).labels
        if len(labels) != len(batch):
            raise DomainError(
                f"label file has {len(labels)} entries, data has {len(batch)}")
    return batch.embeddings, labels


def _parse_arch(text) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad architecture {text!r}: {exc}") from exc
    return widths


def _parse_losses(text) -> tuple[LossTerm, ...]:
    terms = []
    for piece in text.split(","):
        if "=" not in piece:
            raise ConfigError(
                f"bad loss spec {piece!r}; expected kind=weight")
        kind, _, raw = piece.partition("=")
        try:
            weight = float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad loss weight in {piece!r}") from exc
        terms.append(LossTerm(kind.strip(), weight))
    return tuple(terms)


def _parse_ints(text, what) -> list[int]:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad {what} value {text!r}") from exc


def _optimizer_spec(args) -> OptimizerSpec:
    return OptimizerSpec(kind=args.optimizer, lr=args.lr)


def _write_metrics(path, records) -> None:
    if not path:
        return
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json_line() + "\n")


if __name__ == "__main__":
    entrypoint()
