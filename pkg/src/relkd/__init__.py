"""Relational knowledge distillation at desk scale.

A self-contained stack: a reverse-mode autodiff engine over dense float64
matrices, distance- and angle-wise relational distillation losses plus the
conventional baselines, MLP teacher/student models, deterministic training,
synthetic data, and retrieval evaluation.
"""

from .autodiff import EPS, Node, Tape, finite_difference_check
from .baselines import (ProjectionParams, TripletIndexBatch,
                        cross_entropy_loss, hkd_loss, ikd_l2_loss,
                        triplet_loss)
from .data import (EmbeddingBatch, SyntheticSpec, gen_synthetic,
                   read_embeddings, write_embeddings)
from .errors import (ConfigError, DimensionError, DomainError, FormatError,
                     RelkdError, SamplingError, TapeStateError, TrainingError)
from .evaluate import (classification_accuracy, recall_at_k,
                       relational_divergence_report)
from .models import (ForwardResult, MlpSpec, Parameters, embed, forward,
                     init_params, load_params, save_params)
from .optim import SGD, Adam, OptimizerSpec
from .relational import (angle_potentials, distance_potentials,
                         enumerate_angle_triplets, enumerate_pairs, huber,
                         rkd_angle_loss, rkd_da_loss, rkd_distance_loss)
from .sampling import class_balanced_batches, distance_weighted_triplets
from .training import (BatchSpec, DistillConfig, GenerationRecord, LossTerm,
                       MetricsRecord, combined_objective, config_from_dict,
                       config_to_dict, load_config, save_config, self_distill,
                       train)

__version__ = "0.1.0"
