"""Hierarchical multi-label classification over label taxonomies.

Two-stage training (conditional, then unconditional fine-tuning), a
numerically stable chain-rule cross entropy, controlled label deletion for
incomplete-label studies, and ranking metrics with bootstrap intervals.
"""

# public API re-exports
from .data import (Dataset, DeletionConfig, LabelState, delete_labels, read_dataset,
                   synth_generate, validate_labels, write_dataset)
from .inference import ProbVector, predict
from .losses import (BRScope, GammaMode, LossResult, br_loss, gamma, grad_check, hlcp_loss,
                     hlup_naive, hlup_rescale, hlup_stable, stable_bce, unconditional_prob)
from .metrics import (MetricReport, auc, average_precision, bootstrap_ci, conditional_report,
                      full_report)
from .model import (LossKind, MlpModel, TrainConfig, forward, init_model, train,
                    train_two_stage)
from .taxonomy import Taxonomy, load_taxonomy, parse_taxonomy

__version__ = "0.1.0"
