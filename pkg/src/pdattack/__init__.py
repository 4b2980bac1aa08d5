"""Minimal-norm adversarial attacks by primal-dual (proximal) gradient descent.

The attacks look for the smallest perturbation ``r`` (in a chosen norm) that
flips the prediction of a classifier at ``x`` while keeping ``x + r`` inside
the unit box.  Two engines are provided: :class:`PDGD` for the l2 norm and
:class:`PDPGD`, which handles non-smooth norms through proximal operators
(linf, l2, l1, l0, group-l0, l1/2 and l2/3).
"""

__version__ = "0.1.0"

from ._validation import ConfigError, LabelError, ShapeError
from .attack import (PDGD, PDPGD, AttackConfig, AttackOutcome, AttackTrace, DualState,
                     attack_with_restarts, dual_update, pdgd_attack, pdpgd_attack, random_init,
                     schedule_lr)
from .baseline import PGD, PgdConfig, pgd_attack, pgd_minimal_norm
from .datasets import blobs, load_dataset, load_idx, moons, read_idx, save_dataset
from .evaluation import (ComparisonSummary, EmptySelectionError, RobustnessReport, average_norm,
                         comparison_summary, robust_accuracy)
from .models import (LinearClassifier, MLPClassifier, load_model, save_model, train_classifier)
from .prox import (GroupPartition, NormKind, NormTag, norm_value, project_box, project_l1_ball,
                   project_simplex, prox)

__all__ = [
    "AttackConfig", "AttackOutcome", "AttackTrace", "ComparisonSummary", "ConfigError",
    "DualState", "EmptySelectionError", "GroupPartition", "LabelError", "LinearClassifier",
    "MLPClassifier", "NormKind", "NormTag", "PDGD", "PDPGD", "PGD", "PgdConfig",
    "RobustnessReport", "ShapeError", "attack_with_restarts", "average_norm", "blobs",
    "comparison_summary", "dual_update", "load_dataset", "load_idx", "load_model", "moons",
    "norm_value", "pdgd_attack", "pdpgd_attack", "pgd_attack", "pgd_minimal_norm",
    "project_box", "project_l1_ball", "project_simplex", "prox", "random_init", "read_idx",
    "robust_accuracy", "save_dataset", "save_model", "schedule_lr", "train_classifier",
]
