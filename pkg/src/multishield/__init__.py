"""Desk-scale testbed for agreement-based rejection defenses.

A unimodal classifier proposes a label; a zero-shot dual encoder either
agrees (the label is accepted) or disagrees (the input is rejected as class
K+1). The package bundles the models, the decision rule, gradient evasion
attacks including a defense-aware one, abstention-aware metrics, and a CLI.
"""

__version__ = "0.1.0"

from .attacks import AttackConfig, AttackResult, adaptive_attack, dl_loss, fgsm, pgd, project
from .autodiff import Tape, cosine_similarity, input_gradient, softmax_cross_entropy
from .classifier import train_adversarial, train_standard
from .data import (Dataset, PromptSet, build_prompts, load_dataset,
                   load_embeddings, make_blobs, save_dataset,
                   save_embeddings, split_per_class)
from .evaluation import (EvalOutcome, ScenarioMetrics, clean_accuracy,
                         counts_from, epsilon_sweep, rejection_ratio,
                         robust_accuracy, run_evaluation)
from .mlp import MLPClassifier
from .multimodal import DualEncoder, FrozenEncoder, train_dual_encoder
from .rng import Rng, sample_rng
from .shield import Decision, MultiShield, decision_from, rejection_score

__all__ = [
    "AttackConfig", "AttackResult", "Dataset", "Decision", "DualEncoder",
    "EvalOutcome", "FrozenEncoder", "MLPClassifier", "MultiShield",
    "PromptSet", "Rng", "ScenarioMetrics", "Tape", "adaptive_attack",
    "build_prompts", "clean_accuracy", "cosine_similarity", "counts_from",
    "decision_from", "dl_loss", "epsilon_sweep", "fgsm", "input_gradient",
    "load_dataset", "load_embeddings", "make_blobs", "pgd", "project",
    "rejection_ratio", "rejection_score", "robust_accuracy",
    "run_evaluation", "sample_rng", "save_dataset", "save_embeddings",
    "softmax_cross_entropy", "split_per_class", "train_adversarial",
    "train_dual_encoder", "train_standard", "__version__",
]
