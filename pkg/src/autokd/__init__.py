"""Generator-level architecture search with knowledge distillation.

Submodules:
    graphgen    random graph families, DAG conversion, hierarchical assembly
    netbuilder  materialize an ArchGraph as a trainable model under a parameter cap
    diffengine  small reverse-mode autodiff engine, KD loss, SGD training
    bohb        Hyperband brackets and the KDE-based configuration sampler
    harness     datasets, teacher, search/retrain phases, analysis, CLI
"""

from .bohb import BohbConfig, SearchSpace, TrialRecord, compute_brackets, run_bohb
from .diffengine import KdLossConfig, cross_entropy, kd_loss, kl_div, softmax_t
from .graphgen import ArchGraph, GeneratorHyperparams, GraphGenSpec, assemble, to_dag
from .netbuilder import BudgetConstraint, materialize, scale_to_budget

__version__ = "0.1.0"

__all__ = [
    "ArchGraph", "BohbConfig", "BudgetConstraint", "GeneratorHyperparams", "GraphGenSpec",
    "KdLossConfig", "SearchSpace", "TrialRecord", "assemble", "compute_brackets",
    "cross_entropy", "kd_loss", "kl_div", "materialize", "run_bohb", "scale_to_budget",
    "softmax_t", "to_dag",
]
