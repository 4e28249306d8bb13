"""End-to-end driver: data, teacher, search, retrain, ablation and analysis."""

from .analysis import analyze, rank_correlation_report, spearman
from .config import ConfigError, SearchRunConfig, load, loads
from .data import Dataset, make_synthetic
from .search import ablation_grid, f_kd, prepare, retrain, run_search
from .teacher import TeacherLogits, read_logits, train_teacher, write_logits

__all__ = [
    "ConfigError", "Dataset", "SearchRunConfig", "TeacherLogits", "ablation_grid", "analyze",
    "f_kd", "load", "loads", "make_synthetic", "prepare", "rank_correlation_report",
    "read_logits", "retrain", "run_search", "spearman", "train_teacher", "write_logits",
]
