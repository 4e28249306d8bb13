"""Desk-scale teacher: a fixed large hierarchical graph trained with plain CE."""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..diffengine import KdLossConfig, TrainConfig, train
from ..graphgen import ArchGraph, GeneratorHyperparams, GraphGenSpec, assemble
from ..netbuilder import BudgetConstraint, Model, save_checkpoint, scale_to_budget
from .data import Dataset

logger = logging.getLogger(__name__)

LOGITS_MAGIC = b"AKDL"


class TeacherQualityError(RuntimeError):
    pass


@dataclass
class TeacherLogits:
    """Teacher outputs for every dataset sample, stored as float32."""

    logits: np.ndarray
    dataset_hash: bytes

    def __post_init__(self):
        self.logits = np.ascontiguousarray(self.logits, dtype=np.float32)
        if self.logits.ndim != 2:
            raise ValueError("teacher logits must be a 2-D matrix")
        if not np.isfinite(self.logits).all():
            raise ValueError("teacher logits contain non-finite values")
        if len(self.dataset_hash) != 32:
            raise ValueError("dataset hash must be 32 bytes")

    @property
    def n_samples(self) -> int:
        return self.logits.shape[0]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    def rows(self, idx: np.ndarray) -> np.ndarray:
        return self.logits[idx].astype(np.float64)


def write_logits(tl: TeacherLogits, path) -> None:
    with open(path, "wb") as fh:
        fh.write(LOGITS_MAGIC)
        fh.write(struct.pack("<II", tl.n_samples, tl.n_classes))
        fh.write(tl.logits.astype("<f4").tobytes())
        fh.write(tl.dataset_hash)


def read_logits(path) -> TeacherLogits:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != LOGITS_MAGIC:
        raise ValueError(f"{path}: not an AKDL logits file")
    n, k = struct.unpack_from("<II", buf, 4)
    expected = 12 + 4 * n * k + 32
    if len(buf) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(buf)}")
    logits = np.frombuffer(buf, dtype="<f4", count=n * k, offset=12).reshape(n, k)
    return TeacherLogits(logits.astype(np.float32), buf[-32:])


def teacher_graph(level: GraphGenSpec, seed: int) -> ArchGraph:
    theta = GeneratorHyperparams(level, level, level)
    return assemble(theta, np.random.default_rng(np.random.SeedSequence([seed, 11])),
                    op_cap=theta.op_units)


def train_teacher(dataset: Dataset, train_idx: np.ndarray, val_idx: np.ndarray,
                  level: GraphGenSpec, target_params: int, epochs: int, seed: int,
                  tcfg: Optional[TrainConfig] = None, min_val_accuracy: float = 0.8,
                  out_dir=None) -> Tuple[Model, TeacherLogits, float]:
    """Train the teacher on the train split and cache its logits on all samples.

    Returns (model, logits, validation accuracy). Raises TeacherQualityError
    when validation accuracy misses ``min_val_accuracy``.
    """
    graph = teacher_graph(level, seed)
    ss = np.random.SeedSequence([seed, 13]).spawn(2)
    model = scale_to_budget(graph, dataset.mode, dataset.in_shape,
                            BudgetConstraint(int(target_params)), dataset.num_classes,
                            np.random.default_rng(ss[0]))
    train(model, dataset.inputs[train_idx], dataset.labels[train_idx], None,
          KdLossConfig(1.0, 0.0), epochs, np.random.default_rng(ss[1]), tcfg)
    logits = TeacherLogits(model.predict(dataset.inputs), dataset.digest(train_idx, val_idx))
    acc = float((logits.logits[val_idx].argmax(axis=1) == dataset.labels[val_idx]).mean())
    logger.info("teacher: %d units, width %d, val accuracy %.4f",
                graph.num_units, model.base_width, acc)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(model, os.path.join(out_dir, "teacher.akdm"))
        write_logits(logits, os.path.join(out_dir, "teacher.akdl"))
    if acc < min_val_accuracy:
        raise TeacherQualityError(
            f"teacher validation accuracy {acc:.3f} is below the floor {min_val_accuracy}"
        )
    return model, logits, acc
