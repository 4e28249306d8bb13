"""Run configuration: INI-style sections mirroring ``SearchRunConfig``.

Every section maps onto a dataclass below; unknown sections or keys are
rejected so typos fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from typing import Optional, Tuple

from ..bohb import BohbConfig, SearchSpace
from ..diffengine import TrainConfig
from ..graphgen import FAMILIES, GraphGenSpec
from ..netbuilder import BudgetConstraint


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    master_seed: int = 0
    iterations: int = 1
    workers: int = 1
    clock: str = "cost"          # "cost" (deterministic) or "measured"


@dataclass
class DatasetSection:
    kind: str = "spirals"
    n_samples: int = 600
    n_classes: int = 2
    dims: int = 2
    image_side: Optional[int] = None
    channels: int = 1
    noise: float = 0.05
    seed: Optional[int] = None   # None -> master seed


@dataclass
class SplitSection:
    train: float = 0.8
    val: float = 0.2


@dataclass
class BohbSection:
    eta: int = 2
    b_min: float = 2
    b_max: float = 8
    random_fraction: float = 1 / 3
    good_fraction: float = 0.15
    min_points: Optional[int] = None
    candidates_per_proposal: int = 64


@dataclass
class SearchSpaceSection:
    n_min: int = 1
    n_max: int = 8
    er_p_min: float = 0.0
    er_p_max: float = 1.0
    ws_beta_min: float = 0.0
    ws_beta_max: float = 1.0
    families: Tuple[str, ...] = FAMILIES
    op_cap: int = 64


@dataclass
class KdSection:
    temperature_min: float = 1.0
    temperature_max: float = 10.0
    weight_min: float = 0.0
    weight_max: float = 1.0
    tau_squared_scaling: bool = False


@dataclass
class StudentSection:
    target_params: int = 2000
    tolerance: float = 0.25


@dataclass
class TrainingSection:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32


@dataclass
class TeacherSection:
    family: str = "ER"
    n: int = 4
    er_p: float = 0.5
    ws_k: int = 2
    ws_beta: float = 0.25
    ba_m: int = 2
    param_multiplier: float = 10.0
    epochs: int = 40
    lr: float = 0.05
    min_val_accuracy: float = 0.8
    logits: Optional[str] = None
    out_dir: str = "teacher"


@dataclass
class RetrainSection:
    samples: int = 8
    budget: Optional[float] = None   # None -> 5 * b_max


@dataclass
class AblationSection:
    temperatures: Tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    weights: Tuple[float, ...] = (0.0, 0.1, 0.2, 0.5, 0.75, 1.0)
    budget: float = 8
    seed: int = 0
    out: Optional[str] = None


_SECTIONS = {
    "run": RunSection,
    "dataset": DatasetSection,
    "split": SplitSection,
    "bohb": BohbSection,
    "search_space": SearchSpaceSection,
    "kd": KdSection,
    "student": StudentSection,
    "training": TrainingSection,
    "teacher": TeacherSection,
    "retrain": RetrainSection,
    "ablation": AblationSection,
}


@dataclass
class SearchRunConfig:
    run: RunSection = field(default_factory=RunSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    split: SplitSection = field(default_factory=SplitSection)
    bohb: BohbSection = field(default_factory=BohbSection)
    search_space: SearchSpaceSection = field(default_factory=SearchSpaceSection)
    kd: KdSection = field(default_factory=KdSection)
    student: StudentSection = field(default_factory=StudentSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    retrain: RetrainSection = field(default_factory=RetrainSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    def validate(self) -> None:
        if abs(self.split.train + self.split.val - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        if self.run.clock not in ("cost", "measured"):
            raise ConfigError(f"clock must be 'cost' or 'measured', got {self.run.clock!r}")
        if self.run.iterations < 1 or self.run.workers < 1:
            raise ConfigError("iterations and workers must be positive")
        if self.retrain.samples < 1:
            raise ConfigError("retrain samples must be at least 1")
        if self.teacher.param_multiplier <= 1.0:
            raise ConfigError("the teacher budget must exceed the student cap")
        try:
            self.bohb_config()
            self.search_space_obj()
            self.budget_constraint()
            self.teacher_level().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- typed views --------------------------------------------------------

    def bohb_config(self) -> BohbConfig:
        return BohbConfig(**dataclasses.asdict(self.bohb))

    def search_space_obj(self) -> SearchSpace:
        s, k = self.search_space, self.kd
        return SearchSpace(
            n_range=(s.n_min, s.n_max),
            er_p=(s.er_p_min, s.er_p_max),
            ws_beta=(s.ws_beta_min, s.ws_beta_max),
            temperature=(k.temperature_min, k.temperature_max),
            weight=(k.weight_min, k.weight_max),
            families=tuple(s.families),
            op_cap=s.op_cap,
        )

    def budget_constraint(self) -> BudgetConstraint:
        return BudgetConstraint(self.student.target_params, self.student.tolerance)

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(lr=t.lr, momentum=t.momentum, batch_size=t.batch_size)

    def teacher_level(self) -> GraphGenSpec:
        t = self.teacher
        return GraphGenSpec(t.family, t.n, t.er_p, t.ws_k, t.ws_beta, t.ba_m)

    @property
    def dataset_seed(self) -> int:
        return self.run.master_seed if self.dataset.seed is None else self.dataset.seed

    @property
    def retrain_budget(self) -> float:
        return self.retrain.budget if self.retrain.budget is not None else 5 * self.bohb.b_max

    # -- text form ----------------------------------------------------------

    def dumps(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in _SECTIONS:
            sec = getattr(self, name)
            cp[name] = {}
            for f in dataclasses.fields(sec):
                value = getattr(sec, f.name)
                if value is None:
                    continue
                if isinstance(value, tuple):
                    value = ", ".join(str(v) for v in value)
                cp[name][f.name] = str(value)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _convert(raw: str, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if raw.strip().lower() in ("", "none"):
            return None
        return _convert(raw, next(a for a in args if a is not type(None)), where)
    if origin in (tuple, Tuple):
        return tuple(_convert(p.strip(), args[0], where) for p in raw.split(",") if p.strip())
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None


def loads(text: str) -> SearchRunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from exc
    cfg = SearchRunConfig()
    for name in cp.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = _SECTIONS[name]
        hints = typing.get_type_hints(cls)
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in cp[name].items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            values[key] = _convert(raw, hints[key], f"[{name}] {key}")
        setattr(cfg, name, dataclasses.replace(getattr(cfg, name), **values))
    cfg.validate()
    return cfg


def load(path) -> SearchRunConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
