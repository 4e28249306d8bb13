"""Hyperband brackets, Successive Halving, and the KDE configuration sampler.

The search space is encoded into a unit box: continuous and integer
dimensions map to [0, 1] (integers through a continuous relaxation that is
floored on the way back), categorical dimensions keep their index. The KDE
sampler follows the good/bad density-ratio recipe of BOHB.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .graphgen import DEFAULT_OP_CAP, FAMILIES, GeneratorHyperparams, GraphGenSpec

LEVELS = ("top", "mid", "bottom")
_MIN_N = {"ER": 1, "WS": 3, "BA": 2}


@dataclass(frozen=True)
class BohbConfig:
    eta: int = 2
    b_min: float = 2
    b_max: float = 8
    random_fraction: float = 1 / 3
    good_fraction: float = 0.15
    min_points: Optional[int] = None      # None -> dim(theta) + 1
    candidates_per_proposal: int = 64

    def __post_init__(self):
        if int(self.eta) != self.eta or self.eta < 2:
            raise ValueError(f"eta must be an integer >= 2, got {self.eta}")
        if self.b_min < 1 or self.b_max < self.b_min:
            raise ValueError(f"need 1 <= b_min <= b_max, got {self.b_min}, {self.b_max}")
        if not 0.0 <= self.random_fraction <= 1.0:
            raise ValueError("random_fraction must lie in [0, 1]")
        if not 0.0 < self.good_fraction < 1.0:
            raise ValueError("good_fraction must lie in (0, 1)")
        if self.candidates_per_proposal < 1:
            raise ValueError("candidates_per_proposal must be positive")


# ---------------------------------------------------------------------------
# schedule arithmetic


@dataclass(frozen=True)
class Bracket:
    s: int
    M: int
    b0: float
    rungs: Tuple[Tuple[float, int], ...]   # (budget, configurations evaluated)


def _budget(x: float):
    return int(x) if float(x).is_integer() else float(x)


def compute_smax(cfg: BohbConfig) -> int:
    """floor(log_eta(b_max / b_min)), computed without floating-point logs."""
    s = 0
    while cfg.b_min * cfg.eta ** (s + 1) <= cfg.b_max:
        s += 1
    return s


def compute_brackets(cfg: BohbConfig) -> List[Bracket]:
    s_max = compute_smax(cfg)
    eta = int(cfg.eta)
    out = []
    for s in range(s_max, -1, -1):
        m = -(-(s_max + 1) * eta ** s // (s + 1))
        rungs = []
        count = m
        for j in range(s + 1):
            rungs.append((_budget(cfg.b_max / eta ** (s - j)), count))
            count //= eta
        out.append(Bracket(s, m, rungs[0][0], tuple(rungs)))
    return out


# ---------------------------------------------------------------------------
# trial records


@dataclass
class TrialRecord:
    trial_id: int
    theta: GeneratorHyperparams
    budget: float
    seed: int
    val_accuracy: float
    val_loss: Optional[float]
    wall_seconds: float
    bracket_s: int
    rung: int
    infeasible: bool = False

    def __post_init__(self):
        if not 0.0 <= self.val_accuracy <= 1.0:
            raise ValueError(f"val_accuracy {self.val_accuracy} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps({
            "trial_id": self.trial_id,
            "theta": self.theta.to_dict(),
            "budget": _budget(self.budget),
            "seed": self.seed,
            "val_accuracy": self.val_accuracy,
            "val_loss": self.val_loss,
            "wall_seconds": self.wall_seconds,
            "bracket_s": self.bracket_s,
            "rung": self.rung,
            "infeasible": self.infeasible,
        })

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        return cls(
            trial_id=int(d["trial_id"]),
            theta=GeneratorHyperparams.from_dict(d["theta"]),
            budget=_budget(d["budget"]),
            seed=int(d["seed"]),
            val_accuracy=float(d["val_accuracy"]),
            val_loss=None if d["val_loss"] is None else float(d["val_loss"]),
            wall_seconds=float(d["wall_seconds"]),
            bracket_s=int(d["bracket_s"]),
            rung=int(d["rung"]),
            infeasible=bool(d["infeasible"]),
        )


def rank_survivors(records: Sequence[TrialRecord], k: int) -> List[int]:
    """Indices of the k best records: highest accuracy, then lowest trial_id."""
    order = sorted(range(len(records)), key=lambda i: (-records[i].val_accuracy, records[i].trial_id))
    return order[:max(k, 0)]


def top_k(thetas: Sequence[GeneratorHyperparams], records: Sequence[TrialRecord],
          k: int) -> List[GeneratorHyperparams]:
    if len(thetas) != len(records) or any(t != r.theta for t, r in zip(thetas, records)):
        raise RuntimeError("top_k needs exactly one matching record per configuration")
    return [thetas[i] for i in rank_survivors(records, k)]


# ---------------------------------------------------------------------------
# search space


@dataclass(frozen=True)
class Dim:
    name: str
    kind: str          # "cont", "int" or "cat"
    lo: float = 0.0
    hi: float = 1.0
    choices: Tuple[str, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.choices)


@dataclass(frozen=True)
class SearchSpace:
    """Box bounds of the generator hyperparameters plus the KD knobs."""

    n_range: Tuple[int, int] = (1, 8)
    er_p: Tuple[float, float] = (0.0, 1.0)
    ws_beta: Tuple[float, float] = (0.0, 1.0)
    temperature: Tuple[float, float] = (1.0, 10.0)
    weight: Tuple[float, float] = (0.0, 1.0)
    families: Tuple[str, ...] = FAMILIES
    op_cap: int = DEFAULT_OP_CAP

    def __post_init__(self):
        lo, hi = self.n_range
        if not 1 <= lo <= hi or hi < 3:
            raise ValueError(f"n_range must satisfy 1 <= lo <= hi and hi >= 3, got {self.n_range}")
        if not (1.0 <= self.temperature[0] <= self.temperature[1] <= 10.0):
            raise ValueError(f"temperature bounds must nest in [1, 10], got {self.temperature}")
        if not (0.0 <= self.weight[0] <= self.weight[1] <= 1.0):
            raise ValueError(f"weight bounds must nest in [0, 1], got {self.weight}")
        for b in (self.er_p, self.ws_beta):
            if not 0.0 <= b[0] <= b[1] <= 1.0:
                raise ValueError(f"probability bounds must nest in [0, 1], got {b}")
        if not self.families or any(f not in FAMILIES for f in self.families):
            raise ValueError(f"families must be a non-empty subset of {FAMILIES}")
        smallest = min(_MIN_N[f] for f in self.families)
        if max(smallest, lo) ** 3 > self.op_cap:
            raise ValueError("op_cap is below the smallest architecture in the box")

    @property
    def ws_half_max(self) -> int:
        return (self.n_range[1] - 1) // 2

    def dims(self) -> List[Dim]:
        out = []
        for lvl in LEVELS:
            out += [
                Dim(f"{lvl}.family", "cat", choices=self.families),
                Dim(f"{lvl}.n", "int", *self.n_range),
                Dim(f"{lvl}.er_p", "cont", *self.er_p),
                Dim(f"{lvl}.ws_k_half", "int", 1, self.ws_half_max),
                Dim(f"{lvl}.ws_beta", "cont", *self.ws_beta),
                Dim(f"{lvl}.ba_m", "int", 1, self.n_range[1] - 1),
            ]
        out += [Dim("kd_temperature", "cont", *self.temperature),
                Dim("kd_weight", "cont", *self.weight)]
        return out

    @property
    def dim(self) -> int:
        return len(self.dims())

    # -- encoding -----------------------------------------------------------

    def encode(self, theta: GeneratorHyperparams) -> np.ndarray:
        raw = []
        for spec in theta.levels:
            raw += [self.families.index(spec.family), spec.n, spec.er_p, spec.ws_k // 2,
                    spec.ws_beta, spec.ba_m]
        raw += [theta.kd_temperature, theta.kd_weight]
        vec = np.empty(len(raw))
        for i, (d, v) in enumerate(zip(self.dims(), raw)):
            if d.kind == "cat":
                vec[i] = v
            elif d.kind == "int":
                vec[i] = (v - d.lo + 0.5) / (d.hi - d.lo + 1)
            else:
                vec[i] = 0.5 if d.hi == d.lo else (v - d.lo) / (d.hi - d.lo)
        return vec

    def decode(self, vec: np.ndarray) -> GeneratorHyperparams:
        """Map a unit-box vector back to a valid configuration (see ``repair``)."""
        vals = []
        for d, x in zip(self.dims(), vec):
            if d.kind == "cat":
                vals.append(d.choices[int(round(x))])
            elif d.kind == "int":
                span = int(d.hi - d.lo + 1)
                vals.append(int(d.lo) + min(span - 1, max(0, int(math.floor(x * span)))))
            else:
                vals.append(float(d.lo + min(1.0, max(0.0, x)) * (d.hi - d.lo)))
        specs = []
        for j in range(3):
            fam, n, p, kh, beta, m = vals[6 * j:6 * j + 6]
            specs.append(GraphGenSpec(fam, n, p, 2 * kh, beta, m))
        theta = GeneratorHyperparams(*specs, kd_temperature=vals[-2], kd_weight=vals[-1])
        return self.repair(theta)

    def repair(self, theta: GeneratorHyperparams) -> GeneratorHyperparams:
        """Project a configuration onto the valid set.

        Node counts are clipped to the box and raised to the family minimum
        (3 for WS, 2 for BA); while the op-unit product exceeds the cap the
        largest level shrinks (bottom first on ties). Family parameters are
        then clipped to what the final node count allows.
        """
        lo, hi = self.n_range
        specs = [replace(s, n=min(hi, max(lo, _MIN_N[s.family], s.n))) for s in theta.levels]
        while math.prod(s.n for s in specs) > self.op_cap:
            movable = [j for j in (2, 1, 0) if specs[j].n > max(lo, _MIN_N[specs[j].family])]
            if not movable:
                raise ValueError(f"no configuration of these families fits op_cap={self.op_cap}")
            j = max(movable, key=lambda j: specs[j].n)
            specs[j] = replace(specs[j], n=specs[j].n - 1)
        fixed = []
        for s in specs:
            k_hi = 2 * self.ws_half_max
            m_hi = hi - 1
            if s.family == "WS":
                k_hi = min(k_hi, s.n - 1 - (s.n - 1) % 2)
            if s.family == "BA":
                m_hi = min(m_hi, s.n - 1)
            k = min(k_hi, max(2, s.ws_k - s.ws_k % 2))
            fixed.append(replace(
                s,
                er_p=float(np.clip(s.er_p, *self.er_p)),
                ws_k=int(k),
                ws_beta=float(np.clip(s.ws_beta, *self.ws_beta)),
                ba_m=int(min(m_hi, max(1, s.ba_m))),
            ))
        return GeneratorHyperparams(
            *fixed,
            kd_temperature=float(np.clip(theta.kd_temperature, *self.temperature)),
            kd_weight=float(np.clip(theta.kd_weight, *self.weight)),
        )

    def contains(self, theta: GeneratorHyperparams) -> bool:
        try:
            theta.validate(self.op_cap)
        except ValueError:
            return False
        lo, hi = self.n_range
        return (all(lo <= s.n <= hi and s.family in self.families for s in theta.levels)
                and self.temperature[0] <= theta.kd_temperature <= self.temperature[1]
                and self.weight[0] <= theta.kd_weight <= self.weight[1])

    def sample_uniform(self, rng: np.random.Generator) -> GeneratorHyperparams:
        vec = np.array([rng.integers(d.arity) if d.kind == "cat" else rng.random()
                        for d in self.dims()], dtype=np.float64)
        return self.decode(vec)


# ---------------------------------------------------------------------------
# kernel density model


@dataclass
class KdeModel:
    dims: List[Dim]
    good: np.ndarray
    bad: np.ndarray
    bw_good: np.ndarray
    bw_bad: np.ndarray
    cat_good: Dict[int, np.ndarray] = field(default_factory=dict)
    cat_bad: Dict[int, np.ndarray] = field(default_factory=dict)
    budget: float = 0

    @property
    def cont_idx(self) -> np.ndarray:
        return np.array([i for i, d in enumerate(self.dims) if d.kind != "cat"], dtype=int)

    def _log_density(self, X: np.ndarray, pts: np.ndarray, bw: np.ndarray,
                     tables: Dict[int, np.ndarray]) -> np.ndarray:
        ci = self.cont_idx
        z = (X[:, None, ci] - pts[None, :, ci]) / bw[ci]
        log_k = -0.5 * z ** 2 - np.log(bw[ci]) - 0.5 * np.log(2 * np.pi)
        out = logsumexp(log_k.sum(axis=2), axis=1) - np.log(len(pts))
        for i, probs in tables.items():
            out = out + np.log(probs[X[:, i].astype(int)])
        return out

    def log_good(self, X: np.ndarray) -> np.ndarray:
        return self._log_density(np.atleast_2d(X), self.good, self.bw_good, self.cat_good)

    def log_bad(self, X: np.ndarray) -> np.ndarray:
        return self._log_density(np.atleast_2d(X), self.bad, self.bw_bad, self.cat_bad)


def _bandwidths(pts: np.ndarray, dims: List[Dim]) -> np.ndarray:
    n, d = pts.shape
    sd = pts.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    return np.maximum(sd * n ** (-1.0 / (d + 4)), 1e-3)


def _freq_tables(pts: np.ndarray, dims: List[Dim]) -> Dict[int, np.ndarray]:
    tables = {}
    for i, d in enumerate(dims):
        if d.kind == "cat":
            counts = np.bincount(pts[:, i].astype(int), minlength=d.arity) + 1.0
            tables[i] = counts / counts.sum()
    return tables


def _min_points(cfg: BohbConfig, space: SearchSpace) -> int:
    return cfg.min_points if cfg.min_points is not None else space.dim + 1


def good_set_size(n_records: int, cfg: BohbConfig, space: SearchSpace) -> int:
    return max(math.ceil(cfg.good_fraction * n_records), _min_points(cfg, space))


def kde_fit(records: Sequence[TrialRecord], space: SearchSpace,
            cfg: BohbConfig) -> Optional[KdeModel]:
    """Fit good/bad densities on the highest budget with enough observations.

    Returns None when no budget has more than ``min_points`` records (the bad
    set must not be empty).
    """
    min_points = _min_points(cfg, space)
    by_budget: Dict[float, List[TrialRecord]] = {}
    for r in records:
        by_budget.setdefault(r.budget, []).append(r)
    usable = [b for b, rs in by_budget.items() if len(rs) > min_points]
    if not usable:
        return None
    budget = max(usable)
    rs = by_budget[budget]
    ranked = [rs[i] for i in rank_survivors(rs, len(rs))]
    n_good = min(len(rs) - 1, good_set_size(len(rs), cfg, space))
    dims = space.dims()
    X = np.array([space.encode(r.theta) for r in ranked])
    good, bad = X[:n_good], X[n_good:]
    return KdeModel(dims, good, bad, _bandwidths(good, dims), _bandwidths(bad, dims),
                    _freq_tables(good, dims), _freq_tables(bad, dims), budget)


def kde_propose(model: Optional[KdeModel], space: SearchSpace, cfg: BohbConfig,
                rng: np.random.Generator) -> GeneratorHyperparams:
    """Uniform draw with probability rho (or without a model); otherwise the
    best of ``candidates_per_proposal`` draws from the good density, scored by
    log l(x) - log g(x)."""
    if rng.random() < cfg.random_fraction or model is None:
        return space.sample_uniform(rng)
    n_cand = cfg.candidates_per_proposal
    picks = rng.integers(len(model.good), size=n_cand)
    C = model.good[picks].copy()
    ci = model.cont_idx
    C[:, ci] = np.clip(C[:, ci] + rng.normal(size=(n_cand, ci.size)) * model.bw_good[ci], 0.0, 1.0)
    for i, probs in model.cat_good.items():
        C[:, i] = rng.choice(len(probs), size=n_cand, p=probs)
    score = model.log_good(C) - model.log_bad(C)
    return space.decode(C[int(np.argmax(score))])


# ---------------------------------------------------------------------------
# Hyperband loop with KDE proposals


@dataclass(frozen=True)
class Job:
    trial_id: int
    theta: GeneratorHyperparams
    budget: float
    seed: int
    bracket_s: int
    rung: int


def _derive_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence([master, *key]).generate_state(1)[0])


def run_bohb(cfg: BohbConfig, space: SearchSpace,
             evaluate: Callable[[List[Job]], List[TrialRecord]],
             master_seed: int, iterations: int = 1,
             previous: Iterable[TrialRecord] = (),
             on_rung: Optional[Callable[[List[TrialRecord]], None]] = None) -> List[TrialRecord]:
    """Run ``iterations`` passes over every bracket; return all records by trial_id.

    ``evaluate`` receives a whole rung at once and may run it in parallel.
    Records in ``previous`` whose trial_id comes up again are reused instead
    of re-evaluated, which makes the loop resumable from a partial log.
    """
    done = {r.trial_id: r for r in previous}
    log: List[TrialRecord] = []
    next_id = 0
    for it in range(iterations):
        for br in compute_brackets(cfg):
            model = kde_fit(log, space, cfg)
            configs = []
            for j in range(br.M):
                prng = np.random.default_rng(np.random.SeedSequence([master_seed, it, br.s, j, 1]))
                configs.append((kde_propose(model, space, cfg, prng),
                                _derive_seed(master_seed, it, br.s, j)))
            for r_idx, (budget, count) in enumerate(br.rungs):
                assert len(configs) == count
                jobs = [Job(next_id + i, th, budget, seed, br.s, r_idx)
                        for i, (th, seed) in enumerate(configs)]
                next_id += len(jobs)
                todo = [jb for jb in jobs if jb.trial_id not in done]
                fresh = {r.trial_id: r for r in evaluate(todo)} if todo else {}
                rung_records = []
                for jb in jobs:
                    rec = done.get(jb.trial_id) or fresh[jb.trial_id]
                    if rec.theta != jb.theta or rec.seed != jb.seed or rec.budget != jb.budget:
                        raise RuntimeError(f"log record {jb.trial_id} does not match the schedule")
                    rung_records.append(rec)
                log.extend(rung_records)
                if on_rung is not None:
                    on_rung(rung_records)
                keep = rank_survivors(rung_records, count // cfg.eta)
                configs = [configs[i] for i in keep]
    return sorted(log, key=lambda r: r.trial_id)
