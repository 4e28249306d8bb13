"""Random graph generators and the three-level hierarchical architecture space.

A student architecture is drawn in three stages: a top-level graph of cells,
each cell expanded into a graph of modules, each module expanded into a graph
of operation units. The leaves are the trainable op units; everything else is
wiring.
"""

from __future__ import annotations

import heapq
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

FAMILIES = ("ER", "WS", "BA")
DEFAULT_OP_CAP = 64


class GraphParameterError(ValueError):
    """Raised for generator parameters outside their valid domain."""


@dataclass(frozen=True)
class GraphGenSpec:
    """Parameters of one random-graph level.

    Only the fields belonging to ``family`` are used when sampling; the others
    are carried along so every spec has the same shape (the optimizer encodes
    all of them).
    """

    family: str = "ER"
    n: int = 4
    er_p: float = 0.5
    ws_k: int = 2
    ws_beta: float = 0.5
    ba_m: int = 1

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise GraphParameterError(f"unknown graph family {self.family!r}")
        if self.n < 1:
            raise GraphParameterError(f"node count must be positive, got {self.n}")
        if self.family == "ER" and not 0.0 <= self.er_p <= 1.0:
            raise GraphParameterError(f"er_p must lie in [0, 1], got {self.er_p}")
        if self.family == "WS":
            _check_ws(self.n, self.ws_k, self.ws_beta)
        if self.family == "BA":
            _check_ba(self.n, self.ba_m)

    def sample(self, rng: np.random.Generator) -> "UndirectedGraph":
        self.validate()
        if self.family == "ER":
            return sample_er(self.n, self.er_p, rng)
        if self.family == "WS":
            return sample_ws(self.n, self.ws_k, self.ws_beta, rng)
        return sample_ba(self.n, self.ba_m, rng)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GraphGenSpec":
        return cls(
            family=str(d["family"]),
            n=int(d["n"]),
            er_p=float(d["er_p"]),
            ws_k=int(d["ws_k"]),
            ws_beta=float(d["ws_beta"]),
            ba_m=int(d["ba_m"]),
        )


@dataclass(frozen=True)
class GeneratorHyperparams:
    """A point of the search space: three level specs plus the KD knobs."""

    top: GraphGenSpec
    mid: GraphGenSpec
    bottom: GraphGenSpec
    kd_temperature: float = 4.0
    kd_weight: float = 0.9

    @property
    def levels(self) -> Tuple[GraphGenSpec, GraphGenSpec, GraphGenSpec]:
        return (self.top, self.mid, self.bottom)

    @property
    def op_units(self) -> int:
        return self.top.n * self.mid.n * self.bottom.n

    def validate(self, op_cap: int = DEFAULT_OP_CAP) -> None:
        for spec in self.levels:
            spec.validate()
        if not 1.0 <= self.kd_temperature <= 10.0:
            raise GraphParameterError(
                f"kd_temperature must lie in [1, 10], got {self.kd_temperature}"
            )
        if not 0.0 <= self.kd_weight <= 1.0:
            raise GraphParameterError(f"kd_weight must lie in [0, 1], got {self.kd_weight}")
        if self.op_units > op_cap:
            raise GraphParameterError(
                f"{self.op_units} op units exceed the cap of {op_cap}"
            )

    def to_dict(self) -> dict:
        return {
            "top": self.top.to_dict(),
            "mid": self.mid.to_dict(),
            "bottom": self.bottom.to_dict(),
            "kd_temperature": self.kd_temperature,
            "kd_weight": self.kd_weight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorHyperparams":
        return cls(
            top=GraphGenSpec.from_dict(d["top"]),
            mid=GraphGenSpec.from_dict(d["mid"]),
            bottom=GraphGenSpec.from_dict(d["bottom"]),
            kd_temperature=float(d["kd_temperature"]),
            kd_weight=float(d["kd_weight"]),
        )


@dataclass
class UndirectedGraph:
    n: int
    edges: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        canon = set()
        for i, j in self.edges:
            if i == j:
                raise GraphParameterError(f"self-loop on node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphParameterError(f"edge ({i}, {j}) out of range for n={self.n}")
            canon.add((min(i, j), max(i, j)))
        self.edges = sorted(canon)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


@dataclass(frozen=True)
class OpNode:
    """One node of an architecture graph.

    ``kind`` is ``"input"``, ``"output"`` or ``"unit"``. Units carry their
    position in the hierarchy (top, mid, bottom indices) and the topological
    depth of their top-level cell, which image-mode staging uses.
    """

    kind: str
    path: Tuple[int, ...] = ()
    op: str = "relu-transform-norm"
    top_depth: int = 0


@dataclass
class ArchGraph:
    nodes: List[OpNode]
    edges: List[Tuple[int, int]]
    source: int
    sink: int

    @property
    def unit_ids(self) -> List[int]:
        return [i for i, nd in enumerate(self.nodes) if nd.kind == "unit"]

    @property
    def num_units(self) -> int:
        return sum(1 for nd in self.nodes if nd.kind == "unit")

    def predecessors(self) -> Dict[int, List[int]]:
        preds: Dict[int, List[int]] = {i: [] for i in range(len(self.nodes))}
        for u, v in self.edges:
            preds[v].append(u)
        return preds

    def successors(self) -> Dict[int, List[int]]:
        succs: Dict[int, List[int]] = {i: [] for i in range(len(self.nodes))}
        for u, v in self.edges:
            succs[u].append(v)
        return succs

    def topological_order(self) -> List[int]:
        """Kahn's algorithm, smallest ready id first. Raises on a cycle."""
        indeg = [0] * len(self.nodes)
        for _, v in self.edges:
            indeg[v] += 1
        succs = self.successors()
        ready = [i for i, d in enumerate(indeg) if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            u = heapq.heappop(ready)
            order.append(u)
            for v in succs[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    heapq.heappush(ready, v)
        if len(order) != len(self.nodes):
            raise ValueError("graph contains a cycle")
        return order

    def check(self) -> None:
        """Assert the structural invariants: acyclic, single source, single sink."""
        order = self.topological_order()
        indeg = [0] * len(self.nodes)
        outdeg = [0] * len(self.nodes)
        for u, v in self.edges:
            indeg[v] += 1
            outdeg[u] += 1
        sources = [i for i in range(len(self.nodes)) if indeg[i] == 0]
        sinks = [i for i in range(len(self.nodes)) if outdeg[i] == 0]
        if sources != [self.source] or sinks != [self.sink]:
            raise ValueError(f"expected one source/sink, got {sources} / {sinks}")
        # one source plus acyclicity gives reachability from source; same for sink
        assert order[0] == self.source

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"kind": nd.kind, "path": list(nd.path), "op": nd.op, "top_depth": nd.top_depth}
                for nd in self.nodes
            ],
            "edges": [list(e) for e in self.edges],
            "source": self.source,
            "sink": self.sink,
        }


def _check_ws(n: int, k: int, beta: float) -> None:
    if k % 2 or not 0 < k < n:
        raise GraphParameterError(f"WS needs even k with 0 < k < n, got k={k}, n={n}")
    if not 0.0 <= beta <= 1.0:
        raise GraphParameterError(f"ws_beta must lie in [0, 1], got {beta}")


def _check_ba(n: int, m: int) -> None:
    if not 1 <= m < n:
        raise GraphParameterError(f"BA needs 1 <= m < n, got m={m}, n={n}")


def sample_er(n: int, p: float, rng: np.random.Generator) -> UndirectedGraph:
    """Erdos-Renyi G(n, p): every pair joined independently with probability p."""
    if n < 1 or not 0.0 <= p <= 1.0:
        raise GraphParameterError(f"invalid ER parameters n={n}, p={p}")
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return UndirectedGraph(n, list(zip(iu[keep].tolist(), ju[keep].tolist())))


def sample_ws(n: int, k: int, beta: float, rng: np.random.Generator) -> UndirectedGraph:
    """Watts-Strogatz small world graph.

    Ring lattice with k/2 neighbours on each side; each lattice edge (i, i+j)
    is rewired with probability beta to (i, w), w uniform over nodes that are
    neither i nor already adjacent to i. The edge count stays n*k/2.
    """
    _check_ws(n, k, beta)
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in range(1, k // 2 + 1):
            t = (i + j) % n
            adj[i].add(t)
            adj[t].add(i)
    for j in range(1, k // 2 + 1):
        for i in range(n):
            t = (i + j) % n
            if rng.random() >= beta:
                continue
            choices = [w for w in range(n) if w != i and w not in adj[i]]
            if not choices:
                continue
            w = choices[rng.integers(len(choices))]
            adj[i].discard(t)
            adj[t].discard(i)
            adj[i].add(w)
            adj[w].add(i)
    edges = [(i, t) for i in range(n) for t in adj[i] if i < t]
    return UndirectedGraph(n, edges)


def sample_ba(n: int, m: int, rng: np.random.Generator) -> UndirectedGraph:
    """Barabasi-Albert preferential attachment grown from an m-node clique.

    Each arriving node links to m distinct existing nodes drawn with
    probability proportional to degree (degree 0 counts as 1).
    """
    _check_ba(n, m)
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    deg = np.zeros(n, dtype=np.float64)
    deg[:m] = m - 1
    for v in range(m, n):
        w = np.maximum(deg[:v], 1.0)
        targets = rng.choice(v, size=m, replace=False, p=w / w.sum())
        for t in sorted(targets.tolist()):
            edges.append((t, v))
            deg[t] += 1
        deg[v] = m
    return UndirectedGraph(n, edges)


def to_dag(g: UndirectedGraph) -> ArchGraph:
    """Orient edges low -> high index and add a fresh source and sink.

    Node ids 0..n-1 are kept; the source is ``n`` and the sink ``n + 1``.
    """
    indeg = [0] * g.n
    outdeg = [0] * g.n
    edges = []
    for i, j in g.edges:
        edges.append((i, j))
        outdeg[i] += 1
        indeg[j] += 1
    src, snk = g.n, g.n + 1
    edges += [(src, i) for i in range(g.n) if indeg[i] == 0]
    edges += [(i, snk) for i in range(g.n) if outdeg[i] == 0]
    depth = _longest_path_depth(g.n, g.edges)
    nodes = [OpNode("unit", (i,), top_depth=depth[i]) for i in range(g.n)]
    nodes += [OpNode("input"), OpNode("output")]
    return ArchGraph(nodes, sorted(edges), src, snk)


def _longest_path_depth(n: int, edges: Iterable[Tuple[int, int]]) -> List[int]:
    # edges run low -> high, so index order is a topological order
    depth = [0] * n
    for i, j in sorted(edges):
        depth[j] = max(depth[j], depth[i] + 1)
    return depth


def _expand(level: int, specs: Sequence[GraphGenSpec], rng: np.random.Generator,
            prefix: Tuple[int, ...], top_depth: int,
            paths: List[Tuple[Tuple[int, ...], int]],
            edges: List[Tuple[int, int]]) -> Tuple[List[int], List[int]]:
    """Sample the graph at ``level`` and flatten it into ``paths``/``edges``.

    Returns the (entry, exit) unit ids of the flattened block.
    """
    dag = to_dag(specs[level].sample(rng))
    n = len(dag.nodes) - 2
    blocks = []
    for i in range(n):
        depth = dag.nodes[i].top_depth if level == 0 else top_depth
        if level == len(specs) - 1:
            uid = len(paths)
            paths.append((prefix + (i,), depth))
            blocks.append(([uid], [uid]))
        else:
            blocks.append(_expand(level + 1, specs, rng, prefix + (i,), depth, paths, edges))
    for u, v in dag.edges:
        if u < n and v < n:
            # child sink -> successor child source, with the virtual ends elided
            edges.extend((a, b) for a in blocks[u][1] for b in blocks[v][0])
    entries = [e for u, v in dag.edges if u == dag.source for e in blocks[v][0]]
    exits = [e for u, v in dag.edges if v == dag.sink for e in blocks[u][1]]
    return entries, exits


def assemble(theta: GeneratorHyperparams, rng: np.random.Generator,
             op_cap: int = DEFAULT_OP_CAP) -> ArchGraph:
    """Draw one flat architecture from G(theta).

    Unit ids follow lexicographic (top, mid, bottom) order, which is also a
    topological order; the input node is ``U`` and the output node ``U + 1``.
    """
    theta.validate(op_cap)
    paths: List[Tuple[Tuple[int, ...], int]] = []
    edges: List[Tuple[int, int]] = []
    entries, exits = _expand(0, theta.levels, rng, (), 0, paths, edges)
    u = len(paths)
    edges += [(u, e) for e in entries]
    edges += [(x, u + 1) for x in exits]
    nodes = [OpNode("unit", p, top_depth=d) for p, d in paths]
    nodes += [OpNode("input"), OpNode("output")]
    return ArchGraph(nodes, sorted(set(edges)), u, u + 1)


def export_dot(g: ArchGraph, name: str = "arch") -> str:
    """Render ``g`` as a Graphviz digraph. Output depends only on ``g``."""
    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    for i, nd in enumerate(g.nodes):
        if nd.kind == "unit":
            label = "/".join(str(p) for p in nd.path)
            lines.append(f'  n{i} [label="{label}", shape=box];')
        else:
            lines.append(f'  n{i} [label="{nd.kind}", shape=ellipse];')
    for u, v in g.edges:
        lines.append(f"  n{u} -> n{v};")
    lines.append("}")
    return "\n".join(lines) + "\n"
