"""Quota bipartite matching (generalized Hall) and r-partite hypergraph matchings."""
import logging
from typing import FrozenSet, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from errors import Infeasible, MissingWeights, TooLarge

logger = logging.getLogger(__name__)

HALL_MAX_ROWS = 20
HYPER_MAX_N = 6
HYPER_MAX_R = 4
HYPER_MAX_EDGES = 100_000
HYPER_NODE_BUDGET = 2_000_000
FRACTIONAL_TOLERANCE = 1e-9


class QuotaVector(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: Tuple[int, ...] = Field(description="各行の割当数 a_i (正整数)")
    target: int = Field(description="列数 m (= sum a_i)")

    @model_validator(mode="after")
    def check_quota(self) -> "QuotaVector":
        if not self.a:
            raise ValueError("quota vector is empty")
        if any(x < 1 for x in self.a):
            raise ValueError(f"quotas must be positive integers, got {self.a}")
        if sum(self.a) != self.target:
            raise ValueError(f"quotas {self.a} sum to {sum(self.a)}, not {self.target}")
        return self

    @classmethod
    def of(cls, a: Sequence[int]) -> "QuotaVector":
        return cls(a=tuple(int(x) for x in a), target=int(sum(a)))

    @classmethod
    def parse(cls, text: str) -> "QuotaVector":
        try:
            values = [int(part) for part in text.split(",") if part.strip()]
        except ValueError:
            raise ValueError(f"quota must be a comma separated list of integers, got {text!r}")
        return cls.of(values)

    @property
    def n(self) -> int:
        return len(self.a)

    def __str__(self) -> str:
        return ",".join(str(x) for x in self.a)


class BipartiteGraph(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    m: int = Field(ge=1)
    edges: FrozenSet[Tuple[int, int]] = Field(default_factory=frozenset)

    @model_validator(mode="after")
    def check_edges(self) -> "BipartiteGraph":
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.m):
                raise ValueError(f"edge ({i}, {j}) outside {self.n}x{self.m}")
        return self

    @classmethod
    def complete(cls, n: int, m: int) -> "BipartiteGraph":
        return cls(n=n, m=m, edges=frozenset((i, j) for i in range(n) for j in range(m)))

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "BipartiteGraph":
        n, m = mask.shape
        return cls(n=n, m=m, edges=frozenset((int(i), int(j)) for i, j in zip(*np.nonzero(mask))))

    def neighbours(self, rows: Sequence[int]) -> FrozenSet[int]:
        wanted = set(rows)
        return frozenset(j for i, j in self.edges if i in wanted)


class Assignment(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma: Tuple[int, ...] = Field(description="sigma: 列 j -> 行 sigma[j]")

    def preimage_sizes(self, n: int) -> Tuple[int, ...]:
        counts = [0] * n
        for i in self.sigma:
            counts[i] += 1
        return tuple(counts)

    def respects(self, a: QuotaVector) -> bool:
        return len(self.sigma) == a.target and all(0 <= i < a.n for i in self.sigma) and self.preimage_sizes(a.n) == a.a


class Hypergraph(BaseModel):
    model_config = ConfigDict(frozen=True)

    r: int = Field(ge=1)
    n: int = Field(ge=1)
    edges: Tuple[Tuple[int, ...], ...]
    weights: Optional[Tuple[float, ...]] = None

    @model_validator(mode="after")
    def check_hyperedges(self) -> "Hypergraph":
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("duplicate hyperedge")
        for e in self.edges:
            if len(e) != self.r or any(not 0 <= v < self.n for v in e):
                raise ValueError(f"hyperedge {e} is not in [{self.n}]^{self.r}")
        if self.weights is not None:
            if len(self.weights) != len(self.edges):
                raise ValueError("one weight per hyperedge is required")
            if any(w < 0 for w in self.weights):
                raise ValueError("hyperedge weights must be nonnegative")
        return self

    @classmethod
    def complete(cls, n: int, r: int, weights: Optional[Sequence[float]] = None) -> "Hypergraph":
        edges = tuple(tuple(int(v) for v in e) for e in np.ndindex(*([n] * r)))
        return cls(r=r, n=n, edges=edges, weights=None if weights is None else tuple(weights))


class HMatching(BaseModel):
    model_config = ConfigDict(frozen=True)

    edges: Tuple[Tuple[int, ...], ...] = Field(default_factory=tuple)

    @field_validator("edges")
    @classmethod
    def check_disjoint(cls, v: Tuple[Tuple[int, ...], ...]) -> Tuple[Tuple[int, ...], ...]:
        if not is_matching(v):
            raise ValueError("hypergraph matching edges are not pairwise disjoint")
        return v

    @property
    def size(self) -> int:
        return len(self.edges)


def is_matching(edges: Sequence[Tuple[int, ...]]) -> bool:
    """True iff no two edges share a vertex at the same coordinate position."""
    if not edges:
        return True
    for k in range(len(edges[0])):
        column = [e[k] for e in edges]
        if len(set(column)) != len(column):
            return False
    return True


# --- quota matching (max flow) ---

def _flow_graph(n: int, m: int, edges: Sequence[Tuple[int, int]], quotas: Sequence[int]) -> Tuple[np.ndarray, int, int]:
    # 0 = source, 1..n = rows, n+1..n+m = columns, n+m+1 = sink
    size = n + m + 2
    sink = size - 1
    cap = np.zeros((size, size), dtype=np.int32)
    for i, q in enumerate(quotas):
        cap[0, 1 + i] = q
    for i, j in edges:
        # 中間辺は容量 m (最大流の値は容量1と同じ、最小カットが行側に寄る)
        cap[1 + i, 1 + n + j] = m
    for j in range(m):
        cap[1 + n + j, sink] = 1
    return cap, 0, sink


def _run_flow(cap: np.ndarray, source: int, sink: int) -> Tuple[int, np.ndarray]:
    result = maximum_flow(csr_matrix(cap), source, sink)
    flow = getattr(result, "flow", None)
    if flow is None:
        flow = result.residual
    return int(result.flow_value), np.asarray(flow.toarray())


def _max_flow_value(n: int, m: int, edges: Sequence[Tuple[int, int]], quotas: Sequence[int]) -> int:
    if not edges or m == 0:
        return 0
    cap, s, t = _flow_graph(n, m, edges, quotas)
    value, _ = _run_flow(cap, s, t)
    return value


def _violating_rows(n: int, m: int, edges: Sequence[Tuple[int, int]], quotas: Sequence[int]) -> FrozenSet[int]:
    """Rows reachable from the source in the residual network of a maximum flow."""
    cap, s, t = _flow_graph(n, m, edges, quotas)
    flow = _run_flow(cap, s, t)[1] if edges else np.zeros_like(cap)
    residual = cap.astype(np.int64) - flow
    reached = breadth_first_order(
        csr_matrix((residual > 0).astype(np.int8)), s, directed=True, return_predecessors=False
    )
    return frozenset(int(u) - 1 for u in reached if 1 <= u <= n)


def quota_matching(g: BipartiteGraph, a: QuotaVector) -> Assignment:
    """Lexicographically smallest sigma with |sigma^-1(i)| = a_i along edges of ``g``.

    Raises Infeasible with a row subset V' such that |N(V')| < sum a(V').
    """
    if a.target != g.m or a.n != g.n:
        raise ValueError(f"quota {a} does not fit a {g.n}x{g.m} graph")
    edges = sorted(g.edges)
    if _max_flow_value(g.n, g.m, edges, a.a) < g.m:
        violating = _violating_rows(g.n, g.m, edges, a.a)
        demand = sum(a.a[i] for i in violating)
        neighbours = len(g.neighbours(violating))
        logger.debug(f"quota matching infeasible: rows {sorted(violating)} demand {demand} > {neighbours}")
        raise Infeasible(violating, neighbours, demand)

    # 列を順に最小の行へ固定し、残りが実行可能かを毎回確認する
    remaining = list(a.a)
    sigma: List[int] = []
    for j in range(g.m):
        rest_cols = g.m - j - 1
        for i in range(g.n):
            if remaining[i] == 0 or (i, j) not in g.edges:
                continue
            remaining[i] -= 1
            rest_edges = [(u, v - j - 1) for u, v in edges if v > j]
            if rest_cols == 0 or _max_flow_value(g.n, rest_cols, rest_edges, remaining) == rest_cols:
                sigma.append(i)
                break
            remaining[i] += 1
        else:
            raise RuntimeError(f"lexicographic completion failed at column {j}")
    return Assignment(sigma=tuple(sigma))


def check_hall_quota(g: BipartiteGraph, a: QuotaVector) -> bool:
    if g.n > HALL_MAX_ROWS:
        raise TooLarge(f"exhaustive Hall check needs n <= {HALL_MAX_ROWS}, got {g.n}")
    masks = [0] * g.n
    for i, j in g.edges:
        masks[i] |= 1 << j
    for subset in range(1, 1 << g.n):
        covered = 0
        demand = 0
        for i in range(g.n):
            if subset >> i & 1:
                covered |= masks[i]
                demand += a.a[i]
        if bin(covered).count("1") < demand:
            return False
    return True


def quota_maps(a: QuotaVector) -> Iterator[Tuple[int, ...]]:
    """Every sigma with |sigma^-1(i)| = a_i, in lexicographic order."""
    remaining = list(a.a)
    sigma: List[int] = []

    def extend() -> Iterator[Tuple[int, ...]]:
        if len(sigma) == a.target:
            yield tuple(sigma)
            return
        for i in range(a.n):
            if remaining[i] > 0:
                remaining[i] -= 1
                sigma.append(i)
                yield from extend()
                sigma.pop()
                remaining[i] += 1

    yield from extend()


# --- hypergraph matching ---

def _distinct_bound(candidates: Sequence[Tuple[int, ...]], r: int) -> int:
    if not candidates:
        return 0
    return min(len(candidates), min(len({e[k] for e in candidates}) for k in range(r)))


def max_hypergraph_matching(h: Hypergraph, node_budget: int = HYPER_NODE_BUDGET) -> HMatching:
    """Exact maximum matching by branch-and-bound (edges tried by weight, then index)."""
    if len(h.edges) > HYPER_MAX_EDGES or h.n > HYPER_MAX_N or h.r > HYPER_MAX_R:
        raise TooLarge(f"hypergraph too large for exact matching: n={h.n}, r={h.r}, |E|={len(h.edges)}")
    weights = h.weights or (0.0,) * len(h.edges)
    order = sorted(range(len(h.edges)), key=lambda k: (-weights[k], h.edges[k]))
    ordered = [h.edges[k] for k in order]
    limit = min(h.n, len(ordered))
    best: List[Tuple[int, ...]] = []
    nodes = 0

    def search(chosen: List[Tuple[int, ...]], candidates: List[Tuple[int, ...]]) -> None:
        nonlocal best, nodes
        nodes += 1
        if nodes > node_budget:
            raise TooLarge(f"hypergraph matching exceeded {node_budget} search nodes")
        if len(chosen) > len(best):
            best = list(chosen)
        for idx, e in enumerate(candidates):
            if len(best) == limit:
                return
            if len(chosen) + _distinct_bound(candidates[idx:], h.r) <= len(best):
                return
            compatible = [f for f in candidates[idx + 1:] if all(f[k] != e[k] for k in range(h.r))]
            chosen.append(e)
            search(chosen, compatible)
            chosen.pop()

    search([], ordered)
    logger.debug(f"hypergraph matching: size {len(best)} after {nodes} nodes")
    return HMatching(edges=tuple(best))


def verify_fractional_matching(h: Hypergraph, n: Optional[int] = None) -> bool:
    """Every vertex slot (k, l) carries weight 1/n and the total weight is 1."""
    if h.weights is None:
        raise MissingWeights("fractional matching check needs edge weights")
    n = h.n if n is None else n
    w = np.asarray(h.weights, dtype=float)
    if abs(float(w.sum()) - 1.0) > FRACTIONAL_TOLERANCE:
        return False
    incident = np.zeros((h.r, n))
    for e, weight in zip(h.edges, w):
        for k, v in enumerate(e):
            if v >= n:
                return False
            incident[k, v] += weight
    return bool(np.all(np.abs(incident - 1.0 / n) <= FRACTIONAL_TOLERANCE))
