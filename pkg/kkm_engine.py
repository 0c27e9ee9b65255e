"""Balanced-point search over products of simplices and the assignments read off it.

The search minimizes the residual of the partition-of-unity marginals against
their targets on exact lattices, doubling the resolution around the best point
at every refinement level. At a balanced point the support graph (or support
hypergraph) carries the quota assignment (or the large matching).
"""
import itertools
import logging
from fractions import Fraction
from math import ceil, comb, lcm, prod
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

import settings
from errors import (
    ExtractionFailed,
    Infeasible,
    MatchingTooSmall,
    NotCovered,
    ResidualAboveTolerance,
    SolverExhausted,
    TooLarge,
)
from matching import (
    Assignment,
    BipartiteGraph,
    HMatching,
    Hypergraph,
    QuotaVector,
    max_hypergraph_matching,
    quota_maps,
    quota_matching,
)
from simplex_core import (
    ProductPoint,
    ScoreField,
    UnityWeights,
    lattice_count,
    product_lattice,
    unity_weights,
)

logger = logging.getLogger(__name__)

DELTA_HALVINGS = 40
EXTRACTION_RETRIES = 3
RETRY_TIGHTENING = 1000.0
INITIAL_RADIUS = 4
ORACLE_LIMIT = 10_000_000


class BalancedTarget(BaseModel):
    """Target marginals: rows a_i/m and columns 1/m, or 1/n in every class."""

    model_config = ConfigDict(frozen=True)

    marginals: Tuple[Tuple[Fraction, ...], ...]

    @model_validator(mode="after")
    def check_sums(self) -> "BalancedTarget":
        for k, t in enumerate(self.marginals):
            if sum(t) != 1 or any(x < 0 for x in t):
                raise ValueError(f"target marginal {k} is not a probability vector: {t}")
        return self

    @classmethod
    def for_quota(cls, a: QuotaVector) -> "BalancedTarget":
        m = a.target
        return cls(marginals=(tuple(Fraction(x, m) for x in a.a), (Fraction(1, m),) * m))

    @classmethod
    def uniform(cls, n: int, r: int) -> "BalancedTarget":
        return cls(marginals=((Fraction(1, n),) * n,) * r)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(len(t) for t in self.marginals)

    def denominator(self) -> int:
        return lcm(*(x.denominator for t in self.marginals for x in t))

    def as_arrays(self) -> List[np.ndarray]:
        return [np.array([float(x) for x in t]) for t in self.marginals]


class BalancedPoint(BaseModel):
    point: ProductPoint
    residual: float
    depth: int = 0
    resolution: int
    history: List[float] = Field(default_factory=list, description="各段階での最良残差")


class KkmSolution(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    point: ProductPoint
    assignment: Optional[Assignment] = None
    matching: Optional[HMatching] = None
    residual: float = Field(ge=0)
    weights: UnityWeights
    tolerance: float
    depth: int = 0
    delta: float = Field(default=0.0, description="支持グラフの閾値")


class ColoredCovering(BaseModel):
    """Scores s'_ij(x) on a single simplex; column j is the covering A_j."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int = Field(ge=1)
    m: int = Field(ge=1)
    evaluate: Callable[[np.ndarray], np.ndarray]
    name: str = "colored"


def canonical_colored_covering(n: int, m: int) -> ColoredCovering:
    """A_ij = {x : x_i > 0} for every column j."""

    def evaluate(x: np.ndarray) -> np.ndarray:
        return np.repeat(np.asarray(x, dtype=float)[:, np.newaxis], m, axis=1)

    return ColoredCovering(n=n, m=m, evaluate=evaluate, name="canonical")


def random_colored_covering(n: int, m: int, seed: int, amplitude: float = 0.5) -> ColoredCovering:
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2 * np.pi, size=(n, m))
    freq = rng.normal(0.0, 2.0, size=(n, m, n))

    def evaluate(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[:, np.newaxis] * (1.0 + amplitude * np.sin(phase + freq @ x))

    return ColoredCovering(n=n, m=m, evaluate=evaluate, name=f"random[{seed}]")


class OracleSolution(BaseModel):
    point: ProductPoint
    assignment: Assignment
    min_score: float


# --- 残差 ---

def marginal_residual(phi: np.ndarray, targets: Sequence[np.ndarray]) -> float:
    total = 0.0
    for axis, target in enumerate(targets):
        others = tuple(k for k in range(phi.ndim) if k != axis)
        marginal = phi.sum(axis=others) if others else phi
        total += float(np.max(np.abs(marginal - target)))
    return total


def _sample_at(s: ScoreField, nums: Sequence[Sequence[int]], resolution: int, targets: Sequence[np.ndarray]) -> float:
    values = s.scores([np.asarray(k, dtype=float) / resolution for k in nums])
    total = float(values.sum())
    if not total > 0:
        raise NotCovered(ProductPoint.from_numerators(nums, resolution))
    return marginal_residual(values / total, targets)


def _base_resolution(dims: Sequence[int], denominator: int, base: int, max_points: int) -> int:
    def size(res: int) -> int:
        return prod(lattice_count(d - 1, res) for d in dims)

    resolution = lcm(base, denominator)
    if size(resolution) <= max_points:
        return resolution
    resolution = (resolution // denominator) * denominator
    while resolution > denominator and size(resolution) > max_points:
        resolution -= denominator
    return resolution


def _factor_offsets(center: Sequence[int], radius: int) -> List[Tuple[int, ...]]:
    if len(center) == 1:
        return [(0,)]
    out = []
    for head in itertools.product(range(-radius, radius + 1), repeat=len(center) - 1):
        delta = head + (-sum(head),)
        if abs(delta[-1]) <= radius and all(c + d >= 0 for c, d in zip(center, delta)):
            out.append(delta)
    return out


def _window_radius(dims: Sequence[int], max_samples: int) -> int:
    radius = INITIAL_RADIUS
    while radius > 1 and prod((2 * radius + 1) ** (d - 1) for d in dims) > max_samples:
        radius -= 1
    return radius


def _search(
    s: ScoreField,
    target: BalancedTarget,
    tol: float,
    budget: int,
    base_resolution: Optional[int] = None,
    max_base_points: Optional[int] = None,
) -> BalancedPoint:
    if s.dims != target.dims:
        raise ValueError(f"score field dims {s.dims} do not match target dims {target.dims}")
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    targets = target.as_arrays()
    resolution = _base_resolution(
        s.dims,
        target.denominator(),
        base_resolution or settings.BASE_RESOLUTION,
        max_base_points or settings.MAX_BASE_POINTS,
    )

    best_nums: Optional[Tuple[Tuple[int, ...], ...]] = None
    best = float("inf")
    for nums in product_lattice(s.dims, resolution):
        value = _sample_at(s, nums, resolution, targets)
        if value < best:
            best, best_nums = value, nums
    logger.info(f"{s.name}: base lattice N={resolution}, best residual {best:.3e}")

    radius = _window_radius(s.dims, settings.MAX_SAMPLES)
    history = [best]
    depth = 0
    at_edge = False
    while best >= tol and depth < budget:
        depth += 1
        # 窓の端で改善したときは解像度を保ったまま中心だけ移す
        if not at_edge:
            resolution *= 2
            best_nums = tuple(tuple(2 * k for k in f) for f in best_nums)
        center = best_nums
        best_offset: Tuple[Tuple[int, ...], ...] = ()
        per_factor = [_factor_offsets(c, radius) for c in center]
        for offsets in itertools.product(*per_factor):
            if all(not any(d) for d in offsets):
                continue
            nums = tuple(tuple(c + d for c, d in zip(cf, df)) for cf, df in zip(center, offsets))
            value = _sample_at(s, nums, resolution, targets)
            if value < best:
                best, best_nums, best_offset = value, nums, offsets
        at_edge = any(abs(d) == radius for df in best_offset for d in df)
        history.append(best)
        logger.debug(f"{s.name}: level {depth} N={resolution} residual {best:.3e}")

    point = ProductPoint.from_numerators(best_nums, resolution)
    if best >= tol:
        raise ResidualAboveTolerance(point, best)
    return BalancedPoint(point=point, residual=best, depth=depth, resolution=resolution, history=history)


def balanced_point_search(
    s: ScoreField,
    a: Union[QuotaVector, BalancedTarget],
    tol: Optional[float] = None,
    budget: Optional[int] = None,
    base_resolution: Optional[int] = None,
    max_base_points: Optional[int] = None,
) -> BalancedPoint:
    """Lattice point whose marginals match the targets to within ``tol``.

    Raises NotCovered at the first uncovered sample point and ResidualAboveTolerance
    when the refinement budget runs out.
    """
    target = BalancedTarget.for_quota(a) if isinstance(a, QuotaVector) else a
    return _search(
        s,
        target,
        settings.DEFAULT_TOLERANCE if tol is None else tol,
        settings.DEFAULT_BUDGET if budget is None else budget,
        base_resolution,
        max_base_points,
    )


def delta_schedule(start: float) -> Iterator[float]:
    delta = start
    for _ in range(DELTA_HALVINGS):
        yield delta
        delta /= 2
    yield 0.0


def _extract(weights: UnityWeights, a: QuotaVector) -> Tuple[Assignment, float]:
    n, m = weights.phi.shape
    if (n, m) != (a.n, a.target):
        raise ValueError(f"weights of shape {(n, m)} do not fit quota {a}")
    for delta in delta_schedule(1.0 / (2 * n * m)):
        graph = BipartiteGraph.from_mask(weights.phi > delta)
        try:
            return quota_matching(graph, a), delta
        except Infeasible:
            continue
    raise ExtractionFailed(f"no support threshold admits a quota assignment for {a}")


def extract_assignment(weights: UnityWeights, a: QuotaVector) -> Assignment:
    return _extract(weights, a)[0]


def kkm_checks(s: ScoreField, solution: KkmSolution, a: Optional[QuotaVector] = None) -> Dict[str, bool]:
    """Re-check a solution from the score field alone."""
    values = s.at(solution.point)
    checks = {
        "covered": bool(values.sum() > 0),
        "residual_within_tolerance": solution.residual <= solution.tolerance,
        "weights_sum_to_one": abs(float(solution.weights.phi.sum()) - 1.0) <= 1e-12,
    }
    if solution.assignment is not None:
        sigma = solution.assignment.sigma
        checks["scores_positive_along_sigma"] = all(values[i, j] > 0 for j, i in enumerate(sigma))
        if a is not None:
            checks["quota_exact"] = solution.assignment.respects(a)
    if solution.matching is not None:
        checks["scores_positive_on_matching"] = all(values[e] > 0 for e in solution.matching.edges)
        n, r = s.dims[0], len(s.dims)
        checks["matching_size_bound"] = solution.matching.size >= matching_bound(n, r)
    if checks["covered"]:
        phi = values / values.sum()
        targets = (
            BalancedTarget.for_quota(a) if a is not None else BalancedTarget.uniform(s.dims[0], len(s.dims))
        ).as_arrays()
        checks["residual_recomputed"] = marginal_residual(phi, targets) <= solution.tolerance
    return checks


def solve_kkm_product(
    s: ScoreField,
    a: QuotaVector,
    tol: Optional[float] = None,
    budget: Optional[int] = None,
    base_resolution: Optional[int] = None,
    max_base_points: Optional[int] = None,
) -> KkmSolution:
    """Point x and sigma with s_{sigma(j) j}(x) > 0 for every column j.

    Raises NotCovered(p) when the covering hypothesis fails at a sampled point.
    """
    if len(s.dims) != 2 or s.dims != (a.n, a.target):
        raise ValueError(f"quota {a} does not fit score field dims {s.dims}")
    tol = settings.DEFAULT_TOLERANCE if tol is None else tol
    current = tol
    for attempt in range(EXTRACTION_RETRIES + 1):
        try:
            found = balanced_point_search(s, a, current, budget, base_resolution, max_base_points)
        except ResidualAboveTolerance as e:
            raise SolverExhausted(
                f"no balanced point below {current:.1e} within budget", residual=e.residual, point=e.point
            )
        weights = unity_weights(s, found.point)
        try:
            assignment, delta = _extract(weights, a)
        except ExtractionFailed:
            logger.warning(f"{s.name}: extraction failed at residual {found.residual:.3e}, tightening tolerance")
            current /= RETRY_TIGHTENING
            continue
        solution = KkmSolution(
            point=found.point,
            assignment=assignment,
            residual=found.residual,
            weights=weights,
            tolerance=tol,
            depth=found.depth,
            delta=delta,
        )
        checks = kkm_checks(s, solution, a)
        if not all(checks.values()):
            failed = [k for k, ok in checks.items() if not ok]
            raise SolverExhausted(f"solution failed re-verification: {failed}", residual=found.residual, point=found.point)
        logger.info(f"{s.name}: sigma={assignment.sigma} at residual {found.residual:.3e} (depth {found.depth})")
        return solution
    raise SolverExhausted(f"assignment extraction failed after {EXTRACTION_RETRIES} retries", residual=found.residual, point=found.point)


def lift_colored(colored: ColoredCovering) -> ScoreField:
    """s_ij(x, y) = s'_ij(x) * max(0, y_j - max_k y_k + 1/(2m))."""
    margin = 1.0 / (2 * colored.m)

    def evaluate(factors: Sequence[np.ndarray]) -> np.ndarray:
        x, y = factors
        base = np.asarray(colored.evaluate(x), dtype=float)
        lift = np.maximum(0.0, y - y.max() + margin)
        return base * lift[np.newaxis, :]

    return ScoreField(dims=(colored.n, colored.m), evaluate=evaluate, name=f"lift[{colored.name}]")


def solve_colored_kkm(
    colored: ColoredCovering,
    a: QuotaVector,
    tol: Optional[float] = None,
    budget: Optional[int] = None,
) -> KkmSolution:
    solution = solve_kkm_product(lift_colored(colored), a, tol, budget)
    x = solution.point.factors[0].as_array()
    base = np.asarray(colored.evaluate(x), dtype=float)
    if not all(base[i, j] > 0 for j, i in enumerate(solution.assignment.sigma)):
        raise SolverExhausted("lifted solution does not lie in the colored sets", residual=solution.residual)
    return solution


def matching_bound(n: int, r: int) -> int:
    return ceil(n / (r - 1))


def solve_kkm_r(
    s: ScoreField,
    tol: Optional[float] = None,
    budget: Optional[int] = None,
    base_resolution: Optional[int] = None,
    max_base_points: Optional[int] = None,
) -> KkmSolution:
    """Balanced point for f_kl = 1/n and a matching of size >= ceil(n/(r-1)) on its support."""
    r = len(s.dims)
    n = s.dims[0]
    if r < 2 or any(d != n for d in s.dims):
        raise ValueError(f"r-factor solver needs r >= 2 equal factors, got dims {s.dims}")
    tol = settings.DEFAULT_TOLERANCE if tol is None else tol
    bound = matching_bound(n, r)
    target = BalancedTarget.uniform(n, r)
    current = tol
    best_size = 0
    for attempt in range(EXTRACTION_RETRIES + 1):
        try:
            found = balanced_point_search(s, target, current, budget, base_resolution, max_base_points)
        except ResidualAboveTolerance as e:
            raise SolverExhausted(
                f"no balanced point below {current:.1e} within budget", residual=e.residual, point=e.point
            )
        weights = unity_weights(s, found.point)
        for delta in delta_schedule(1.0 / (2 * n**r)):
            support = weights.support(delta)
            if not support:
                continue
            h = Hypergraph(r=r, n=n, edges=tuple(support), weights=tuple(float(weights.phi[e]) for e in support))
            matching = max_hypergraph_matching(h)
            best_size = max(best_size, matching.size)
            if matching.size >= bound:
                solution = KkmSolution(
                    point=found.point,
                    matching=matching,
                    residual=found.residual,
                    weights=weights,
                    tolerance=tol,
                    depth=found.depth,
                    delta=delta,
                )
                checks = kkm_checks(s, solution)
                if not all(checks.values()):
                    failed = [k for k, ok in checks.items() if not ok]
                    raise SolverExhausted(f"solution failed re-verification: {failed}", residual=found.residual)
                logger.info(f"{s.name}: matching {matching.edges} (bound {bound})")
                return solution
        logger.warning(f"{s.name}: support matching {best_size} < {bound}, tightening tolerance")
        current /= RETRY_TIGHTENING
    raise MatchingTooSmall(best_size, bound)


# --- brute-force oracle ---

def _lattice_values(s: ScoreField, resolution: int) -> Tuple[List[Tuple[Tuple[int, ...], ...]], np.ndarray]:
    points = list(product_lattice(s.dims, resolution))
    values = np.stack([s.scores([np.asarray(k, dtype=float) / resolution for k in nums]) for nums in points])
    return points, values


def _check_oracle_size(s: ScoreField, a: QuotaVector, resolution: int) -> None:
    maps = 1
    remaining = a.target
    for x in a.a:
        maps *= comb(remaining, x)
        remaining -= x
    total = maps * prod(lattice_count(d - 1, resolution) for d in s.dims)
    if total > ORACLE_LIMIT:
        raise TooLarge(f"oracle enumeration of {total} (sigma, point) pairs exceeds {ORACLE_LIMIT}")


def oracle_solve(s: ScoreField, a: QuotaVector, resolution: int) -> Optional[OracleSolution]:
    """Exhaustive search for the (sigma, lattice point) maximizing min_j s_{sigma(j) j}."""
    _check_oracle_size(s, a, resolution)
    points, values = _lattice_values(s, resolution)
    columns = np.arange(a.target)
    best: Optional[OracleSolution] = None
    for sigma in quota_maps(a):
        along = values[:, list(sigma), columns].min(axis=1)
        k = int(np.argmax(along))
        if along[k] > 0 and (best is None or along[k] > best.min_score):
            best = OracleSolution(
                point=ProductPoint.from_numerators(points[k], resolution),
                assignment=Assignment(sigma=sigma),
                min_score=float(along[k]),
            )
    return best


def oracle_feasible(s: ScoreField, sigma: Sequence[int], resolution: int) -> bool:
    """True iff some lattice point has s_{sigma(j) j} > 0 for every column j."""
    _, values = _lattice_values(s, resolution)
    along = values[:, list(sigma), np.arange(len(sigma))]
    return bool(np.any(np.all(along > 0, axis=1)))
