"""Points of simplices and their products, lattice discretizations, score fields
and the partitions of unity built from them.

Lattice coordinates are exact ``Fraction``s (integer numerators over the
resolution) so facet membership is decided without tolerance; score fields are
evaluated in float64.
"""
import itertools
import logging
from fractions import Fraction
from functools import lru_cache, reduce
from math import comb
from typing import Any, Callable, Dict, Iterator, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import (
    IndexOutOfRange,
    NegativeCoordinate,
    NotCovered,
    ResolutionZero,
    SumNotOne,
)

logger = logging.getLogger(__name__)

UNITY_TOLERANCE = 1e-12


class BarycentricPoint(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    coords: Tuple[Fraction, ...] = Field(description="重心座標 t_1..t_{d+1} (有理数)")

    @field_validator("coords", mode="before")
    @classmethod
    def coerce_fractions(cls, v: Any) -> Tuple[Fraction, ...]:
        return tuple(c if isinstance(c, Fraction) else Fraction(c) for c in v)

    @model_validator(mode="after")
    def check_simplex(self) -> "BarycentricPoint":
        if not self.coords:
            raise ValueError("a barycentric point needs at least one coordinate")
        if any(c < 0 for c in self.coords):
            raise ValueError(f"negative barycentric coordinate in {self.coords}")
        if sum(self.coords) != 1:
            raise ValueError(f"barycentric coordinates sum to {sum(self.coords)}")
        return self

    @property
    def dim(self) -> int:
        return len(self.coords) - 1

    def as_array(self) -> np.ndarray:
        return np.array([float(c) for c in self.coords])

    def to_strings(self) -> List[str]:
        return [str(c) for c in self.coords]

    def __str__(self) -> str:
        return "(" + ", ".join(str(c) for c in self.coords) + ")"


class ProductPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    factors: Tuple[BarycentricPoint, ...] = Field(description="単体の積の各因子の点")

    @classmethod
    def from_numerators(cls, numerators: Sequence[Sequence[int]], resolution: int) -> "ProductPoint":
        return cls(
            factors=tuple(
                BarycentricPoint(coords=tuple(Fraction(int(k), resolution) for k in nums))
                for nums in numerators
            )
        )

    @classmethod
    def from_strings(cls, factors: Sequence[Sequence[str]]) -> "ProductPoint":
        return cls(factors=tuple(validate_barycentric([Fraction(c) for c in f]) for f in factors))

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(len(f.coords) for f in self.factors)

    def as_arrays(self) -> List[np.ndarray]:
        return [f.as_array() for f in self.factors]

    def to_strings(self) -> List[List[str]]:
        return [f.to_strings() for f in self.factors]

    def __str__(self) -> str:
        return " x ".join(str(f) for f in self.factors)


class ScoreField(BaseModel):
    """Nonnegative continuous scores s_t, one per index tuple t.

    ``dims[k]`` is the number of barycentric coordinates of factor k and the
    score tensor has shape ``dims``. Score t must vanish whenever coordinate
    ``t[k]`` of factor k is zero (the forbidden faces); providers guarantee this
    globally, ``check_cover_conditions`` only samples lattice points.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dims: Tuple[int, ...]
    evaluate: Callable[[Sequence[np.ndarray]], np.ndarray]
    name: str = Field(default="custom")

    @field_validator("dims")
    @classmethod
    def check_dims(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or any(d < 1 for d in v):
            raise ValueError(f"every factor needs at least one coordinate, got {v}")
        return v

    def scores(self, factors: Sequence[np.ndarray]) -> np.ndarray:
        values = np.asarray(self.evaluate(factors), dtype=float)
        if values.shape != self.dims:
            raise ValueError(f"score field {self.name} returned shape {values.shape}, expected {self.dims}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError(f"score field {self.name} returned negative or non-finite scores")
        return values

    def at(self, point: ProductPoint) -> np.ndarray:
        return self.scores(point.as_arrays())


class UnityWeights(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    phi: np.ndarray

    @field_validator("phi")
    @classmethod
    def check_partition_of_unity(cls, v: np.ndarray) -> np.ndarray:
        if np.any(v < 0):
            raise ValueError("partition of unity has a negative weight")
        if abs(float(v.sum()) - 1.0) > UNITY_TOLERANCE:
            raise ValueError(f"partition of unity sums to {v.sum()!r}")
        return v

    def marginal(self, axis: int) -> np.ndarray:
        """Sum of the weights over every index except ``axis`` (f_i, g_j, f_kl)."""
        others = tuple(k for k in range(self.phi.ndim) if k != axis)
        return self.phi.sum(axis=others) if others else self.phi.copy()

    def support(self, delta: float = 0.0) -> List[Tuple[int, ...]]:
        return [tuple(int(i) for i in t) for t in zip(*np.nonzero(self.phi > delta))]


def validate_barycentric(coords: Sequence[Any]) -> BarycentricPoint:
    if len(coords) == 0:
        raise ValueError("empty coordinate list")
    values = [c if isinstance(c, Fraction) else Fraction(c) for c in coords]
    for i, c in enumerate(values):
        if c < 0:
            raise NegativeCoordinate(i, c)
    total = sum(values)
    if total != 1:
        raise SumNotOne(total)
    return BarycentricPoint(coords=tuple(values))


def facet_indicator(p: BarycentricPoint, i: int) -> bool:
    if not 0 <= i < len(p.coords):
        raise IndexOutOfRange(f"facet index {i} outside 0..{len(p.coords) - 1}")
    return p.coords[i] == 0


@lru_cache(maxsize=256)
def lattice_numerators(dim: int, resolution: int) -> Tuple[Tuple[int, ...], ...]:
    """All (dim+1)-tuples of nonnegative integers summing to ``resolution``, lexicographic."""
    if dim == 0:
        return ((resolution,),)
    out = []
    for first in range(resolution + 1):
        for rest in lattice_numerators(dim - 1, resolution - first):
            out.append((first,) + rest)
    return tuple(out)


def lattice_count(dim: int, resolution: int) -> int:
    return comb(resolution + dim, dim)


def lattice_points(dim: int, resolution: int) -> List[BarycentricPoint]:
    if resolution < 1:
        raise ResolutionZero(f"lattice resolution must be at least 1, got {resolution}")
    return [
        BarycentricPoint(coords=tuple(Fraction(k, resolution) for k in nums))
        for nums in lattice_numerators(dim, resolution)
    ]


@lru_cache(maxsize=64)
def lattice_index(dim: int, resolution: int) -> Dict[Tuple[int, ...], int]:
    return {nums: k for k, nums in enumerate(lattice_numerators(dim, resolution))}


def product_lattice(dims: Sequence[int], resolution: int) -> Iterator[Tuple[Tuple[int, ...], ...]]:
    return itertools.product(*(lattice_numerators(d - 1, resolution) for d in dims))


def compositions(total: int, parts: int) -> Iterator[Tuple[int, ...]]:
    """Every way to write ``total`` as an ordered sum of ``parts`` positive integers."""
    if parts == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def unity_weights_from_scores(values: np.ndarray) -> np.ndarray:
    total = float(values.sum())
    if total <= 0:
        raise ValueError("all scores vanish")
    return values / total


def unity_weights(s: ScoreField, p: ProductPoint) -> UnityWeights:
    values = s.at(p)
    if not values.sum() > 0:
        raise NotCovered(p)
    return UnityWeights(phi=unity_weights_from_scores(values))


class CoverReport(BaseModel):
    boundary_ok: bool
    uncovered: List[ProductPoint] = Field(default_factory=list)
    boundary_violations: int = 0


def check_cover_conditions(s: ScoreField, resolution: int) -> CoverReport:
    if resolution < 1:
        raise ResolutionZero(f"lattice resolution must be at least 1, got {resolution}")
    uncovered: List[ProductPoint] = []
    violations = 0
    for nums in product_lattice(s.dims, resolution):
        values = s.scores([np.asarray(k, dtype=float) / resolution for k in nums])
        for axis, factor in enumerate(nums):
            for i, k in enumerate(factor):
                if k == 0 and np.any(np.take(values, i, axis=axis) != 0):
                    violations += 1
        if not np.any(values > 0):
            uncovered.append(ProductPoint.from_numerators(nums, resolution))
    if violations:
        logger.warning(f"score field {s.name}: {violations} nonzero scores on forbidden faces at N={resolution}")
    return CoverReport(boundary_ok=violations == 0, uncovered=uncovered, boundary_violations=violations)


class ContinuityReport(BaseModel):
    continuous: bool
    points_checked: int = 0
    max_jump: float = Field(default=0.0, description="最小ステップでの最大変化量")
    suspects: List[ProductPoint] = Field(default_factory=list)


def check_continuity(
    s: ScoreField,
    resolution: int,
    h: float = 1e-4,
    shrink: float = 100.0,
    atol: float = 1e-9,
) -> ContinuityReport:
    """Finite-difference spot check at every lattice point.

    Each factor is moved toward each of its vertices by ``h`` and by
    ``h / shrink``. A continuous field's change shrinks with the step; a point
    where the small step still moves some score by more than half of the large
    step's change (and more than ``atol``) is reported as a suspect.
    """
    if resolution < 1:
        raise ResolutionZero(f"lattice resolution must be at least 1, got {resolution}")
    if not 0 < h < 1 or not shrink > 1:
        raise ValueError(f"continuity check needs 0 < h < 1 and shrink > 1, got h={h}, shrink={shrink}")
    suspects: List[ProductPoint] = []
    max_jump = 0.0
    checked = 0
    for nums in product_lattice(s.dims, resolution):
        factors = [np.asarray(k, dtype=float) / resolution for k in nums]
        base = s.scores(factors)
        checked += 1
        flagged = False
        for axis, x in enumerate(factors):
            for i in range(len(x)):
                vertex = np.zeros_like(x)
                vertex[i] = 1.0
                jumps = []
                for step in (h, h / shrink):
                    moved = list(factors)
                    moved[axis] = (1.0 - step) * x + step * vertex
                    jumps.append(float(np.max(np.abs(s.scores(moved) - base))))
                max_jump = max(max_jump, jumps[1])
                if jumps[1] > atol and jumps[1] > 0.5 * jumps[0]:
                    flagged = True
        if flagged:
            suspects.append(ProductPoint.from_numerators(nums, resolution))
    if suspects:
        logger.warning(f"score field {s.name}: {len(suspects)} lattice points look discontinuous at N={resolution}")
    return ContinuityReport(continuous=not suspects, points_checked=checked, max_jump=max_jump, suspects=suspects)


# --- 組み込みのスコア場 ---

def canonical_field(dims: Sequence[int]) -> ScoreField:
    """s_t = prod_k x_k[t_k]; its scores sum to 1 everywhere."""

    def evaluate(factors: Sequence[np.ndarray]) -> np.ndarray:
        return reduce(np.multiply.outer, factors)

    return ScoreField(dims=tuple(dims), evaluate=evaluate, name="canonical")


def random_smooth_field(dims: Sequence[int], seed: int, amplitude: float = 0.5) -> ScoreField:
    """Canonical field times a seeded smooth weight in [1 - amplitude, 1 + amplitude]."""
    dims = tuple(dims)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2 * np.pi, size=dims)
    freq = rng.normal(0.0, 2.0, size=dims + (sum(dims),))

    def evaluate(factors: Sequence[np.ndarray]) -> np.ndarray:
        coords = np.concatenate(factors)
        weight = 1.0 + amplitude * np.sin(phase + freq @ coords)
        return reduce(np.multiply.outer, factors) * weight

    return ScoreField(dims=dims, evaluate=evaluate, name=f"random[{seed}]")


def kuhn_vertices(t: np.ndarray, resolution: int) -> List[Tuple[Tuple[int, ...], float]]:
    """Lattice vertices and weights of the Freudenthal simplex containing ``t``."""
    dim = len(t) - 1
    if dim == 0:
        return [((resolution,), 1.0)]
    cum = np.cumsum(t[:-1]) * resolution
    nearest = np.round(cum)
    cum = np.clip(np.where(np.abs(cum - nearest) < 1e-12, nearest, cum), 0, resolution)
    base = np.floor(cum).astype(int)
    frac = cum - base
    # 同率のときは大きい添字を先に動かす (単調性を保つ)
    order = sorted(range(dim), key=lambda k: (-frac[k], -k))
    fr = [1.0] + [float(frac[k]) for k in order] + [0.0]
    out = []
    current = base.copy()
    for step in range(dim + 1):
        if step > 0:
            current[order[step - 1]] += 1
        weight = fr[step] - fr[step + 1]
        if weight <= 0:
            continue
        nums = np.diff(np.concatenate(([0], current, [resolution])))
        out.append((tuple(int(k) for k in nums), weight))
    return out


def tabulated_field(dims: Sequence[int], resolution: int, table: np.ndarray, name: str = "file") -> ScoreField:
    """Piecewise-linear interpolation of lattice values, tensorized across factors.

    ``table`` has shape ``dims + (L_1, ..., L_r)`` where ``L_k`` is the number
    of lattice points of factor k in ``lattice_points`` order.
    """
    dims = tuple(dims)
    expected = dims + tuple(lattice_count(d - 1, resolution) for d in dims)
    table = np.asarray(table, dtype=float)
    if table.shape != expected:
        raise ValueError(f"score table has shape {table.shape}, expected {expected}")
    if np.any(table < 0):
        raise ValueError("score table has negative entries")
    indices = [lattice_index(d - 1, resolution) for d in dims]
    lead = (slice(None),) * len(dims)

    def evaluate(factors: Sequence[np.ndarray]) -> np.ndarray:
        per_factor = [
            [(idx[nums], w) for nums, w in kuhn_vertices(np.asarray(x, dtype=float), resolution)]
            for x, idx in zip(factors, indices)
        ]
        out = np.zeros(dims)
        for combo in itertools.product(*per_factor):
            weight = float(np.prod([w for _, w in combo]))
            out += weight * table[lead + tuple(k for k, _ in combo)]
        return out

    return ScoreField(dims=dims, evaluate=evaluate, name=name)
