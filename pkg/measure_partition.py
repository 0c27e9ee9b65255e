"""Partitions of the unit square by axis-parallel cuts against a threshold c.

Either every rectangle I_i x J_j of some partition pair has mass below c, or
for the given quotas there is a pair and sigma with mass(I_sigma(j) x J_j) >= c
(up to the relaxation eps).
"""
import json
import logging
from fractions import Fraction
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator
from scipy.interpolate import RegularGridInterpolator

import settings
from errors import NotCovered, OutOfRange, SolverExhausted
from kkm_engine import solve_kkm_product
from matching import Assignment, QuotaVector
from simplex_core import ProductPoint, ScoreField, compositions

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-9
NORMALIZATION_WARNING = 1e-6


class GridDensity(BaseModel):
    """Piecewise-constant probability density; ``density[ix, iy]`` per unit area."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kx: int = Field(ge=1)
    ky: int = Field(ge=1)
    density: np.ndarray
    _corner: RegularGridInterpolator = PrivateAttr()

    @field_validator("density", mode="before")
    @classmethod
    def as_float_array(cls, v: Any) -> np.ndarray:
        return np.asarray(v, dtype=float)

    @model_validator(mode="after")
    def check_probability(self) -> "GridDensity":
        if self.density.shape != (self.kx, self.ky):
            raise ValueError(f"density has shape {self.density.shape}, expected {(self.kx, self.ky)}")
        if not np.all(np.isfinite(self.density)) or np.any(self.density < 0):
            raise ValueError("density values must be finite and nonnegative")
        if abs(float(self.density.mean()) - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"density has total mass {self.density.mean()!r}, use GridDensity.normalized")
        return self

    def model_post_init(self, __context: Any) -> None:
        # 格子点での累積質量 F(x, y) = mu([0,x] x [0,y]); セル内で双線形なので線形補間が厳密
        cells = self.density / (self.kx * self.ky)
        corner = np.zeros((self.kx + 1, self.ky + 1))
        corner[1:, 1:] = np.cumsum(np.cumsum(cells, axis=0), axis=1)
        grid = (np.linspace(0.0, 1.0, self.kx + 1), np.linspace(0.0, 1.0, self.ky + 1))
        self._corner = RegularGridInterpolator(grid, corner, method="linear")

    @classmethod
    def normalized(cls, kx: int, ky: int, density: Any) -> "GridDensity":
        values = np.asarray(density, dtype=float).reshape(kx, ky)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite and nonnegative")
        mass = float(values.mean())
        if not mass > 0:
            raise ValueError("density has zero total mass")
        if abs(mass - 1.0) > NORMALIZATION_WARNING:
            logger.warning(f"density mass is {mass:.6g}, normalizing to 1")
        return cls(kx=kx, ky=ky, density=values / mass)

    @classmethod
    def uniform(cls) -> "GridDensity":
        return cls(kx=1, ky=1, density=np.ones((1, 1)))

    @classmethod
    def from_payload(cls, payload: dict) -> "GridDensity":
        try:
            kx, ky = int(payload["kx"]), int(payload["ky"])
            values = np.asarray(payload["values"], dtype=float)
        except (KeyError, TypeError) as e:
            raise ValueError(f"density payload needs kx, ky and values: {e}")
        if kx < 1 or ky < 1 or values.shape != (kx * ky,):
            raise ValueError(f"density values must be a flat list of {kx}*{ky} numbers")
        # 行優先: values[iy * kx + ix]
        return cls.normalized(kx, ky, values.reshape(ky, kx).T)

    @classmethod
    def from_file(cls, path: str) -> "GridDensity":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_payload(json.load(f))

    def to_payload(self) -> dict:
        return {"kx": self.kx, "ky": self.ky, "values": self.density.T.reshape(-1).tolist()}

    def corner_mass(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """F on the mesh xs x ys, shape (len(xs), len(ys))."""
        X, Y = np.meshgrid(np.clip(xs, 0.0, 1.0), np.clip(ys, 0.0, 1.0), indexing="ij")
        return self._corner(np.stack([X, Y], axis=-1))


class PartitionPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    x_cuts: Tuple[Fraction, ...]
    y_cuts: Tuple[Fraction, ...]

    @field_validator("x_cuts", "y_cuts", mode="before")
    @classmethod
    def coerce_fractions(cls, v: Any) -> Tuple[Fraction, ...]:
        return tuple(c if isinstance(c, Fraction) else Fraction(c) for c in v)

    @field_validator("x_cuts", "y_cuts")
    @classmethod
    def check_monotone(cls, v: Tuple[Fraction, ...]) -> Tuple[Fraction, ...]:
        if len(v) < 2 or v[0] != 0 or v[-1] != 1:
            raise ValueError(f"cuts must run from 0 to 1, got {[str(c) for c in v]}")
        if any(b < a for a, b in zip(v, v[1:])):
            raise ValueError(f"cuts must be monotone, got {[str(c) for c in v]}")
        return v

    @classmethod
    def from_point(cls, p: ProductPoint) -> "PartitionPair":
        x, y = p.factors
        return cls(x_cuts=_cumulative(x.coords), y_cuts=_cumulative(y.coords))

    @property
    def n(self) -> int:
        return len(self.x_cuts) - 1

    @property
    def m(self) -> int:
        return len(self.y_cuts) - 1

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array([float(c) for c in self.x_cuts]), np.array([float(c) for c in self.y_cuts])

    def to_strings(self) -> dict:
        return {"x_cuts": [str(c) for c in self.x_cuts], "y_cuts": [str(c) for c in self.y_cuts]}


def _cumulative(lengths: Sequence[Fraction]) -> Tuple[Fraction, ...]:
    out = [Fraction(0)]
    for t in lengths:
        out.append(out[-1] + t)
    return tuple(out)


class AllBelow(BaseModel):
    kind: str = "all_below"
    pair: PartitionPair
    masses: List[List[float]]


class QuotaOutcome(BaseModel):
    kind: str = "quota"
    pair: PartitionPair
    quota: QuotaVector
    assignment: Assignment
    min_mass: float
    masses: List[List[float]]
    residual: float = 0.0


SquareOutcome = Union[AllBelow, QuotaOutcome]


def rectangle_mass(d: GridDensity, x_lo: float, x_hi: float, y_lo: float, y_hi: float) -> float:
    if not (0 <= x_lo <= x_hi <= 1 and 0 <= y_lo <= y_hi <= 1):
        raise OutOfRange(f"rectangle [{x_lo}, {x_hi}] x [{y_lo}, {y_hi}] is not inside the unit square")
    F = d.corner_mass(np.array([x_lo, x_hi], dtype=float), np.array([y_lo, y_hi], dtype=float))
    return float(F[1, 1] - F[0, 1] - F[1, 0] + F[0, 0])


def _masses_from_cuts(d: GridDensity, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return np.diff(np.diff(d.corner_mass(xs, ys), axis=0), axis=1)


def cell_masses(d: GridDensity, pair: PartitionPair) -> np.ndarray:
    """n x m array of mu(I_i x J_j)."""
    return _masses_from_cuts(d, *pair.as_arrays())


def build_threshold_scores(d: GridDensity, c: float, eps: float, n: int, m: int) -> ScoreField:
    """s_ij = max(0, mu(I_i x J_j) - (c - eps)) on segment-length coordinates."""
    if not c > 0:
        raise ValueError(f"threshold must be positive, got {c}")
    if not 0 < eps < c:
        raise ValueError(f"relaxation must satisfy 0 < eps < c, got eps={eps}")
    level = c - eps

    def evaluate(factors: Sequence[np.ndarray]) -> np.ndarray:
        x, y = factors
        xs = np.concatenate(([0.0], np.cumsum(x)))
        ys = np.concatenate(([0.0], np.cumsum(y)))
        masses = _masses_from_cuts(d, xs, ys)
        return np.maximum(0.0, masses - level)

    return ScoreField(dims=(n, m), evaluate=evaluate, name=f"threshold[c={c:g}]")


def solve_square_partition(
    d: GridDensity,
    c: float,
    n: int,
    m: int,
    a: QuotaVector,
    eps: Optional[float] = None,
    tol: Optional[float] = None,
    budget: Optional[int] = None,
) -> SquareOutcome:
    if n > m:
        raise ValueError(f"partition needs n <= m, got n={n}, m={m}")
    if a.n != n or a.target != m:
        raise ValueError(f"quota {a} does not fit n={n}, m={m}")
    eps = settings.SQUARE_EPS_FACTOR * c if eps is None else eps
    scores = build_threshold_scores(d, c, eps, n, m)
    try:
        solution = solve_kkm_product(scores, a, tol, budget)
    except NotCovered as e:
        pair = PartitionPair.from_point(e.point)
        masses = cell_masses(d, pair)
        if not np.all(masses < c):
            raise SolverExhausted(f"uncovered partition has a cell of mass {masses.max():.6g} >= {c}")
        logger.info(f"square partition: all {n}x{m} masses below {c} at {pair.to_strings()}")
        return AllBelow(pair=pair, masses=masses.tolist())

    pair = PartitionPair.from_point(solution.point)
    masses = cell_masses(d, pair)
    sigma = solution.assignment.sigma
    min_mass = float(min(masses[i, j] for j, i in enumerate(sigma)))
    if min_mass < c - eps:
        raise SolverExhausted(f"quota rectangles reach only {min_mass:.6g} < {c - eps:.6g}", residual=solution.residual)
    logger.info(f"square partition: sigma={sigma}, min mass {min_mass:.6g}")
    return QuotaOutcome(
        pair=pair,
        quota=a,
        assignment=solution.assignment,
        min_mass=min_mass,
        masses=masses.tolist(),
        residual=solution.residual,
    )


def solve_all_quotas(
    d: GridDensity,
    c: float,
    n: int,
    m: int,
    eps: Optional[float] = None,
    tol: Optional[float] = None,
    budget: Optional[int] = None,
) -> List[SquareOutcome]:
    """One outcome per quota vector; stops at the first AllBelow, which answers every quota."""
    outcomes: List[SquareOutcome] = []
    for a in compositions(m, n):
        outcome = solve_square_partition(d, c, n, m, QuotaVector.of(a), eps, tol, budget)
        outcomes.append(outcome)
        if isinstance(outcome, AllBelow):
            break
    return outcomes
