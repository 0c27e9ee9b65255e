"""Cutting planar families by n vertical and m horizontal lines.

Members are reduced to their two projection intervals (``Box2``): an
axis-parallel line meets a connected set iff its coordinate lies in the
corresponding projection. Open families use open intervals, compact families
closed ones.
"""
import itertools
import json
import logging
from fractions import Fraction
from math import comb
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import settings
from errors import BudgetExceeded, NotCovered, SolverExhausted, TooLarge
from kkm_engine import solve_kkm_product
from matching import QuotaVector, quota_maps
from measure_partition import PartitionPair
from simplex_core import ScoreField, compositions

logger = logging.getLogger(__name__)

MAX_FAMILY = 30
MAX_LINES = 6
CUT_NODE_BUDGET = 2_000_000
WITNESS_LIMIT = 10_000_000
HELLY_LIMIT = 1_000_000
UNIT_PAD = 0.125


class Box2(BaseModel):
    model_config = ConfigDict(frozen=True)

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    @model_validator(mode="after")
    def check_nonempty(self) -> "Box2":
        values = (self.x_lo, self.x_hi, self.y_lo, self.y_hi)
        if not all(np.isfinite(values)):
            raise ValueError(f"box coordinates must be finite: {values}")
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise ValueError(f"box projections must be nonempty: {values}")
        return self

    def interval(self, axis: int) -> Tuple[float, float]:
        return (self.x_lo, self.x_hi) if axis == 0 else (self.y_lo, self.y_hi)

    def as_list(self) -> List[float]:
        return [self.x_lo, self.x_hi, self.y_lo, self.y_hi]


class SquareFrame(BaseModel):
    """Homothety p -> pad + (p - origin) * scale onto the unit square."""

    origin_x: float
    origin_y: float
    scale: float = Field(gt=0)
    pad: float = UNIT_PAD

    def to_unit(self, value: float, axis: int) -> float:
        origin = self.origin_x if axis == 0 else self.origin_y
        return self.pad + (value - origin) * self.scale

    def from_unit(self, value: Fraction, axis: int) -> float:
        origin = self.origin_x if axis == 0 else self.origin_y
        exact = (Fraction(value) - Fraction(self.pad)) / Fraction(self.scale) + Fraction(origin)
        return float(exact)


class BoxFamily(BaseModel):
    model_config = ConfigDict(frozen=True)

    boxes: Tuple[Box2, ...]
    open: bool = Field(default=True, description="False なら閉区間 (コンパクト集合)")

    @field_validator("boxes")
    @classmethod
    def check_nonempty_family(cls, v: Tuple[Box2, ...]) -> Tuple[Box2, ...]:
        if not v:
            raise ValueError("family must contain at least one set")
        return v

    def __len__(self) -> int:
        return len(self.boxes)

    @classmethod
    def of(cls, boxes: Sequence[Sequence[float]], open: bool = True) -> "BoxFamily":
        return cls(boxes=tuple(Box2(x_lo=b[0], x_hi=b[1], y_lo=b[2], y_hi=b[3]) for b in boxes), open=open)

    @classmethod
    def from_payload(cls, payload: dict) -> "BoxFamily":
        sets = payload.get("sets")
        if not isinstance(sets, list):
            raise ValueError("family payload needs a list under 'sets'")
        boxes = []
        for k, item in enumerate(sets):
            if not isinstance(item, dict):
                raise ValueError(f"set {k} must be an object with 'box' or 'polygon'")
            if "box" in item:
                coords = [float(c) for c in item["box"]]
                if len(coords) != 4:
                    raise ValueError(f"set {k}: box needs [x_lo, x_hi, y_lo, y_hi]")
                boxes.append(Box2(x_lo=coords[0], x_hi=coords[1], y_lo=coords[2], y_hi=coords[3]))
            elif "polygon" in item:
                boxes.append(_polygon_projections(item["polygon"], k))
            else:
                raise ValueError(f"set {k} must have 'box' or 'polygon'")
        flag = payload.get("open", True)
        if not isinstance(flag, bool):
            raise ValueError("'open' must be a boolean")
        return cls(boxes=tuple(boxes), open=flag)

    @classmethod
    def from_file(cls, path: str) -> "BoxFamily":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_payload(json.load(f))

    def to_payload(self) -> dict:
        return {"open": self.open, "sets": [{"box": b.as_list()} for b in self.boxes]}

    def subfamily(self, members: Sequence[int]) -> "BoxFamily":
        return BoxFamily(boxes=tuple(self.boxes[k] for k in members), open=self.open)

    def normalized_to_unit_square(self, pad: float = UNIT_PAD) -> Tuple["BoxFamily", SquareFrame]:
        x0 = min(b.x_lo for b in self.boxes)
        y0 = min(b.y_lo for b in self.boxes)
        extent = max(max(b.x_hi for b in self.boxes) - x0, max(b.y_hi for b in self.boxes) - y0)
        frame = SquareFrame(origin_x=x0, origin_y=y0, scale=(1.0 - 2 * pad) / extent, pad=pad)
        boxes = tuple(
            Box2(
                x_lo=frame.to_unit(b.x_lo, 0),
                x_hi=frame.to_unit(b.x_hi, 0),
                y_lo=frame.to_unit(b.y_lo, 1),
                y_hi=frame.to_unit(b.y_hi, 1),
            )
            for b in self.boxes
        )
        return BoxFamily(boxes=boxes, open=self.open), frame


def _orient(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> float:
    return float((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))


def _on_segment(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> bool:
    # r は p-q と同一直線上にあるとき
    return min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])


def _segments_meet(a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray) -> bool:
    o1, o2, o3, o4 = _orient(a, b, c), _orient(a, b, d), _orient(c, d, a), _orient(c, d, b)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True
    return (
        (o1 == 0 and _on_segment(a, b, c))
        or (o2 == 0 and _on_segment(a, b, d))
        or (o3 == 0 and _on_segment(c, d, a))
        or (o4 == 0 and _on_segment(c, d, b))
    )


def _is_simple(pts: np.ndarray) -> bool:
    """No two non-adjacent edges of the closed polygon meet."""
    count = len(pts)
    edges = [(pts[i], pts[(i + 1) % count]) for i in range(count)]
    for i, j in itertools.combinations(range(count), 2):
        if j == i + 1 or (i == 0 and j == count - 1):
            continue
        if _segments_meet(*edges[i], *edges[j]):
            return False
    return True


def _polygon_projections(points: Any, k: int) -> Box2:
    try:
        pts = np.asarray(points, dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"set {k}: polygon must be a list of [x, y] pairs")
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError(f"set {k}: polygon needs at least three [x, y] vertices")
    xs, ys = pts[:, 0], pts[:, 1]
    area = 0.5 * abs(float(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))))
    if not area > 0:
        raise ValueError(f"set {k}: polygon is degenerate")
    if not _is_simple(pts):
        raise ValueError(f"set {k}: polygon edges cross, only simple polygons are accepted")
    return Box2(x_lo=float(xs.min()), x_hi=float(xs.max()), y_lo=float(ys.min()), y_hi=float(ys.max()))


class CutFamily(BaseModel):
    model_config = ConfigDict(frozen=True)

    vertical: Tuple[float, ...] = Field(default_factory=tuple)
    horizontal: Tuple[float, ...] = Field(default_factory=tuple)

    @field_validator("vertical", "horizontal", mode="before")
    @classmethod
    def sort_unique(cls, v: Any) -> Tuple[float, ...]:
        return tuple(sorted({float(p) for p in v}))


class HellyWitness(BaseModel):
    model_config = ConfigDict(frozen=True)

    members: Tuple[int, ...]
    sigma: Tuple[int, ...]
    quota: Tuple[int, ...]
    source: str = Field(default="search", description="search または kkm")

    @model_validator(mode="after")
    def check_quota_shape(self) -> "HellyWitness":
        if len(self.sigma) != len(self.members):
            raise ValueError("one group label per member is required")
        if any(not 0 <= g < len(self.quota) for g in self.sigma):
            raise ValueError(f"group labels {self.sigma} outside 0..{len(self.quota) - 1}")
        counts = [0] * len(self.quota)
        for g in self.sigma:
            counts[g] += 1
        if tuple(counts) != self.quota:
            raise ValueError(f"group sizes {counts} differ from quota {self.quota}")
        return self


class CutPoint(BaseModel):
    pair: PartitionPair
    cut: CutFamily


class HellyReport(BaseModel):
    premise: bool
    violating: Optional[Tuple[int, ...]] = None
    conclusion: Optional[CutFamily] = None
    theorem_respected: bool
    subfamilies_checked: int = 0


# --- 基本判定 ---

def _inside(p: float, lo: float, hi: float, closed: bool) -> bool:
    return lo <= p <= hi if closed else lo < p < hi


def _disjoint(a: Tuple[float, float], b: Tuple[float, float], closed: bool) -> bool:
    if closed:
        return a[1] < b[0] or b[1] < a[0]
    return a[1] <= b[0] or b[1] <= a[0]


def is_cut(b: Box2, cut: CutFamily, closed: bool = False) -> bool:
    return any(_inside(v, b.x_lo, b.x_hi, closed) for v in cut.vertical) or any(
        _inside(h, b.y_lo, b.y_hi, closed) for h in cut.horizontal
    )


def cuts_family(family: BoxFamily, cut: CutFamily) -> bool:
    return all(is_cut(b, cut, not family.open) for b in family.boxes)


def canonical_positions(boxes: Union[BoxFamily, Sequence[Box2]], axis: int, closed: Optional[bool] = None) -> List[float]:
    """One position per elementary interval (open) or every endpoint (closed)."""
    if isinstance(boxes, BoxFamily):
        closed = (not boxes.open) if closed is None else closed
        boxes = boxes.boxes
    if not boxes:
        raise ValueError("canonical positions need a nonempty family")
    endpoints = sorted({p for b in boxes for p in b.interval(axis)})
    if closed:
        return endpoints
    return [(lo + hi) / 2 for lo, hi in zip(endpoints, endpoints[1:])]


class _Stabber:
    """Rightmost canonical position inside an interval, per axis."""

    def __init__(self, boxes: Sequence[Box2], axis: int, closed: bool):
        self.endpoints = sorted({p for b in boxes for p in b.interval(axis)})
        self.closed = closed

    def at(self, hi: float) -> float:
        if self.closed:
            return hi
        k = int(np.searchsorted(self.endpoints, hi, side="left"))
        return (self.endpoints[k - 1] + hi) / 2


def _greedy_horizontal(boxes: Sequence[Box2], stabber: _Stabber, closed: bool) -> List[float]:
    lines: List[float] = []
    for b in sorted(boxes, key=lambda b: (b.y_hi, b.y_lo)):
        if not any(_inside(h, b.y_lo, b.y_hi, closed) for h in lines):
            lines.append(stabber.at(b.y_hi))
    return lines


def find_cut(family: BoxFamily, n: int, m: int, node_budget: int = CUT_NODE_BUDGET) -> Optional[CutFamily]:
    """Exact search for n vertical and m horizontal lines cutting every member.

    Boxes are visited by right x-endpoint; each uncut box either receives a
    vertical line at its rightmost canonical position or is left to the
    horizontal side, which the right-endpoint sweep solves exactly.
    """
    if len(family) > MAX_FAMILY or n > MAX_LINES or m > MAX_LINES:
        raise BudgetExceeded(f"exact cut search needs |F| <= {MAX_FAMILY} and n, m <= {MAX_LINES}")
    if n < 0 or m < 0:
        raise ValueError("line budgets must be nonnegative")
    closed = not family.open
    order = sorted(family.boxes, key=lambda b: (b.x_hi, b.x_lo))
    x_stab = _Stabber(family.boxes, 0, closed)
    y_stab = _Stabber(family.boxes, 1, closed)
    nodes = 0

    def uncut(deferred: List[Box2], verticals: List[float]) -> List[Box2]:
        return [b for b in deferred if not any(_inside(v, b.x_lo, b.x_hi, closed) for v in verticals)]

    def search(k: int, verticals: List[float], deferred: List[Box2]) -> Optional[CutFamily]:
        nonlocal nodes
        nodes += 1
        if nodes > node_budget:
            raise BudgetExceeded(f"cut search exceeded {node_budget} nodes")
        while k < len(order) and any(_inside(v, order[k].x_lo, order[k].x_hi, closed) for v in verticals):
            k += 1
        if k == len(order):
            horizontal = _greedy_horizontal(uncut(deferred, verticals), y_stab, closed)
            if len(horizontal) <= m:
                return CutFamily(vertical=verticals, horizontal=horizontal)
            return None
        b = order[k]
        if len(verticals) < n:
            found = search(k + 1, verticals + [x_stab.at(b.x_hi)], deferred)
            if found is not None:
                return found
        later = deferred + [b]
        if len(_greedy_horizontal(uncut(later, verticals), y_stab, closed)) > m:
            return None
        return search(k + 1, verticals, later)

    cut = search(0, [], [])
    if cut is not None and not cuts_family(family, cut):
        raise RuntimeError(f"cut search returned a family that misses a member: {cut}")
    logger.debug(f"find_cut(n={n}, m={m}) on {len(family)} sets: {cut} after {nodes} nodes")
    return cut


def brute_force_cut(family: BoxFamily, n: int, m: int) -> Optional[CutFamily]:
    """Enumerate subsets of canonical positions (oracle for find_cut)."""
    xs = canonical_positions(family, 0)
    ys = canonical_positions(family, 1)
    for vertical in itertools.combinations(xs, min(n, len(xs))):
        for horizontal in itertools.combinations(ys, min(m, len(ys))):
            cut = CutFamily(vertical=vertical, horizontal=horizontal)
            if cuts_family(family, cut):
                return cut
    return None


# --- ヘリー型の証拠 ---

def witness_checks(family: BoxFamily, witness: HellyWitness) -> Dict[str, bool]:
    closed = not family.open
    boxes = [family.boxes[k] for k in witness.members]
    pairs = list(itertools.combinations(range(len(boxes)), 2))
    return {
        "distinct_members": len(set(witness.members)) == len(witness.members),
        "quota_exact": tuple(witness.sigma.count(g) for g in range(len(witness.quota))) == witness.quota,
        "y_pairwise_disjoint": all(_disjoint(boxes[i].interval(1), boxes[j].interval(1), closed) for i, j in pairs),
        "x_disjoint_across_groups": all(
            _disjoint(boxes[i].interval(0), boxes[j].interval(0), closed)
            for i, j in pairs
            if witness.sigma[i] != witness.sigma[j]
        ),
    }


def find_witness(family: BoxFamily, n: int, m: int, a: Sequence[int]) -> Optional[HellyWitness]:
    """Exhaustive search for an (m+1)-subfamily with the quota'd disjointness pattern."""
    quota = QuotaVector.of(a)
    if quota.n != n + 1 or quota.target != m + 1:
        raise ValueError(f"witness quota must split {m + 1} into {n + 1} parts, got {tuple(a)}")
    if comb(len(family), m + 1) * (n + 1) ** (m + 1) > WITNESS_LIMIT:
        raise TooLarge(f"witness search over C({len(family)}, {m + 1}) subfamilies is too large")
    closed = not family.open
    boxes = family.boxes
    for members in itertools.combinations(range(len(boxes)), m + 1):
        if not all(
            _disjoint(boxes[i].interval(1), boxes[j].interval(1), closed)
            for i, j in itertools.combinations(members, 2)
        ):
            continue
        for sigma in quota_maps(quota):
            if all(
                _disjoint(boxes[members[p]].interval(0), boxes[members[q]].interval(0), closed)
                for p, q in itertools.combinations(range(m + 1), 2)
                if sigma[p] != sigma[q]
            ):
                return HellyWitness(members=members, sigma=sigma, quota=quota.a)
    return None


def witnesses_for_all_quotas(family: BoxFamily, n: int, m: int) -> Dict[Tuple[int, ...], Optional[HellyWitness]]:
    return {a: find_witness(family, n, m, a) for a in compositions(m + 1, n + 1)}


def _endpoint_gap(family: BoxFamily) -> float:
    gaps = []
    for axis in (0, 1):
        ends = np.unique([p for b in family.boxes for p in b.interval(axis)])
        gaps.append(float(np.min(np.diff(ends))))
    return min(gaps)


def _margins(boxes: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """margins[k, i, j]: how far box k sits inside cell (i, j); negative when it sticks out."""
    left = boxes[:, 0, None, None] - xs[None, :-1, None]
    right = xs[None, 1:, None] - boxes[:, 1, None, None]
    bottom = boxes[:, 2, None, None] - ys[None, None, :-1]
    top = ys[None, None, 1:] - boxes[:, 3, None, None]
    return np.minimum(np.minimum(left, right), np.minimum(bottom, top))


def enclosure_scores(unit_family: BoxFamily, n: int, m: int, slack: float) -> ScoreField:
    """s_ij = max(0, max_X margin(X, cell ij) + slack) on (n+1) x (m+1) cells."""
    boxes = np.array([b.as_list() for b in unit_family.boxes])

    def evaluate(factors: Sequence[np.ndarray]) -> np.ndarray:
        x, y = factors
        xs = np.concatenate(([0.0], np.cumsum(x)))
        ys = np.concatenate(([0.0], np.cumsum(y)))
        return np.maximum(0.0, _margins(boxes, xs, ys).max(axis=0) + slack)

    return ScoreField(dims=(n + 1, m + 1), evaluate=evaluate, name="enclosure")


def witness_from_kkm(
    family: BoxFamily,
    n: int,
    m: int,
    a: Sequence[int],
    tol: Optional[float] = None,
    budget: Optional[int] = None,
) -> Union[HellyWitness, CutPoint]:
    """Witness read off a balanced partition pair, or the uncovered pair as a cut."""
    quota = QuotaVector.of(a)
    if quota.n != n + 1 or quota.target != m + 1:
        raise ValueError(f"witness quota must split {m + 1} into {n + 1} parts, got {tuple(a)}")
    unit, frame = family.normalized_to_unit_square()
    # 開集合: 境界に接するものも「内側」に数える。閉集合: 真に内側のみ
    slack = min(settings.LINE_SLACK, _endpoint_gap(unit) / 4) if family.open else 0.0
    scores = enclosure_scores(unit, n, m, slack)
    try:
        solution = solve_kkm_product(scores, quota, tol, budget)
    except NotCovered as e:
        pair = PartitionPair.from_point(e.point)
        cut = CutFamily(
            vertical=[frame.from_unit(c, 0) for c in pair.x_cuts[1:-1]],
            horizontal=[frame.from_unit(c, 1) for c in pair.y_cuts[1:-1]],
        )
        if not cuts_family(family, cut):
            raise SolverExhausted(f"uncovered partition {pair.to_strings()} does not cut the family")
        logger.info(f"witness_from_kkm: uncovered partition gives cut {cut}")
        return CutPoint(pair=pair, cut=cut)

    pair = PartitionPair.from_point(solution.point)
    xs, ys = pair.as_arrays()
    margins = _margins(np.array([b.as_list() for b in unit.boxes]), xs, ys)
    members = tuple(int(np.argmax(margins[:, i, j])) for j, i in enumerate(solution.assignment.sigma))
    witness = HellyWitness(members=members, sigma=solution.assignment.sigma, quota=quota.a, source="kkm")
    checks = witness_checks(family, witness)
    if not all(checks.values()):
        raise SolverExhausted(f"kkm witness failed re-verification: {checks}", residual=solution.residual)
    logger.info(f"witness_from_kkm: members {members}, sigma {witness.sigma}")
    return witness


def helly_check(family: BoxFamily, n: int, m: int) -> HellyReport:
    """Premise: every subfamily of size <= m+1 is cut by m horizontals alone or n verticals alone."""
    if not 1 <= n <= m:
        raise ValueError(f"the cutting statement needs 1 <= n <= m, got n={n}, m={m}")
    total = sum(comb(len(family), k) for k in range(1, min(m + 1, len(family)) + 1))
    if total > HELLY_LIMIT:
        raise TooLarge(f"{total} subfamilies exceed {HELLY_LIMIT}")
    premise = True
    violating = None
    checked = 0
    for size in range(1, min(m + 1, len(family)) + 1):
        for members in itertools.combinations(range(len(family)), size):
            checked += 1
            sub = family.subfamily(members)
            if find_cut(sub, 0, m) is None and find_cut(sub, n, 0) is None:
                premise, violating = False, members
                break
        if not premise:
            break
    conclusion = find_cut(family, n, m)
    respected = (not premise) or conclusion is not None
    if not respected:
        logger.error(f"helly check: premise holds but no cut with n={n}, m={m}")
    return HellyReport(
        premise=premise,
        violating=violating,
        conclusion=conclusion,
        theorem_respected=respected,
        subfamilies_checked=checked,
    )
