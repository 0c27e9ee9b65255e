import logging
from typing import Any, Dict, List, Literal, Optional

from langchain_core.tools import BaseTool, StructuredTool
from pydantic import BaseModel, Field, field_validator

from errors import NotCovered
from kkm_engine import oracle_solve, solve_colored_kkm, solve_kkm_product, solve_kkm_r
from line_cutting import (
    BoxFamily,
    CutPoint,
    HellyWitness,
    find_cut,
    find_witness,
    helly_check,
    witness_from_kkm,
    witnesses_for_all_quotas,
)
from matching import QuotaVector
from measure_partition import AllBelow, GridDensity, solve_all_quotas, solve_square_partition
from simplex_core import compositions
from tools.io_utils import build_colored_covering, build_score_field, point_to_json

logger = logging.getLogger(__name__)


# --- 入力スキーマ ---

class _SolverBudget(BaseModel):
    tol: Optional[float] = Field(default=None, gt=0, description="残差の許容値 (省略時は KKM_TOLERANCE)")
    budget: Optional[int] = Field(default=None, ge=0, description="細分化の回数 (省略時は KKM_BUDGET)")


class _QuotaArgs(BaseModel):
    n: int = Field(ge=1, le=12, description="行 (第1因子) の数")
    m: int = Field(ge=1, le=12, description="列 (第2因子) の数")
    quota: List[int] = Field(description="a_1..a_n, sum = m")

    @field_validator("quota")
    @classmethod
    def positive_quota(cls, v: List[int]) -> List[int]:
        if not v or any(x < 1 for x in v):
            raise ValueError(f"quotas must be positive integers, got {v}")
        return v


class KkmInput(_QuotaArgs, _SolverBudget):
    score_kind: Literal["canonical", "random", "table"] = Field(default="canonical")
    seed: int = Field(default=0)
    table: Optional[Dict[str, Any]] = Field(default=None, description="lattice score table payload")


class KkmRInput(_SolverBudget):
    n: int = Field(ge=1, le=6)
    r: int = Field(ge=2, le=4)
    score_kind: Literal["canonical", "random"] = Field(default="canonical")
    seed: int = Field(default=0)


class ColoredKkmInput(_QuotaArgs, _SolverBudget):
    score_kind: Literal["canonical", "random"] = Field(default="canonical")
    seed: int = Field(default=0)


class SquarePartitionInput(_SolverBudget):
    n: int = Field(ge=1, le=8)
    m: int = Field(ge=1, le=8)
    quota: Optional[List[int]] = Field(default=None, description="None なら全ての分割 m = a_1 + ... + a_n")
    c: float = Field(gt=0, le=1)
    eps: Optional[float] = Field(default=None, gt=0)
    density: Optional[Dict[str, Any]] = Field(default=None, description="None なら一様密度")


class FamilyInput(BaseModel):
    n: int = Field(ge=0, le=6)
    m: int = Field(ge=0, le=6)
    family: Dict[str, Any]


class WitnessInput(FamilyInput, _SolverBudget):
    quota: Optional[List[int]] = Field(default=None, description="n+1 parts of m+1; None for all")
    method: Literal["search", "kkm"] = Field(default="search")


class OracleInput(_QuotaArgs):
    score_kind: Literal["canonical", "random", "table"] = Field(default="canonical")
    seed: int = Field(default=0)
    table: Optional[Dict[str, Any]] = None
    resolution: int = Field(default=8, ge=1)


# --- 結果の整形 ---

def _result(outcome: str, alternative: str, exit_code: int, solution: Dict[str, Any], path: str) -> Dict[str, Any]:
    return {"outcome": outcome, "alternative": alternative, "exit_code": exit_code, "solution": solution, "path": path}


def _score_spec(score_kind: str, seed: int, table: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {"kind": score_kind, "seed": seed, "table": table}


def _witness_json(w: Optional[HellyWitness]) -> Optional[Dict[str, Any]]:
    return None if w is None else w.model_dump(mode="json")


def _cut_json(cut) -> Optional[Dict[str, Any]]:
    return None if cut is None else {"vertical": list(cut.vertical), "horizontal": list(cut.horizontal)}


def _quota_key(a) -> str:
    return ",".join(str(x) for x in a)


# --- ツール本体 ---

def run_kkm(n: int, m: int, quota: List[int], score_kind: str = "canonical", seed: int = 0,
            table: Optional[Dict[str, Any]] = None, tol: Optional[float] = None,
            budget: Optional[int] = None) -> Dict[str, Any]:
    a = QuotaVector.of(quota)
    if (a.n, a.target) != (n, m):
        raise ValueError(f"quota {quota} must have n={n} parts summing to m={m}")
    field = build_score_field(_score_spec(score_kind, seed, table), (n, m))
    try:
        sol = solve_kkm_product(field, a, tol, budget)
    except NotCovered as e:
        return _result("not_covered", "uncovered_point", 1, {"point": point_to_json(e.point)}, "balanced_search")
    return _result(
        "solved",
        "intersection",
        0,
        {
            "point": point_to_json(sol.point),
            "sigma": list(sol.assignment.sigma),
            "residual": sol.residual,
            "tolerance": sol.tolerance,
            "depth": sol.depth,
            "delta": sol.delta,
        },
        "balanced_search",
    )


def run_kkm_r(n: int, r: int, score_kind: str = "canonical", seed: int = 0,
              tol: Optional[float] = None, budget: Optional[int] = None) -> Dict[str, Any]:
    field = build_score_field(_score_spec(score_kind, seed), (n,) * r)
    try:
        sol = solve_kkm_r(field, tol, budget)
    except NotCovered as e:
        return _result("not_covered", "uncovered_point", 1, {"point": point_to_json(e.point)}, "balanced_search")
    return _result(
        "solved",
        "matching",
        0,
        {
            "point": point_to_json(sol.point),
            "matching": [list(e) for e in sol.matching.edges],
            "residual": sol.residual,
            "tolerance": sol.tolerance,
            "depth": sol.depth,
            "delta": sol.delta,
        },
        "balanced_search",
    )


def run_colored_kkm(n: int, m: int, quota: List[int], score_kind: str = "canonical", seed: int = 0,
                    tol: Optional[float] = None, budget: Optional[int] = None) -> Dict[str, Any]:
    a = QuotaVector.of(quota)
    if (a.n, a.target) != (n, m):
        raise ValueError(f"quota {quota} must have n={n} parts summing to m={m}")
    colored = build_colored_covering(_score_spec(score_kind, seed), n, m)
    try:
        sol = solve_colored_kkm(colored, a, tol, budget)
    except NotCovered as e:
        return _result("not_covered", "uncovered_point", 1, {"point": point_to_json(e.point)}, "lifted_search")
    return _result(
        "solved",
        "colored_intersection",
        0,
        {
            "point": point_to_json(sol.point),
            "sigma": list(sol.assignment.sigma),
            "residual": sol.residual,
            "tolerance": sol.tolerance,
            "depth": sol.depth,
        },
        "lifted_search",
    )


def _density(payload: Optional[Dict[str, Any]]) -> GridDensity:
    return GridDensity.uniform() if payload is None else GridDensity.from_payload(payload)


def _square_json(outcome) -> Dict[str, Any]:
    base = {"kind": outcome.kind, **outcome.pair.to_strings(), "masses": outcome.masses}
    if isinstance(outcome, AllBelow):
        return base
    return {**base, "quota": list(outcome.quota.a), "sigma": list(outcome.assignment.sigma),
            "min_mass": outcome.min_mass, "residual": outcome.residual}


def run_square_partition(n: int, m: int, c: float, quota: Optional[List[int]] = None,
                         eps: Optional[float] = None, density: Optional[Dict[str, Any]] = None,
                         tol: Optional[float] = None, budget: Optional[int] = None) -> Dict[str, Any]:
    d = _density(density)
    if quota is None:
        outcomes = solve_all_quotas(d, c, n, m, eps, tol, budget)
    else:
        outcomes = [solve_square_partition(d, c, n, m, QuotaVector.of(quota), eps, tol, budget)]
    below = isinstance(outcomes[-1], AllBelow)
    return _result(
        "all_below" if below else "quota",
        "all_cells_below_c" if below else "quota_rectangles",
        0 if below else 1,
        {"outcomes": [_square_json(o) for o in outcomes]},
        "threshold_kkm",
    )


def run_cut_lines(n: int, m: int, family: Dict[str, Any]) -> Dict[str, Any]:
    fam = BoxFamily.from_payload(family)
    cut = find_cut(fam, n, m)
    if cut is not None:
        return _result("cut", "cut", 0, {"cut": _cut_json(cut)}, "branch_and_bound")
    witnesses = witnesses_for_all_quotas(fam, n, m)
    return _result(
        "none_exists",
        "helly_witnesses",
        1,
        {"cut": None, "witnesses": {_quota_key(a): _witness_json(w) for a, w in witnesses.items()}},
        "branch_and_bound",
    )


def run_witness(n: int, m: int, family: Dict[str, Any], quota: Optional[List[int]] = None,
                method: str = "search", tol: Optional[float] = None,
                budget: Optional[int] = None) -> Dict[str, Any]:
    fam = BoxFamily.from_payload(family)
    quotas = [tuple(quota)] if quota is not None else list(compositions(m + 1, n + 1))
    found: Dict[str, Any] = {}
    cuts: Dict[str, Any] = {}
    for a in quotas:
        if method == "kkm":
            result = witness_from_kkm(fam, n, m, a, tol, budget)
            if isinstance(result, CutPoint):
                cuts[_quota_key(a)] = {**_cut_json(result.cut), **result.pair.to_strings()}
                found[_quota_key(a)] = None
                continue
            found[_quota_key(a)] = _witness_json(result)
        else:
            found[_quota_key(a)] = _witness_json(find_witness(fam, n, m, a))
    complete = all(w is not None for w in found.values())
    solution: Dict[str, Any] = {"witnesses": found}
    if cuts:
        solution["cuts"] = cuts
    return _result(
        "witness" if complete else ("cut" if cuts else "none_found"),
        "helly_witness" if complete else "no_witness",
        0 if complete else 1,
        solution,
        "kkm_enclosure" if method == "kkm" else "exhaustive",
    )


def run_helly_check(n: int, m: int, family: Dict[str, Any]) -> Dict[str, Any]:
    fam = BoxFamily.from_payload(family)
    report = helly_check(fam, n, m)
    if not report.theorem_respected:
        code, outcome = 2, "violated"
    elif report.premise:
        code, outcome = 0, "premise_holds"
    else:
        code, outcome = 1, "premise_fails"
    return _result(
        outcome,
        "cut" if report.conclusion is not None else "no_cut",
        code,
        {
            "premise": report.premise,
            "violating": None if report.violating is None else list(report.violating),
            "conclusion": _cut_json(report.conclusion),
            "theorem_respected": report.theorem_respected,
            "subfamilies_checked": report.subfamilies_checked,
        },
        "exhaustive",
    )


def run_oracle(n: int, m: int, quota: List[int], score_kind: str = "canonical", seed: int = 0,
               table: Optional[Dict[str, Any]] = None, resolution: int = 8) -> Dict[str, Any]:
    a = QuotaVector.of(quota)
    if (a.n, a.target) != (n, m):
        raise ValueError(f"quota {quota} must have n={n} parts summing to m={m}")
    field = build_score_field(_score_spec(score_kind, seed, table), (n, m))
    best = oracle_solve(field, a, resolution)
    if best is None:
        return _result("none_found", "none_found", 1, {"point": None, "sigma": None}, "exhaustive")
    return _result(
        "found",
        "intersection",
        0,
        {"point": point_to_json(best.point), "sigma": list(best.assignment.sigma), "min_score": best.min_score},
        "exhaustive",
    )


def create_solver_tools() -> List[BaseTool]:
    """サブコマンド名をツール名とする StructuredTool の一覧を作る。"""
    specs = [
        ("kkm", run_kkm, KkmInput, "Quota intersection for a covering of a product of two simplices."),
        ("kkm-r", run_kkm_r, KkmRInput, "Large matching for a covering of a product of r simplices."),
        ("colored-kkm", run_colored_kkm, ColoredKkmInput, "Colored covering of one simplex via the product lift."),
        ("square-partition", run_square_partition, SquarePartitionInput, "Partition the unit square against a mass threshold."),
        ("cut-lines", run_cut_lines, FamilyInput, "Cut a planar family by n vertical and m horizontal lines."),
        ("witness", run_witness, WitnessInput, "Find disjointness witnesses obstructing a cut."),
        ("helly-check", run_helly_check, FamilyInput, "Check the Helly-type cutting statement on a family."),
        ("oracle", run_oracle, OracleInput, "Brute-force quota intersection on a lattice."),
    ]
    return [
        StructuredTool.from_function(func=func, name=name, description=description, args_schema=schema)
        for name, func, schema, description in specs
    ]
