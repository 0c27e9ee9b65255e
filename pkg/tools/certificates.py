"""Certificates: the solver output plus a verification block recomputed from scratch."""
import csv
import io
import logging
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional

import numpy as np

import settings
from errors import UnsupportedCertificate
from kkm_engine import BalancedTarget, marginal_residual, matching_bound, oracle_solve
from line_cutting import BoxFamily, CutFamily, HellyWitness, cuts_family, find_cut, find_witness, helly_check, witness_checks
from matching import QuotaVector, is_matching
from measure_partition import GridDensity, PartitionPair, cell_masses
from tools.io_utils import build_colored_covering, build_score_field, point_from_json

logger = logging.getLogger(__name__)

RESIDUAL_SLACK = 1e-12


def build_certificate(command: str, problem: Dict[str, Any], result: Dict[str, Any], seconds: float) -> Dict[str, Any]:
    return {
        "command": command,
        "outcome": result["outcome"],
        "alternative": result["alternative"],
        "problem": problem,
        "solution": result["solution"],
        "path": result.get("path"),
        "exit_code": result["exit_code"],
        "verification": {},
        "timing": {"seconds": round(seconds, 6)},
    }


# --- コマンド別の再検証 ---

def _sigma_checks(values: np.ndarray, sigma: List[int], a: QuotaVector) -> Dict[str, bool]:
    counts = tuple(sigma.count(i) for i in range(a.n))
    return {
        "quota_exact": len(sigma) == a.target and counts == a.a,
        "scores_positive_along_sigma": all(values[i, j] > 0 for j, i in enumerate(sigma)),
    }


def _residual_ok(values: np.ndarray, target: BalancedTarget, tolerance: float) -> bool:
    total = values.sum()
    if not total > 0:
        return False
    return marginal_residual(values / total, target.as_arrays()) <= tolerance + RESIDUAL_SLACK


def _verify_kkm(problem: Dict[str, Any], cert: Dict[str, Any]) -> Dict[str, bool]:
    n, m = problem["n"], problem["m"]
    field = build_score_field(
        {"kind": problem.get("score_kind", "canonical"), "seed": problem.get("seed", 0), "table": problem.get("table")},
        (n, m),
    )
    sol = cert["solution"]
    point = point_from_json(sol["point"])
    values = field.at(point)
    if cert["outcome"] == "not_covered":
        return {"point_valid": point.dims == (n, m), "all_scores_vanish": bool(np.all(values == 0))}
    a = QuotaVector.of(problem["quota"])
    checks = _sigma_checks(values, sol["sigma"], a)
    checks["residual_within_tolerance"] = _residual_ok(values, BalancedTarget.for_quota(a), sol["tolerance"])
    return checks


def _verify_kkm_r(problem: Dict[str, Any], cert: Dict[str, Any]) -> Dict[str, bool]:
    n, r = problem["n"], problem["r"]
    field = build_score_field({"kind": problem.get("score_kind", "canonical"), "seed": problem.get("seed", 0)}, (n,) * r)
    sol = cert["solution"]
    values = field.at(point_from_json(sol["point"]))
    if cert["outcome"] == "not_covered":
        return {"all_scores_vanish": bool(np.all(values == 0))}
    edges = [tuple(e) for e in sol["matching"]]
    return {
        "matching_disjoint": is_matching(edges),
        "matching_size_bound": len(edges) >= matching_bound(n, r),
        "scores_positive_on_matching": all(values[e] > 0 for e in edges),
        "residual_within_tolerance": _residual_ok(values, BalancedTarget.uniform(n, r), sol["tolerance"]),
    }


def _verify_colored(problem: Dict[str, Any], cert: Dict[str, Any]) -> Dict[str, bool]:
    n, m = problem["n"], problem["m"]
    colored = build_colored_covering({"kind": problem.get("score_kind", "canonical"), "seed": problem.get("seed", 0)}, n, m)
    sol = cert["solution"]
    point = point_from_json(sol["point"])
    base = np.asarray(colored.evaluate(point.factors[0].as_array()), dtype=float)
    if cert["outcome"] == "not_covered":
        return {"some_column_uncovered": bool(np.any(np.all(base <= 0, axis=0)))}
    return _sigma_checks(base, sol["sigma"], QuotaVector.of(problem["quota"]))


def _verify_square(problem: Dict[str, Any], cert: Dict[str, Any]) -> Dict[str, bool]:
    density = problem.get("density")
    d = GridDensity.uniform() if density is None else GridDensity.from_payload(density)
    c = problem["c"]
    eps = problem.get("eps")
    eps = settings.SQUARE_EPS_FACTOR * c if eps is None else eps
    checks: Dict[str, bool] = {}
    for k, outcome in enumerate(cert["solution"]["outcomes"]):
        pair = PartitionPair(x_cuts=[Fraction(v) for v in outcome["x_cuts"]], y_cuts=[Fraction(v) for v in outcome["y_cuts"]])
        masses = cell_masses(d, pair)
        checks[f"outcome_{k}_shape"] = masses.shape == (problem["n"], problem["m"])
        if outcome["kind"] == "all_below":
            checks[f"outcome_{k}_all_masses_below_c"] = bool(np.all(masses < c))
        else:
            a = QuotaVector.of(outcome["quota"])
            sigma = outcome["sigma"]
            checks[f"outcome_{k}_quota_exact"] = tuple(sigma.count(i) for i in range(a.n)) == a.a
            checks[f"outcome_{k}_quota_masses_at_least_c_minus_eps"] = all(
                masses[i, j] >= c - eps for j, i in enumerate(sigma)
            )
    return checks


def _cut_from_json(payload: Dict[str, Any]) -> CutFamily:
    return CutFamily(vertical=payload["vertical"], horizontal=payload["horizontal"])


def _verify_cut_lines(problem: Dict[str, Any], cert: Dict[str, Any]) -> Dict[str, bool]:
    fam = BoxFamily.from_payload(problem["family"])
    n, m = problem["n"], problem["m"]
    sol = cert["solution"]
    if sol["cut"] is not None:
        cut = _cut_from_json(sol["cut"])
        return {
            "every_member_cut": cuts_family(fam, cut),
            "line_budget": len(cut.vertical) <= n and len(cut.horizontal) <= m,
        }
    checks = {"no_cut_recomputed": find_cut(fam, n, m) is None}
    for key, w in sol["witnesses"].items():
        ok = w is not None and all(witness_checks(fam, HellyWitness(**w)).values())
        checks[f"witness_{key}"] = ok
    return checks


def _verify_witness(problem: Dict[str, Any], cert: Dict[str, Any]) -> Dict[str, bool]:
    fam = BoxFamily.from_payload(problem["family"])
    n, m = problem["n"], problem["m"]
    checks: Dict[str, bool] = {}
    cuts = cert["solution"].get("cuts", {})
    for key, w in cert["solution"]["witnesses"].items():
        if w is not None:
            checks[f"witness_{key}"] = all(witness_checks(fam, HellyWitness(**w)).values())
        elif key in cuts:
            cut = _cut_from_json(cuts[key])
            checks[f"cut_{key}"] = cuts_family(fam, cut) and len(cut.vertical) <= n and len(cut.horizontal) <= m
        else:
            a = [int(x) for x in key.split(",")]
            checks[f"none_{key}_recomputed"] = find_witness(fam, n, m, a) is None
    return checks


def _verify_helly(problem: Dict[str, Any], cert: Dict[str, Any]) -> Dict[str, bool]:
    fam = BoxFamily.from_payload(problem["family"])
    report = helly_check(fam, problem["n"], problem["m"])
    sol = cert["solution"]
    checks = {
        "premise_recomputed": report.premise == sol["premise"],
        "theorem_respected": report.theorem_respected,
    }
    if sol["conclusion"] is not None:
        checks["conclusion_cuts"] = cuts_family(fam, _cut_from_json(sol["conclusion"]))
    return checks


def _verify_oracle(problem: Dict[str, Any], cert: Dict[str, Any]) -> Dict[str, bool]:
    n, m = problem["n"], problem["m"]
    field = build_score_field(
        {"kind": problem.get("score_kind", "canonical"), "seed": problem.get("seed", 0), "table": problem.get("table")},
        (n, m),
    )
    a = QuotaVector.of(problem["quota"])
    sol = cert["solution"]
    if sol["point"] is None:
        return {"none_found_recomputed": oracle_solve(field, a, problem.get("resolution", 8)) is None}
    values = field.at(point_from_json(sol["point"]))
    checks = _sigma_checks(values, sol["sigma"], a)
    checks["min_score_matches"] = bool(abs(min(values[i, j] for j, i in enumerate(sol["sigma"])) - sol["min_score"]) <= 1e-12)
    return checks


_VERIFIERS: Dict[str, Callable[[Dict[str, Any], Dict[str, Any]], Dict[str, bool]]] = {
    "kkm": _verify_kkm,
    "kkm-r": _verify_kkm_r,
    "colored-kkm": _verify_colored,
    "square-partition": _verify_square,
    "cut-lines": _verify_cut_lines,
    "witness": _verify_witness,
    "helly-check": _verify_helly,
    "oracle": _verify_oracle,
}


def verify_certificate(certificate: Dict[str, Any], problem: Optional[Dict[str, Any]] = None) -> Dict[str, bool]:
    """Recompute every check of a certificate from its embedded problem."""
    command = certificate.get("command")
    verifier = _VERIFIERS.get(command)
    if verifier is None:
        raise UnsupportedCertificate(f"no verifier for command {command!r}")
    try:
        return verifier(problem if problem is not None else certificate["problem"], certificate)
    except (KeyError, TypeError, ValueError, IndexError) as e:
        logger.error(f"certificate for {command} could not be re-verified: {e}")
        return {"certificate_well_formed": False}


# --- プロット用 CSV ---

def emit_plot_data(certificate: Dict[str, Any]) -> str:
    """CSV rows (kind, group, index, v0..v3) with every position in full precision."""
    command = certificate.get("command")
    if command not in ("square-partition", "cut-lines"):
        raise UnsupportedCertificate(f"plot data exists for square-partition and cut-lines, not {command!r}")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["kind", "group", "index", "v0", "v1", "v2", "v3"])
    sol = certificate["solution"]
    if command == "square-partition":
        for g, outcome in enumerate(sol["outcomes"]):
            for k, c in enumerate(outcome["x_cuts"][1:-1]):
                writer.writerow(["x_cut", g, k, repr(float(Fraction(c)))])
            for k, c in enumerate(outcome["y_cuts"][1:-1]):
                writer.writerow(["y_cut", g, k, repr(float(Fraction(c)))])
        return buffer.getvalue()
    fam = BoxFamily.from_payload(certificate["problem"]["family"])
    for k, b in enumerate(fam.boxes):
        writer.writerow(["box", 0, k] + [repr(v) for v in b.as_list()])
    if sol.get("cut") is not None:
        for k, v in enumerate(sol["cut"]["vertical"]):
            writer.writerow(["vertical", 0, k, repr(float(v))])
        for k, h in enumerate(sol["cut"]["horizontal"]):
            writer.writerow(["horizontal", 0, k, repr(float(h))])
    return buffer.getvalue()


def read_plot_data(text: str) -> List[Dict[str, Any]]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        values = [float(row[f"v{i}"]) for i in range(4) if row.get(f"v{i}")]
        rows.append({"kind": row["kind"], "group": int(row["group"]), "index": int(row["index"]), "values": values})
    return rows
