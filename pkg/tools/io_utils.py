import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from kkm_engine import ColoredCovering, canonical_colored_covering, random_colored_covering
from simplex_core import (
    ProductPoint,
    ScoreField,
    canonical_field,
    check_cover_conditions,
    lattice_count,
    random_smooth_field,
    tabulated_field,
)

logger = logging.getLogger(__name__)


def load_json_file(path: str) -> Any:
    """JSON ファイルを読み込む。失敗時はログを残して ValueError にする。"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        logger.error(f"input file not found: {path}")
        raise ValueError(f"input file not found: {path}")
    except json.JSONDecodeError as e:
        logger.error(f"malformed JSON in {path}: {e}")
        raise ValueError(f"malformed JSON in {path}: {e}")


def write_output(text: str, out_path: Optional[str] = None) -> None:
    if out_path is None:
        print(text)
        return
    directory = os.path.dirname(out_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(text)
        if not text.endswith("\n"):
            f.write("\n")
    logger.info(f"wrote {out_path}")


def point_to_json(point: ProductPoint) -> List[List[str]]:
    return point.to_strings()


def point_from_json(payload: Any) -> ProductPoint:
    if not isinstance(payload, list) or not all(isinstance(f, list) for f in payload):
        raise ValueError("a point must be a list of factors, each a list of rationals")
    return ProductPoint.from_strings(payload)


def _finite_list(values: Any, where: str) -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"{where}: values must be numbers")
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ValueError(f"{where}: values must be a flat list of finite numbers")
    return arr


def parse_score_table(payload: Dict[str, Any]) -> ScoreField:
    """{"n", "m", "lattice_resolution", "values": {"i,j": [...]}} -> tabulated ScoreField.

    Each list runs over the product lattice (first factor outer) in
    ``lattice_points`` order; pairs that are absent score zero everywhere.
    """
    try:
        n, m = int(payload["n"]), int(payload["m"])
        resolution = int(payload["lattice_resolution"])
        values = payload["values"]
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"score table needs n, m, lattice_resolution and values: {e}")
    if n < 1 or m < 1 or resolution < 1 or not isinstance(values, dict):
        raise ValueError("score table dimensions must be positive and values an object")
    shape = (lattice_count(n - 1, resolution), lattice_count(m - 1, resolution))
    table = np.zeros((n, m) + shape)
    for key, entries in values.items():
        try:
            i, j = (int(part) for part in key.split(","))
        except ValueError:
            raise ValueError(f"score table key {key!r} is not 'i,j'")
        if not (0 <= i < n and 0 <= j < m):
            raise ValueError(f"score table key {key!r} outside {n}x{m}")
        arr = _finite_list(entries, f"score table entry {key}")
        if arr.size != shape[0] * shape[1]:
            raise ValueError(f"score table entry {key} needs {shape[0] * shape[1]} values, got {arr.size}")
        table[i, j] = arr.reshape(shape)
    field = tabulated_field((n, m), resolution, table, name="table")
    report = check_cover_conditions(field, resolution)
    if not report.boundary_ok:
        raise ValueError(f"score table is nonzero on forbidden faces at {report.boundary_violations} places")
    return field


def build_score_field(spec: Dict[str, Any], dims: Sequence[int]) -> ScoreField:
    kind = spec.get("kind", "canonical")
    if kind == "canonical":
        return canonical_field(dims)
    if kind == "random":
        return random_smooth_field(dims, int(spec.get("seed", 0)))
    if kind == "table":
        field = parse_score_table(spec.get("table") or {})
        if field.dims != tuple(dims):
            raise ValueError(f"score table is {field.dims}, problem needs {tuple(dims)}")
        return field
    raise ValueError(f"unknown score field kind {kind!r}")


def build_colored_covering(spec: Dict[str, Any], n: int, m: int) -> ColoredCovering:
    kind = spec.get("kind", "canonical")
    if kind == "canonical":
        return canonical_colored_covering(n, m)
    if kind == "random":
        return random_colored_covering(n, m, int(spec.get("seed", 0)))
    raise ValueError(f"colored coverings are 'canonical' or 'random', got {kind!r}")
