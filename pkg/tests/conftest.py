import json

import numpy as np
import pytest

from line_cutting import BoxFamily
from simplex_core import ScoreField


def random_family(rng: np.random.Generator, size: int, span: float = 10.0) -> BoxFamily:
    boxes = []
    for _ in range(size):
        x_lo, y_lo = rng.uniform(0.0, span, size=2)
        w, h = rng.uniform(0.5, span / 3, size=2)
        boxes.append((x_lo, x_lo + w, y_lo, y_lo + h))
    return BoxFamily.of(boxes)


def diagonal_field() -> ScoreField:
    """Scores only on the diagonal pairs of Δ^1 x Δ^1."""

    def evaluate(factors):
        x, y = factors
        return np.diag(x * y)

    return ScoreField(dims=(2, 2), evaluate=evaluate, name="diagonal")


@pytest.fixture
def diag3() -> BoxFamily:
    return BoxFamily.of([(0, 1, 0, 1), (2, 3, 2, 3), (4, 5, 4, 5)])


@pytest.fixture
def stacked3() -> BoxFamily:
    return BoxFamily.of([(0, 1, 0, 1), (0, 1, 2, 3), (0, 1, 4, 5)])


@pytest.fixture
def write_json(tmp_path):
    def _write(name: str, payload) -> str:
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return str(path)

    return _write
