import logging
from fractions import Fraction

import numpy as np
import pytest

from errors import OutOfRange
from matching import QuotaVector
from measure_partition import (
    AllBelow,
    GridDensity,
    PartitionPair,
    QuotaOutcome,
    build_threshold_scores,
    cell_masses,
    rectangle_mass,
    solve_all_quotas,
    solve_square_partition,
)
from simplex_core import ProductPoint, check_continuity, compositions

HALF = Fraction(1, 2)


def random_density(seed: int, kx: int = 4, ky: int = 3) -> GridDensity:
    rng = np.random.default_rng(seed)
    return GridDensity.normalized(kx, ky, rng.uniform(0.1, 2.0, size=(kx, ky)))


class TestGridDensity:
    def test_uniform_quarter(self):
        assert rectangle_mass(GridDensity.uniform(), 0, 0.5, 0, 0.5) == pytest.approx(0.25, abs=1e-12)

    def test_whole_square_has_unit_mass(self):
        assert rectangle_mass(random_density(1), 0, 1, 0, 1) == pytest.approx(1.0, abs=1e-9)

    def test_zero_width(self):
        assert rectangle_mass(random_density(2), 0.3, 0.3, 0, 1) == pytest.approx(0.0, abs=1e-15)

    def test_outside_unit_square(self):
        with pytest.raises(OutOfRange):
            rectangle_mass(GridDensity.uniform(), 0, 1.5, 0, 1)

    def test_mass_is_additive(self):
        d = random_density(3)
        rng = np.random.default_rng(4)
        for _ in range(20):
            x0, x1, x2 = np.sort(rng.uniform(0, 1, 3))
            y0, y1 = np.sort(rng.uniform(0, 1, 2))
            whole = rectangle_mass(d, x0, x2, y0, y1)
            parts = rectangle_mass(d, x0, x1, y0, y1) + rectangle_mass(d, x1, x2, y0, y1)
            assert whole == pytest.approx(parts, abs=1e-12)

    def test_payload_is_row_major(self, caplog):
        with caplog.at_level(logging.WARNING):
            d = GridDensity.from_payload({"kx": 2, "ky": 1, "values": [1, 3]})
        assert "normalizing" in caplog.text
        np.testing.assert_allclose(d.density[:, 0], [0.5, 1.5])
        assert rectangle_mass(d, 0, 0.5, 0, 1) == pytest.approx(0.25)
        assert GridDensity.from_payload(d.to_payload()).density == pytest.approx(d.density)

    @pytest.mark.parametrize(
        "payload",
        [
            {"kx": 2, "ky": 2, "values": [1, 1, 1]},
            {"kx": 1, "ky": 1, "values": [-1]},
            {"kx": 1, "ky": 1, "values": [0]},
            {"ky": 1, "values": [1]},
        ],
    )
    def test_bad_payloads(self, payload):
        with pytest.raises(ValueError):
            GridDensity.from_payload(payload)

    def test_from_file(self, write_json):
        d = GridDensity.from_file(write_json("density.json", {"kx": 1, "ky": 1, "values": [1]}))
        assert rectangle_mass(d, 0, 0.5, 0, 0.5) == pytest.approx(0.25)

    def test_cell_masses_sum_to_one(self):
        pair = PartitionPair(x_cuts=[0, Fraction(1, 3), 1], y_cuts=[0, Fraction(1, 4), Fraction(3, 4), 1])
        masses = cell_masses(random_density(5), pair)
        assert masses.shape == (2, 3)
        assert masses.sum() == pytest.approx(1.0)


class TestPartitionPair:
    def test_from_point(self):
        p = ProductPoint.from_strings([["1/4", "3/4"], ["1/2", "0", "1/2"]])
        pair = PartitionPair.from_point(p)
        assert pair.x_cuts == (0, Fraction(1, 4), 1)
        assert pair.y_cuts == (0, HALF, HALF, 1)
        assert (pair.n, pair.m) == (2, 3)

    def test_rejects_non_monotone_cuts(self):
        with pytest.raises(ValueError):
            PartitionPair(x_cuts=[0, Fraction(3, 4), HALF, 1], y_cuts=[0, 1])


class TestThresholdScores:
    def test_equal_partition_just_above_level(self):
        s = build_threshold_scores(GridDensity.uniform(), 1 / 8, 1e-6, 2, 4)
        values = s.scores([np.full(2, 0.5), np.full(4, 0.25)])
        np.testing.assert_allclose(values, np.full((2, 4), 1e-6), atol=1e-15)

    def test_high_threshold_gives_zero(self):
        s = build_threshold_scores(GridDensity.uniform(), 0.5, 1e-6, 2, 2)
        assert np.all(s.scores([np.full(2, 0.5), np.full(2, 0.5)]) == 0)

    def test_degenerate_segment_has_zero_row(self):
        s = build_threshold_scores(GridDensity.uniform(), 0.1, 1e-3, 2, 2)
        values = s.scores([np.array([0.0, 1.0]), np.array([0.5, 0.5])])
        assert np.all(values[0] == 0)
        assert np.all(values[1] > 0)

    @pytest.mark.parametrize("c,eps", [(0.0, 0.0), (0.1, 0.0), (0.1, 0.1)])
    def test_rejects_bad_relaxation(self, c, eps):
        with pytest.raises(ValueError):
            build_threshold_scores(GridDensity.uniform(), c, eps, 2, 2)

    @pytest.mark.parametrize("density", [GridDensity.uniform(), random_density(7)])
    def test_scores_are_continuous(self, density):
        assert check_continuity(build_threshold_scores(density, 0.2, 1e-3, 2, 3), 4).continuous


class TestSolveSquarePartition:
    def test_equal_partition_meets_quota(self):
        out = solve_square_partition(GridDensity.uniform(), 1 / 8, 2, 4, QuotaVector.of([2, 2]))
        assert isinstance(out, QuotaOutcome)
        assert out.min_mass >= 1 / 8 - 1e-6
        masses = cell_masses(GridDensity.uniform(), out.pair)
        assert all(masses[i, j] >= 1 / 8 - 1e-6 for j, i in enumerate(out.assignment.sigma))
        assert out.assignment.respects(QuotaVector.of([2, 2]))

    def test_high_threshold_gives_all_below(self):
        out = solve_square_partition(GridDensity.uniform(), 0.3, 2, 2, QuotaVector.of([1, 1]))
        assert isinstance(out, AllBelow)
        assert out.pair.x_cuts == (0, HALF, 1)
        assert np.all(np.array(out.masses) < 0.3)
        assert np.all(cell_masses(GridDensity.uniform(), out.pair) < 0.3)

    def test_single_cell(self):
        out = solve_square_partition(GridDensity.uniform(), 0.9, 1, 1, QuotaVector.of([1]))
        assert isinstance(out, QuotaOutcome)
        assert out.min_mass == pytest.approx(1.0)

    def test_rows_cannot_exceed_columns(self):
        with pytest.raises(ValueError):
            solve_square_partition(GridDensity.uniform(), 0.1, 3, 2, QuotaVector.of([1, 1, 1]))

    def test_all_quotas_stop_at_all_below(self):
        outcomes = solve_all_quotas(GridDensity.uniform(), 0.3, 2, 2)
        assert len(outcomes) == 1
        assert isinstance(outcomes[0], AllBelow)

    def test_non_uniform_density(self):
        d = GridDensity.from_payload({"kx": 2, "ky": 2, "values": [1, 2, 3, 2]})
        out = solve_square_partition(d, 0.2, 2, 2, QuotaVector.of([1, 1]))
        masses = cell_masses(d, out.pair)
        if isinstance(out, AllBelow):
            assert np.all(masses < 0.2)
        else:
            assert all(masses[i, j] >= 0.2 - 0.2e-6 for j, i in enumerate(out.assignment.sigma))


@pytest.mark.slow
def test_small_thresholds_never_leave_every_cell_below():
    rng = np.random.default_rng(50)
    shapes = [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]
    for _ in range(50):
        n, m = shapes[int(rng.integers(len(shapes)))]
        quotas = list(compositions(m, n))
        a = QuotaVector.of(quotas[int(rng.integers(len(quotas)))])
        c = float(rng.choice([1.0, 0.75, 0.5])) / (n * m)
        out = solve_square_partition(GridDensity.uniform(), c, n, m, a)
        assert isinstance(out, QuotaOutcome)
        assert out.min_mass >= c - 1e-6 * c
