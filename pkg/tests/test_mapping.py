import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from omninav.core import DomainError, Pose2D
from omninav.mapping import (LOGODDS_SETS, LogOddsParams, OccupancyGrid, hit_obstacle, integrate_scan,
                             log_odds_to_prob, occupancy_at, prob_to_log_odds)
from omninav.sensing import LidarScan, WorldModel2D, read_pgm

P = LogOddsParams(0.5, -0.5, 0.001)


def beam(l, phi=0.0, l_max=12.0):
    return LidarScan(np.array([l]), np.array([phi]), l_max, 0.0)


class TestLogOdds:
    def test_even(self):
        assert prob_to_log_odds(0.5) == 0.0

    def test_published_values(self):
        assert prob_to_log_odds(0.64) == pytest.approx(0.57536, abs=1e-5)
        assert prob_to_log_odds(0.125) == pytest.approx(-1.94591, abs=1e-5)
        assert prob_to_log_odds(0.64) == pytest.approx(math.log(0.64 / 0.36), abs=1e-15)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
    def test_domain(self, p):
        with pytest.raises(DomainError):
            prob_to_log_odds(p)

    @given(st.floats(0.001, 0.999))
    def test_round_trip(self, p):
        assert log_odds_to_prob(prob_to_log_odds(p)) == pytest.approx(p, abs=1e-12)

    def test_array_logistic(self):
        l = np.array([-10.0, 0.0, 10.0])
        assert log_odds_to_prob(l) == pytest.approx([1 / (1 + math.exp(10)), 0.5, 1 / (1 + math.exp(-10))])

    def test_sets(self):
        assert LOGODDS_SETS["B"].l_occ == pytest.approx(prob_to_log_odds(0.64), abs=1e-5)
        with pytest.raises(DomainError):
            LogOddsParams(-1.0, 0.5, 0.0)


class TestQueries:
    def test_fresh_map(self):
        g = OccupancyGrid.empty()
        assert occupancy_at(g, (1.0, -3.0)) == 0.5
        assert not hit_obstacle(g, (1.0, -3.0))
        assert occupancy_at(g, (500.0, 0.0)) == 0.5

    def test_saturated(self):
        g = OccupancyGrid.empty()
        r, c = g.index_of(0.3, 0.3)
        g.log_odds[r, c] = 10.0
        assert occupancy_at(g, (0.3, 0.3)) == pytest.approx(0.99995, abs=1e-5)
        assert hit_obstacle(g, (0.3, 0.3))

    def test_published_inverse(self):
        g = OccupancyGrid.empty()
        g.log_odds[g.index_of(0, 0)] = 0.57536
        assert occupancy_at(g, (0, 0)) == pytest.approx(0.64, abs=1e-5)

    def test_threshold_inclusive(self):
        g = OccupancyGrid.empty()
        g.log_odds[g.index_of(0, 0)] = prob_to_log_odds(0.65)
        p = occupancy_at(g, (0, 0))
        assert hit_obstacle(g, (0, 0), threshold=p)
        assert not hit_obstacle(g, (0, 0), threshold=math.nextafter(p, 1.0))

    def test_from_world_alignment(self):
        occ = np.zeros((5, 6), dtype=bool)
        occ[2, 4] = True
        w = WorldModel2D(occ, 0.1)
        g = OccupancyGrid.from_world(w)
        assert g.index_of(0.45, 0.25) == (2, 4)
        assert hit_obstacle(g, (0.45, 0.25)) and not hit_obstacle(g, (0.35, 0.25))


def _beam_cells(grid, x0, y0, l, phi):
    """Cells crossed by a beam, sampled densely; the last one holds the endpoint."""
    ds = np.linspace(0.0, l, 4001)
    cells = []
    for d in ds:
        rc = grid.index_of(x0 + d * math.cos(phi), y0 + d * math.sin(phi))
        if not cells or cells[-1] != rc:
            cells.append(rc)
    return cells


class TestIntegrate:
    def test_empty_scan(self):
        g = OccupancyGrid.empty()
        before = g.log_odds.copy()
        integrate_scan(g, LidarScan(np.array([]), np.array([]), 12.0), Pose2D(), P)
        assert np.array_equal(g.log_odds, before)

    def test_single_beam_hand_trace(self):
        g = OccupancyGrid.empty(extent=6.0)
        integrate_scan(g, beam(1.0), Pose2D(), P)
        end = g.index_of(1.0, 0.0)
        assert g.log_odds[end] == pytest.approx(0.499, abs=1e-12)
        touched = np.argwhere(g.log_odds != 0)
        ray = [tuple(rc) for rc in touched if tuple(rc) != end]
        assert all(g.log_odds[rc] == pytest.approx(-0.501, abs=1e-12) for rc in ray)
        # the free cells are the ones the beam crosses before the last cell ahead of the hit
        crossed = set(_beam_cells(g, 0.0, 0.0, 1.0 - g.resolution, 0.0))
        assert set(ray) <= crossed
        assert len(ray) >= 8

    def test_clamp(self):
        g = OccupancyGrid.empty(extent=6.0)
        for _ in range(100):
            integrate_scan(g, beam(1.0), Pose2D(), LogOddsParams(0.5, -0.5, 0.001))
        assert g.log_odds[g.index_of(1.0, 0.0)] == 10.0
        assert g.log_odds.min() == -10.0

    def test_max_range_ignored(self):
        g = OccupancyGrid.empty(extent=6.0)
        integrate_scan(g, beam(12.0), Pose2D(), P)
        assert not g.log_odds.any()

    def test_max_range_free_option(self):
        g = OccupancyGrid.empty(extent=6.0)
        integrate_scan(g, beam(12.0), Pose2D(), P, free_on_max_range=True)
        assert g.log_odds.max() == 0.0 and g.log_odds.min() < 0.0

    def test_grid_grows_preserving_coordinates(self):
        g = OccupancyGrid.empty(extent=2.0)
        g.log_odds[g.index_of(0.25, 0.25)] = 3.0
        integrate_scan(g, beam(5.0, math.pi), Pose2D(), P)
        assert g.log_odds[g.index_of(0.25, 0.25)] == 3.0
        assert g.log_odds[g.index_of(-5.0, 0.0)] == pytest.approx(0.499)
        xmin, _, _, _ = g.bounds()
        assert xmin <= -5.0

    @given(st.floats(0.3, 5.0), st.floats(0, 6.28), st.floats(-1, 1), st.floats(-1, 1))
    def test_inverse_evidence(self, l, phi, x, y):
        # replaying a beam with the occupied and free roles swapped cancels it up to the prior term
        g = OccupancyGrid.empty(extent=4.0)
        integrate_scan(g, beam(l, phi), Pose2D(x, y), P)
        swapped = SimpleNamespace(l_occ=P.l_free, l_free=P.l_occ, l_0=P.l_0)
        integrate_scan(g, beam(l, phi), Pose2D(x, y), swapped)
        assert np.all(np.abs(g.log_odds) <= 2 * abs(P.l_0) + 1e-12)

    @given(st.lists(st.tuples(st.floats(0.2, 6.0), st.floats(0, 6.28)), min_size=1, max_size=20),
           st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 6.28), st.sampled_from(["A", "B"]))
    def test_bounds_and_reach(self, beams, x, y, th, key):
        beams.sort(key=lambda b: b[1])
        angles = np.array([b[1] for b in beams])
        if np.any(np.diff(angles) <= 0):
            return
        scan = LidarScan(np.array([b[0] for b in beams]), angles, 12.0, 0.0)
        g = OccupancyGrid.empty(extent=4.0)
        for _ in range(3):
            integrate_scan(g, scan, Pose2D(x, y, th), LOGODDS_SETS[key])
        assert g.log_odds.min() >= g.l_min and g.log_odds.max() <= g.l_max
        rows, cols = np.nonzero(g.log_odds)
        cx, cy = g.cell_center(rows, cols)
        reach = max(b[0] for b in beams) + 1.5 * g.resolution
        assert np.all(np.hypot(cx - x, cy - y) <= reach)


class TestExport:
    def test_pgm_classes(self, tmp_path):
        g = OccupancyGrid.empty(extent=1.0)
        g.log_odds[0, 0] = 5.0
        g.log_odds[0, 1] = -5.0
        g.export_pgm(tmp_path / "m.pgm")
        px, comments = read_pgm(tmp_path / "m.pgm")
        bottom = px[-1]
        assert bottom[0] == 0 and bottom[1] == 255 and bottom[2] == 128
        assert any("resolution=0.1" in c for c in comments)
