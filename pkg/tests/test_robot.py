"""Pose representation, pose cost, and level transition tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trinav.config import PlannerConfig
from trinav.gridmap import HeightGrid
from trinav.levels import build_level1, build_level2, build_level3
from trinav.robot import (
    PoseL1,
    PoseL2,
    PoseL3,
    contact_points,
    demote_l2_l1,
    demote_l3_l2,
    format_pose,
    pair_cost_grids,
    parse_pose,
    pose_cost,
    promote_l1_l2,
    promote_l2_l3,
    round_half_up,
    snap_pose_to_l3,
)

CFG = PlannerConfig()


def _flat(n=240, res=0.025):
    return HeightGrid(res, 0.0, 0.0, np.zeros((n, n)))


class TestRounding:
    def test_half_up(self):
        assert round_half_up(0.5) == 1
        assert round_half_up(-0.5) == 0
        assert round_half_up(1.49) == 1
        assert round_half_up(-1.5) == -1


class TestPoseText:
    def test_l1_round_trip(self):
        p = PoseL1(1.2375, 0.05, 17, (0.025, 0.0, -0.05, 0.0))
        assert parse_pose(format_pose(p)) == p

    def test_l2_round_trip(self):
        p = PoseL2(3.0125, 2.0625, 31, (0.05, -0.1))
        assert parse_pose(format_pose(p)) == p

    def test_l3_round_trip(self):
        p = PoseL3(0.0375, 9.9375, 15)
        assert parse_pose(format_pose(p)) == p

    def test_neutral_default(self):
        assert parse_pose("L1 1.0 2.0 4") == PoseL1(1.0, 2.0, 4)
        assert parse_pose("L2 1.0 2.0 4") == PoseL2(1.0, 2.0, 4)

    def test_theta_wraps(self):
        assert parse_pose("L3 0 0 17").theta == 1

    @pytest.mark.parametrize(
        "text",
        ["", "L4 0 0 0", "L1 0 0", "L1 0 0 0 1 2", "L3 0 0 0 0.1", "L2 0 0 0 1 2 3"],
    )
    def test_malformed_rejected(self, text):
        with pytest.raises(ValueError):
            parse_pose(text)


class TestContactPoints:
    def test_neutral_axis_aligned(self):
        pts = contact_points(CFG, PoseL1(2.0, 1.0, 0))
        assert pts[0][:2] == pytest.approx((2.3, 1.3))  # front-left
        assert pts[1][:2] == pytest.approx((2.3, 0.7))  # front-right
        assert pts[2][:2] == pytest.approx((1.7, 1.3))  # rear-left
        assert pts[3][:2] == pytest.approx((1.7, 0.7))  # rear-right

    def test_quarter_turn(self):
        pts = contact_points(CFG, PoseL1(0.0, 0.0, 16))  # 90 degrees
        assert pts[0][:2] == pytest.approx((-0.3, 0.3))
        assert pts[3][:2] == pytest.approx((0.3, -0.3))

    def test_foot_offsets_move_sagittally(self):
        pts = contact_points(CFG, PoseL1(0.0, 0.0, 0, (0.1, 0.0, 0.0, 0.0)))
        assert pts[0][:2] == pytest.approx((0.4, 0.3))
        assert pts[0][2] == pytest.approx(0.4)  # separation bookkeeping

    def test_l2_pairs_expand_to_four_areas(self):
        pts = contact_points(CFG, PoseL2(0.0, 0.0, 0, (0.05, -0.05)))
        assert pts[0][:2] == pytest.approx((0.35, 0.3))
        assert pts[1][:2] == pytest.approx((0.35, -0.3))
        assert pts[2][:2] == pytest.approx((-0.35, 0.3))

    def test_l3_has_none(self):
        assert contact_points(CFG, PoseL3(0.0, 0.0, 0)) == []


class TestPoseCostFlat:
    def test_unit_cost_all_levels(self):
        g = _flat()
        l1 = build_level1(g, CFG)
        l2 = build_level2(g, CFG)
        l3 = build_level3(g, CFG)
        assert pose_cost(l1, CFG, PoseL1(3.0, 3.0, 5)) == pytest.approx(1.0)
        assert pose_cost(l2, CFG, PoseL2(3.0125, 3.0125, 5)) == pytest.approx(1.0)
        assert pose_cost(l3, CFG, PoseL3(3.0375, 3.0375, 5)) == pytest.approx(1.0)

    def test_out_of_bounds_infinite(self):
        l1 = build_level1(_flat(80), CFG)
        assert pose_cost(l1, CFG, PoseL1(50.0, 1.0, 0)) == math.inf
        l3 = build_level3(_flat(80), CFG)
        assert pose_cost(l3, CFG, PoseL3(50.0, 1.0, 0)) == math.inf

    def test_non_neutral_feet_same_on_flat(self):
        l1 = build_level1(_flat(), CFG)
        cost = pose_cost(l1, CFG, PoseL1(3.0, 3.0, 0, (0.1, -0.05, 0.025, 0.0)))
        assert cost == pytest.approx(1.0)


class TestPoseCostTerrain:
    def test_foot_on_blocked_cell_infinite(self):
        g = _flat(160)
        # blocked patch under the front-left foot of a pose at (2, 2)
        g.data[92, 92] = 0.5
        l1 = build_level1(g, CFG)
        assert pose_cost(l1, CFG, PoseL1(2.0, 2.0, 0)) == math.inf

    def test_body_obstacle_blocks(self):
        g = _flat(160)
        g.data[80, 80] = 0.5  # tall thin post under the belly at (2, 2)
        l1 = build_level1(g, CFG)
        assert pose_cost(l1, CFG, PoseL1(2.0, 2.0, 0)) == math.inf

    def test_low_post_clears_belly(self):
        g = _flat(160)
        g.data[80, 80] = 0.25  # below the 0.3 m clearance
        l1 = build_level1(g, CFG)
        assert pose_cost(l1, CFG, PoseL1(2.0, 2.0, 0)) == pytest.approx(1.0)

    def test_slope_cost_on_ramp(self):
        g = _flat()
        xs = np.arange(240) * 0.025
        g.data[:] = 0.2 * xs[None, :]
        l1 = build_level1(g, CFG)
        # diff 0.005 per cell -> foot cost 1.535; pitch 0.2 -> body 0.04
        want = (1.0 + 107.0 * 0.005) + 0.2 * 0.2
        assert pose_cost(l1, CFG, PoseL1(3.0, 3.0, 0)) == pytest.approx(want, rel=1e-5)

    def test_steep_ramp_infeasible(self):
        g = _flat()
        xs = np.arange(240) * 0.025
        g.data[:] = 0.65 * xs[None, :]  # grade above the 0.6 slope limit
        l1 = build_level1(g, CFG)
        assert pose_cost(l1, CFG, PoseL1(3.0, 3.0, 0)) == math.inf

    def test_slice_matches_scalar_oracle(self):
        rng = np.random.default_rng(7)
        g = _flat(200)
        g.data += rng.uniform(0.0, 0.012, size=g.data.shape)
        l1 = build_level1(g, CFG)
        for _ in range(40):
            ix = int(rng.integers(40, 160))
            iy = int(rng.integers(40, 160))
            theta = int(rng.integers(0, 64))
            x, y = l1.grid.world_of(ix, iy)
            got = pose_cost(l1, CFG, PoseL1(x, y, theta))
            # independent scalar recomputation
            costs, heights = [], []
            for px, py, _ in contact_points(CFG, PoseL1(x, y, theta)):
                cx, cy = l1.grid.index_of(px, py)
                costs.append(l1.foot_cost[cy, cx])
                heights.append(l1.height.data[cy, cx])
            mean_h = np.mean(heights)
            pitch = ((heights[0] + heights[1]) - (heights[2] + heights[3])) / 2.0 / 0.6
            roll = ((heights[0] + heights[2]) - (heights[1] + heights[3])) / 2.0 / 0.6
            want = np.mean(costs) + 0.2 * math.hypot(pitch, roll)
            if l1.disk_max[iy, ix] > mean_h + 0.3:
                want = math.inf
            assert got == pytest.approx(want, rel=1e-5)

    def test_l2_pair_on_rough_ground(self):
        g = _flat()
        rng = np.random.default_rng(3)
        g.data += rng.uniform(0.0, 0.008, size=g.data.shape)
        l2 = build_level2(g, CFG)
        x, y = l2.grid.world_of(60, 60)
        got = pose_cost(l2, CFG, PoseL2(x, y, 0))
        gated, _ = pair_cost_grids(l2, CFG, 0)
        front = gated[60, 60 + 6]  # pair centers 0.3 m = 6 cells ahead/behind
        rear = gated[60, 60 - 6]
        heights = [l2.height.data[60 + dy, 60 + dx] for dx, dy in ((6, 6), (6, -6), (-6, 6), (-6, -6))]
        pitch = ((heights[0] + heights[1]) - (heights[2] + heights[3])) / 2.0 / 0.6
        roll = ((heights[0] + heights[2]) - (heights[1] + heights[3])) / 2.0 / 0.6
        want = (front + rear) / 2.0 + 0.2 * math.hypot(pitch, roll)
        assert got == pytest.approx(want, rel=1e-5)


class TestPromote:
    def _reps(self):
        g = _flat()
        return build_level1(g, CFG), build_level2(g, CFG), build_level3(g, CFG)

    def test_theta_rounding_half_up(self):
        l1, l2, _ = self._reps()
        assert promote_l1_l2(PoseL1(3.0, 3.0, 31), l1, l2, CFG).pose.theta == 16
        assert promote_l1_l2(PoseL1(3.0, 3.0, 63), l1, l2, CFG).pose.theta == 0
        assert promote_l1_l2(PoseL1(3.0, 3.0, 30), l1, l2, CFG).pose.theta == 15
        assert promote_l1_l2(PoseL1(3.0, 3.0, 1), l1, l2, CFG).pose.theta == 1

    def test_position_snaps_half_fine_cell(self):
        l1, l2, _ = self._reps()
        out = promote_l1_l2(PoseL1(1.0, 1.0, 0), l1, l2, CFG)
        assert out.pose.x == pytest.approx(1.0125)
        assert out.pose.y == pytest.approx(1.0125)
        # flat ground: snap cost is exactly the snap distance
        assert out.snap_cost == pytest.approx(math.hypot(0.0125, 0.0125), rel=1e-5)

    def test_odd_theta_adds_turn_arc(self):
        l1, l2, _ = self._reps()
        out = promote_l1_l2(PoseL1(1.0, 1.0, 1), l1, l2, CFG)
        arc = (2 * math.pi / 64) * CFG.geometry.half_diagonal
        want = math.hypot(0.0125, 0.0125) + arc
        assert out.snap_cost == pytest.approx(want, rel=1e-5)

    def test_feet_merge_and_shift_cost(self):
        l1, l2, _ = self._reps()
        out = promote_l1_l2(PoseL1(1.0, 1.0, 0, (0.05, 0.0, 0.0, 0.0)), l1, l2, CFG)
        assert out.pose.pairs == (0.05, 0.0)  # mean 0.025 snaps half-up
        # feet move: FL 0.05->0.05 (0), FR 0->0.05, rear pair at 0
        want = math.hypot(0.0125, 0.0125) + 0.05 * 1.0
        assert out.snap_cost == pytest.approx(want, rel=1e-5)

    def test_mean_snap_half_up_negative(self):
        l1, l2, _ = self._reps()
        out = promote_l1_l2(PoseL1(1.0, 1.0, 0, (-0.025, -0.025, 0.0, 0.0)), l1, l2, CFG)
        assert out.pose.pairs == (0.0, 0.0)

    def test_spread_too_wide_fails(self):
        l1, l2, _ = self._reps()
        out = promote_l1_l2(PoseL1(1.0, 1.0, 0, (0.15, 0.0, 0.0, 0.0)), l1, l2, CFG)
        assert out.pose is None
        assert not math.isfinite(out.snap_cost)
        assert "spread" in out.reason

    def test_spread_at_limit_ok(self):
        l1, l2, _ = self._reps()
        out = promote_l1_l2(PoseL1(1.0, 1.0, 0, (0.125, 0.0, 0.0, 0.0)), l1, l2, CFG)
        assert out.pose is not None
        assert out.pose.pairs[0] == pytest.approx(0.05)  # mean 0.0625 -> 0.05

    def test_infeasible_source_fails(self):
        g = _flat(160)
        g.data[92, 92] = 0.5
        l1 = build_level1(g, CFG)
        l2 = build_level2(g, CFG)
        out = promote_l1_l2(PoseL1(2.0, 2.0, 0), l1, l2, CFG)
        assert out.pose is None

    def test_l2_to_l3(self):
        _, l2, l3 = self._reps()
        out = promote_l2_l3(PoseL2(1.0125, 1.0125, 2, (0.05, 0.0)), l2, l3, CFG)
        assert out.pose == PoseL3(1.0375, 1.0375, 1)
        assert out.snap_cost == pytest.approx(math.hypot(0.025, 0.025), rel=1e-5)

    def test_l2_to_l3_theta_tie(self):
        _, l2, l3 = self._reps()
        assert promote_l2_l3(PoseL2(1.0125, 1.0125, 1), l2, l3, CFG).pose.theta == 1
        assert promote_l2_l3(PoseL2(1.0125, 1.0125, 31), l2, l3, CFG).pose.theta == 0


class TestDemote:
    def _reps(self):
        g = _flat()
        return build_level1(g, CFG), build_level2(g, CFG), build_level3(g, CFG)

    def test_l3_to_l2_snap_and_theta(self):
        _, l2, _ = self._reps()
        pose = demote_l3_l2(PoseL3(1.0375, 2.0375, 5), l2)
        assert pose.theta == 10
        assert pose.pairs == (0.0, 0.0)
        # coarse centers sit at fine-cell corners; ties round half-up
        assert pose.x == pytest.approx(1.0625)
        assert pose.y == pytest.approx(2.0625)

    def test_l2_to_l1_carries_pairs_to_feet(self):
        l1, _, _ = self._reps()
        pose = demote_l2_l1(PoseL2(1.0125, 1.0125, 7, (0.05, -0.1)), l1)
        assert pose.theta == 14
        assert pose.feet == (0.05, 0.05, -0.1, -0.1)
        assert pose.x == pytest.approx(1.025)

    def test_demote_promote_round_trip_l3(self):
        _, l2, l3 = self._reps()
        for k in (7, 10, 25):
            x, y = l3.grid.world_of(k, k + 1)
            start = PoseL3(x, y, 6)
            back = promote_l2_l3(demote_l3_l2(start, l2), l2, l3, CFG)
            assert back.pose == start

    def test_demote_promote_round_trip_l2(self):
        l1, l2, _ = self._reps()
        x, y = l2.grid.world_of(30, 41)
        start = PoseL2(x, y, 9, (0.05, 0.0))
        back = promote_l1_l2(demote_l2_l1(start, l1), l1, l2, CFG)
        assert back.pose == start


class TestSnapToL3:
    def test_from_each_level(self):
        g = _flat()
        l3 = build_level3(g, CFG)
        ix, iy, th = snap_pose_to_l3(PoseL1(1.0, 1.0, 63), l3.grid)
        assert th == 0
        assert (ix, iy) == l3.grid.index_of(1.0, 1.0)
        assert snap_pose_to_l3(PoseL2(1.0, 1.0, 9), l3.grid)[2] == 5  # 4.5 rounds up
        assert snap_pose_to_l3(PoseL3(1.0375, 1.0375, 7), l3.grid) == (10, 10, 7)

    @given(st.integers(0, 63))
    @settings(max_examples=64, deadline=None)
    def test_theta_snap_bounded_error(self, theta):
        g = _flat(80)
        l3 = build_level3(g, CFG)
        _, _, th3 = snap_pose_to_l3(PoseL1(0.5, 0.5, theta), l3.grid)
        a1 = 2 * math.pi * theta / 64
        a3 = 2 * math.pi * th3 / 16
        d = abs(a1 - a3) % (2 * math.pi)
        assert min(d, 2 * math.pi - d) <= math.pi / 16 + 1e-12
