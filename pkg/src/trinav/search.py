"""Anytime weighted-A* planning across the three representation levels.

A planning query owns a LevelSet: the fine representation covers a small
window around the start, the medium one a larger window, and the coarse
one the whole map.  States are identified by integer lattice coordinates
(level, cell, orientation index, contact-offset indices), and successor
maneuvers that would leave the current window are replaced by a promotion
to the next level plus the analogous coarse maneuver.  Coarse maneuvers
that land inside a finer window are re-expressed there for free.

The anytime loop runs weighted A* over a descending weight schedule,
keeping g-values between iterations and re-expanding states whose g
improved after they were closed (the usual ARA* bookkeeping).  Two
heuristics are available: an admissible euclidean bound and a precomputed
coarse-level cost-to-go field (exact Dijkstra over the coarse maneuver
graph with unknown terrain at optimistic cost, not admissible across
levels but much tighter).
"""

from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from trinav.actions import (
    DRIVE_OFFSETS,
    base_shift_move,
    drive_move,
    near_obstacle,
    stepping_neighbors,
    turn_move,
)
from trinav.config import LEVEL_ORIENTATIONS, LEVEL_RESOLUTION, PlannerConfig
from trinav.gridmap import HeightGrid
from trinav.levels import (
    Level3Rep,
    _swept_offsets,
    ang_dist,
    build_level1,
    build_level2,
    build_level3,
)
from trinav.robot import (
    Pose,
    PoseL1,
    PoseL2,
    PoseL3,
    demote_l2_l1,
    demote_l3_l2,
    pose_cost,
    promote_l1_l2,
    promote_l2_l3,
    round_half_up,
    snap_index,
    snap_pose_to_l3,
)

EPS = 1e-9

# Extra raster around each level window so every pose inside the window can
# evaluate its full contact geometry (feet reach ~0.72 m from the base).
WINDOW_SKIRT_M = 0.8

# Goal equality is coarse: any pose in the goal's coarse cell with a matching
# coarse orientation counts.  Two poses in the same cell can differ by a full
# cell diagonal and by one coarse orientation step, so the euclidean bound
# must concede that much slack to stay admissible.
POS_GOAL_SLACK = LEVEL_RESOLUTION[3] * math.sqrt(2.0)
ANG_GOAL_SLACK = 2.0 * math.pi / LEVEL_ORIENTATIONS[3]


class HeuristicGoalError(RuntimeError):
    """Goal infeasible in the coarse graph; use the euclidean heuristic."""


# ---------------------------------------------------------------------------
# level set: per-query representations and window boxes


@dataclass
class LevelSet:
    """Level representations plus the window boxes used for routing.

    ``boxes`` holds one entry per level the search may plan at; a None box
    means the level covers its whole raster.  ``reps`` may carry the coarse
    representation even when it is not planned at (goal snapping and the
    cost-to-go field always live at the coarse lattice).
    """

    map_grid: HeightGrid
    reps: dict
    boxes: dict

    @property
    def l3(self) -> Level3Rep:
        return self.reps[3]

    def in_box(self, level: int, x: float, y: float) -> bool:
        if level not in self.boxes:
            return False
        box = self.boxes[level]
        if box is None:
            grid = self.reps[level].grid
            ix, iy = grid.index_of(x, y)
            return grid.in_bounds(ix, iy)
        x0, y0, x1, y1 = box
        return x0 - EPS <= x <= x1 + EPS and y0 - EPS <= y <= y1 + EPS

    def level_of(self, x: float, y: float) -> int:
        """Lowest level whose window contains the point; 0 = off the map."""
        for level in sorted(self.boxes):
            if self.in_box(level, x, y):
                return level
        return 0


def build_level_set(map_grid: HeightGrid, cfg: PlannerConfig, center) -> LevelSet:
    """Build the representations for one query, windows centered on ``center``."""
    cx, cy = center
    reps = {}
    boxes = {}
    if cfg.level_mode == "combined":
        for level, size in ((1, cfg.level1_window_m), (2, cfg.level2_window_m)):
            half = size / 2.0
            crop = (cx - half - WINDOW_SKIRT_M, cy - half - WINDOW_SKIRT_M,
                    cx + half + WINDOW_SKIRT_M, cy + half + WINDOW_SKIRT_M)
            build = build_level1 if level == 1 else build_level2
            reps[level] = build(map_grid, cfg, window=crop)
            boxes[level] = (cx - half, cy - half, cx + half, cy + half)
        reps[3] = build_level3(map_grid, cfg)
        boxes[3] = None
    else:
        level = int(cfg.level_mode[1])
        build = {1: build_level1, 2: build_level2, 3: build_level3}[level]
        reps[level] = build(map_grid, cfg)
        boxes[level] = None
        if 3 not in reps:
            # goal snapping and the dijkstra field need the coarse lattice
            reps[3] = build_level3(map_grid, cfg)
    return LevelSet(map_grid, reps, boxes)


# ---------------------------------------------------------------------------
# heuristics


def euclidean_heuristic(pose: Pose, goal: Pose, cfg: PlannerConfig) -> float:
    """max(distance at flat drive cost, orientation gap at flat turn cost)."""
    d = math.hypot(goal.x - pose.x, goal.y - pose.y)
    dth = ang_dist(pose.angle, goal.angle, period=2.0 * math.pi)
    return max(
        0.0,
        d - POS_GOAL_SLACK,
        (dth - ANG_GOAL_SLACK) * cfg.geometry.half_diagonal,
    )


@njit(cache=True)
def _sift_up(heap, pos, key, i):
    node = heap[i]
    k = key[node]
    while i > 0:
        parent = (i - 1) >> 1
        if key[heap[parent]] <= k:
            break
        heap[i] = heap[parent]
        pos[heap[i]] = i
        i = parent
    heap[i] = node
    pos[node] = i


@njit(cache=True)
def _sift_down(heap, pos, key, size, i):
    node = heap[i]
    k = key[node]
    while True:
        child = 2 * i + 1
        if child >= size:
            break
        right = child + 1
        if right < size and key[heap[right]] < key[heap[child]]:
            child = right
        if key[heap[child]] >= k:
            break
        heap[i] = heap[child]
        pos[heap[i]] = i
        i = child
    heap[i] = node
    pos[node] = i


@njit(cache=True)
def _field_kernel(area, passm, dxs, dys, nmid, mxs, mys, dists, arc, gt, gy, gx):
    """One-to-any Dijkstra over the coarse maneuver graph, seeded at the goal.

    The graph is symmetric (translation sets are closed under negation, the
    swept interior cells mirror under reversal and the step-cell direction
    gate has half-turn period), so expanding forward edges from the goal
    yields the reversed cost-to-go.  pos: -1 unseen, -2 settled, else heap
    slot.
    """
    T, H, W = area.shape
    plane = H * W
    n = T * plane
    dist = np.full(n, np.inf)
    heap = np.empty(n, np.int64)
    pos = np.full(n, -1, np.int64)
    gid = gt * plane + gy * W + gx
    dist[gid] = 0.0
    heap[0] = gid
    pos[gid] = 0
    size = 1
    while size > 0:
        u = heap[0]
        size -= 1
        if size > 0:
            heap[0] = heap[size]
            pos[heap[0]] = 0
            _sift_down(heap, pos, dist, size, 0)
        pos[u] = -2
        du = dist[u]
        t = u // plane
        rest = u - t * plane
        y = rest // W
        x = rest - y * W
        cu = area[t, y, x]
        for dt in (-1, 1):
            t2 = (t + dt) % T
            c2 = area[t2, y, x]
            if np.isfinite(c2):
                v = t2 * plane + rest
                if pos[v] != -2:
                    nd = du + arc * (cu + c2) * 0.5
                    if nd < dist[v]:
                        dist[v] = nd
                        if pos[v] == -1:
                            heap[size] = v
                            pos[v] = size
                            size += 1
                        _sift_up(heap, pos, dist, pos[v])
        for o in range(dxs.shape[0]):
            nx = x + dxs[o]
            ny = y + dys[o]
            if nx < 0 or nx >= W or ny < 0 or ny >= H:
                continue
            if not passm[o, y, x] or not passm[o, ny, nx]:
                continue
            c2 = area[t, ny, nx]
            if not np.isfinite(c2):
                continue
            blocked = False
            for j in range(nmid[o]):
                iy2 = y + mys[o, j]
                ix2 = x + mxs[o, j]
                if not passm[o, iy2, ix2] or not np.isfinite(area[t, iy2, ix2]):
                    blocked = True
                    break
            if blocked:
                continue
            v = t * plane + ny * W + nx
            if pos[v] == -2:
                continue
            nd = du + dists[o] * (cu + c2) * 0.5
            if nd < dist[v]:
                dist[v] = nd
                if pos[v] == -1:
                    heap[size] = v
                    pos[v] = size
                    size += 1
                _sift_up(heap, pos, dist, pos[v])
    return dist.reshape(T, H, W)


def _direction_pass_masks(l3: Level3Rep) -> np.ndarray:
    """Per-direction cell masks for the step-cell movement restriction.

    A cell blocks a move direction when it is a step cell whose orientation
    (mod a quarter turn) differs from the move direction by at least one
    coarse orientation step; unknown step orientation blocks everything.
    """
    alpha = l3.classes.alpha
    step = l3.step_mask
    tol = 2.0 * math.pi / LEVEL_ORIENTATIONS[3]
    masks = np.empty((len(DRIVE_OFFSETS),) + step.shape, dtype=np.bool_)
    for o, (dx, dy) in enumerate(DRIVE_OFFSETS):
        beta = math.atan2(dy, dx)
        with np.errstate(invalid="ignore"):
            d = (beta - alpha) % (math.pi / 2.0)
            d = np.minimum(d, math.pi / 2.0 - d)
            masks[o] = ~step | (d < tol - 1e-12)
    return masks


_KERNEL_WARM = False


def _warm_kernel() -> None:
    """Run the field kernel once on a toy graph so JIT work happens up front."""
    global _KERNEL_WARM
    if _KERNEL_WARM:
        return
    area = np.ones((2, 2, 2))
    passm = np.ones((len(DRIVE_OFFSETS), 2, 2), dtype=np.bool_)
    dxs, dys, nmid, mxs, mys, dists = _offset_arrays(1.0)
    _field_kernel(area, passm, dxs, dys, nmid, mxs, mys, dists, 1.0, 0, 0, 0)
    _KERNEL_WARM = True


def _offset_arrays(resolution: float):
    dxs = np.array([dx for dx, _ in DRIVE_OFFSETS], dtype=np.int64)
    dys = np.array([dy for _, dy in DRIVE_OFFSETS], dtype=np.int64)
    mids = [_swept_offsets(dx, dy) for dx, dy in DRIVE_OFFSETS]
    nmid = np.array([len(m) for m in mids], dtype=np.int64)
    mxs = np.zeros((len(mids), int(nmid.max())), dtype=np.int64)
    mys = np.zeros_like(mxs)
    for o, m in enumerate(mids):
        for j, (ox, oy) in enumerate(m):
            mxs[o, j] = ox
            mys[o, j] = oy
    dists = np.array(
        [math.hypot(dx, dy) * resolution for dx, dy in DRIVE_OFFSETS], dtype=np.float64
    )
    return dxs, dys, nmid, mxs, mys, dists


def build_dijkstra_heuristic(l3: Level3Rep, goal: Pose, cfg: PlannerConfig) -> np.ndarray:
    """Exact cost-to-go to the goal for every coarse state (theta, y, x).

    Uses the optimistic coarse cost stack, so unknown terrain is crossed at
    flat cost instead of pruning; unreachable states stay at inf.  Raises
    HeuristicGoalError when the goal itself has no feasible coarse pose.
    """
    gx, gy, gt = snap_pose_to_l3(goal, l3.grid)
    if not l3.grid.in_bounds(gx, gy):
        raise HeuristicGoalError("goal lies outside the map")
    area = np.ascontiguousarray(l3.area_cost_opt)
    if not np.isfinite(area[gt, gy, gx]):
        raise HeuristicGoalError("goal infeasible at the coarse level")
    _warm_kernel()
    passm = _direction_pass_masks(l3)
    dxs, dys, nmid, mxs, mys, dists = _offset_arrays(l3.grid.resolution)
    arc = (2.0 * math.pi / LEVEL_ORIENTATIONS[3]) * cfg.geometry.half_diagonal
    return _field_kernel(area, passm, dxs, dys, nmid, mxs, mys, dists, arc, gt, gy, gx)


def heuristic_lookup(pose: Pose, field: np.ndarray, l3grid: HeightGrid) -> float:
    """Field value at the pose's coarse state; snapping there costs nothing."""
    ix, iy, theta = snap_pose_to_l3(pose, l3grid)
    if not l3grid.in_bounds(ix, iy):
        return math.inf
    return float(field[theta, iy, ix])


# ---------------------------------------------------------------------------
# path and stats containers


@dataclass(frozen=True)
class PathStep:
    label: str  # start | drive | turn | step | base_shift | foot_shift | promote | demote | snap
    level: int
    pose: Pose
    cost: float
    total: float
    detail: str = ""


@dataclass
class Path:
    steps: list

    @property
    def cost(self) -> float:
        return self.steps[-1].total if self.steps else 0.0

    @property
    def maneuvers(self) -> list:
        return [s for s in self.steps if s.label != "start"]

    def segments(self) -> list:
        """Contiguous per-level runs as (level, first step, last step)."""
        out = []
        for i, step in enumerate(self.steps):
            if out and out[-1][0] == step.level:
                out[-1] = (step.level, out[-1][1], i)
            else:
                out.append((step.level, i, i))
        return out


@dataclass
class SearchStats:
    expansions: int = 0
    generated: int = 0
    iterations: list = field(default_factory=list)  # (weight, cost or inf, seconds)
    preprocessing_s: float = 0.0
    heuristic: str = ""
    fallback: str = ""  # non-empty when the dijkstra field was unavailable


# ---------------------------------------------------------------------------
# the planner


class Planner:
    """One planning context: level set, per-pose cost memo, heuristic state."""

    def __init__(self, levels: LevelSet, cfg: PlannerConfig):
        self.levels = levels
        self.cfg = cfg
        self._cost_memo = {}
        self._field = None
        self._goal = None
        self._goal_l3 = None

    # -- state identity ----------------------------------------------------

    def state_of(self, pose: Pose) -> tuple:
        grid = self.levels.reps[pose.level].grid
        res = grid.resolution
        ix, iy = grid.index_of(pose.x, pose.y)
        if pose.level == 1:
            offs = tuple(snap_index(f, res) for f in pose.feet)
        elif pose.level == 2:
            offs = tuple(snap_index(f, res) for f in pose.pairs) + (0, 0)
        else:
            offs = (0, 0, 0, 0)
        return (pose.level, ix, iy, pose.theta) + offs

    def pose_of(self, state: tuple) -> Pose:
        level, ix, iy, theta = state[:4]
        grid = self.levels.reps[level].grid
        x, y = grid.world_of(ix, iy)
        res = grid.resolution
        if level == 1:
            return PoseL1(x, y, theta, tuple(o * res for o in state[4:8]))
        if level == 2:
            return PoseL2(x, y, theta, tuple(o * res for o in state[4:6]))
        return PoseL3(x, y, theta)

    def _cost(self, pose: Pose) -> float:
        key = self.state_of(pose)
        cached = self._cost_memo.get(key)
        if cached is None:
            cached = pose_cost(self.levels.reps[pose.level], self.cfg, pose)
            self._cost_memo[key] = cached
        return cached

    # -- level transitions ---------------------------------------------------

    def _promote(self, pose: Pose):
        """One-level promotion; Promotion.pose is None when it fails."""
        reps = self.levels.reps
        if pose.level == 1:
            return promote_l1_l2(pose, reps[1], reps[2], self.cfg)
        return promote_l2_l3(pose, reps[2], reps[3], self.cfg)

    def _demote(self, pose: Pose, level: int) -> Pose:
        reps = self.levels.reps
        while pose.level > level:
            if pose.level == 3:
                pose = demote_l3_l2(pose, reps[2])
            else:
                pose = demote_l2_l1(pose, reps[1])
        return pose

    # -- expansion -----------------------------------------------------------

    def expand(self, state: tuple) -> list:
        """Successors as (edge cost, [(label, level, pose, cost, detail)], state).

        Maneuvers that keep the base in place always stay on the state's
        level.  Base translations are routed: targets leaving the window are
        replaced by promotion plus the same maneuver one level up, targets
        entering a finer window get a free re-expression there.
        """
        pose = self.pose_of(state)
        level = state[0]
        rep = self.levels.reps[level]
        out = []
        for dtheta in (-1, 1):
            m = turn_move(rep, self.cfg, pose, dtheta, self._cost)
            if m is not None:
                out.append(self._plain_edge(m, level))
        for dx, dy in DRIVE_OFFSETS:
            edge = self._routed_translation(
                pose, level, dx, dy,
                lambda r, p: drive_move(r, self.cfg, p, dx, dy, self._cost),
            )
            if edge is not None:
                out.append(edge)
        if level != 3 and near_obstacle(rep, pose):
            for m in stepping_neighbors(rep, self.cfg, pose, self._cost,
                                        include_base_shifts=False):
                out.append(self._plain_edge(m, level))
            for sign in (-1, 1):
                axis = _base_shift_axis(pose, sign)
                if axis is None:
                    continue
                edge = self._routed_translation(
                    pose, level, axis[0], axis[1],
                    lambda r, p: base_shift_move(r, self.cfg, p, sign, self._cost),
                )
                if edge is not None:
                    out.append(edge)
        return out

    def _plain_edge(self, m, level):
        steps = [(m.kind, level, m.target, m.cost, m.detail)]
        return (m.cost, steps, self.state_of(m.target))

    def _routed_translation(self, pose, level, dx, dy, build):
        """Route one base translation through the window structure."""
        res = LEVEL_RESOLUTION[level]
        dest = self.levels.level_of(pose.x + dx * res, pose.y + dy * res)
        if dest == 0:
            return None
        if dest > level:
            return self._promoted_translation(pose, level, dx, dy, build, dest)
        m = build(self.levels.reps[level], pose)
        if m is None:
            return None
        if dest == level:
            return self._plain_edge(m, level)
        return self._demoted_edge(m, level, dest)

    def _promoted_translation(self, pose, level, dx, dy, build, dest):
        """Promote until the translated target fits the level, then move."""
        steps = []
        total = 0.0
        while level < 3:
            prom = self._promote(pose)
            if prom.pose is None:
                return None
            pose = prom.pose
            level += 1
            if not math.isfinite(self._cost(pose)):
                return None
            steps.append(("promote", level, pose, prom.snap_cost, ""))
            total += prom.snap_cost
            res = LEVEL_RESOLUTION[level]
            dest = self.levels.level_of(pose.x + dx * res, pose.y + dy * res)
            if dest == 0:
                return None
            if dest > level:
                continue
            m = build(self.levels.reps[level], pose)
            if m is None:
                return None
            steps.append((m.kind, level, m.target, m.cost, m.detail))
            total += m.cost
            return (total, steps, self.state_of(m.target))
        return None

    def _demoted_edge(self, m, level, dest):
        """Coarse maneuver landing in a finer window: re-express it there."""
        for fine in range(dest, level):
            pose = self._demote(m.target, fine)
            if math.isfinite(self._cost(pose)):
                steps = [
                    (m.kind, level, m.target, m.cost, m.detail),
                    ("demote", fine, pose, 0.0, ""),
                ]
                return (m.cost, steps, self.state_of(pose))
        # no finer level can stand here; stay coarse
        return self._plain_edge(m, level)

    # -- goal handling and heuristics ------------------------------------------

    def _set_goal(self, goal: Pose, stats: SearchStats) -> None:
        self._goal = goal
        self._goal_l3 = snap_pose_to_l3(goal, self.levels.l3.grid)
        stats.heuristic = self.cfg.heuristic
        if self.cfg.heuristic == "dijkstra":
            t0 = time.perf_counter()
            try:
                self._field = build_dijkstra_heuristic(self.levels.l3, goal, self.cfg)
            except HeuristicGoalError as err:
                self._field = None
                stats.heuristic = "euclidean"
                stats.fallback = str(err)
            stats.preprocessing_s = time.perf_counter() - t0

    def _h(self, pose: Pose) -> float:
        if self._field is not None:
            return heuristic_lookup(pose, self._field, self.levels.l3.grid)
        return euclidean_heuristic(pose, self._goal, self.cfg)

    def _is_goal(self, pose: Pose) -> bool:
        return snap_pose_to_l3(pose, self.levels.l3.grid) == self._goal_l3

    # -- the anytime loop ----------------------------------------------------

    def plan(self, start: Pose, goal: Pose):
        """Best path from start to goal under the weight schedule.

        Returns (Path or None, SearchStats); None means no path exists (or
        none was found within the time budget).  Raises ValueError when the
        start or goal violates the feasibility contract.
        """
        cfg = self.cfg
        stats = SearchStats()
        start = self._start_pose(start)
        if not math.isfinite(self._cost(start)):
            raise ValueError("start pose is infeasible")
        self._validate_goal(goal)
        self._set_goal(goal, stats)
        t_begin = time.perf_counter()
        deadline = t_begin + cfg.time_budget_s if cfg.time_budget_s > 0 else None

        s0 = self.state_of(start)
        g = {s0: 0.0}
        parent = {s0: None}
        h_memo = {}

        def h_of(state):
            v = h_memo.get(state)
            if v is None:
                v = self._h(self.pose_of(state))
                h_memo[state] = v
            return v

        seq = 0
        best_goal = None
        incumbent = math.inf
        frontier = [s0]
        out_of_time = False

        for weight in cfg.weights:
            open_heap = []
            seen = {}
            for state in frontier:
                if state in seen:
                    continue
                seen[state] = None
                hs = h_of(state)
                if math.isinf(hs):
                    continue
                seq += 1
                heapq.heappush(open_heap, (g[state] + weight * hs, -g[state], seq, state))
            closed = set()
            incons = {}
            t_iter = time.perf_counter()
            while open_heap:
                f, negg, _, state = heapq.heappop(open_heap)
                if f >= incumbent - EPS:
                    break
                if -negg > g[state] + EPS:
                    continue  # stale entry
                if state in closed:
                    continue
                closed.add(state)
                stats.expansions += 1
                if self._is_goal(self.pose_of(state)):
                    best_goal = state
                    incumbent = g[state]
                    break
                if deadline is not None and time.perf_counter() > deadline:
                    out_of_time = True
                    break
                for cost, _steps, succ in self.expand(state):
                    ng = g[state] + cost
                    if ng < g.get(succ, math.inf) - EPS:
                        if succ not in g:
                            stats.generated += 1
                        g[succ] = ng
                        parent[succ] = state
                        if succ in closed:
                            incons[succ] = None
                        else:
                            hs = h_of(succ)
                            if math.isinf(hs):
                                continue
                            seq += 1
                            heapq.heappush(open_heap, (ng + weight * hs, -ng, seq, succ))
            stats.iterations.append(
                (weight, incumbent, time.perf_counter() - t_iter)
            )
            if out_of_time or (deadline is not None and time.perf_counter() > deadline):
                break
            frontier = [s for _, _, _, s in open_heap if g.get(s, math.inf) < math.inf]
            frontier.extend(incons)
            if not frontier and best_goal is None:
                break  # graph exhausted, nothing to improve

        if best_goal is None:
            return None, stats
        return self._reconstruct(s0, best_goal, g, parent), stats

    def _start_pose(self, start: Pose) -> Pose:
        level = min(self.levels.boxes)
        pose = _pose_at_level(start, level, self.levels)
        if not self.levels.in_box(level, pose.x, pose.y):
            raise ValueError("start pose lies outside its level window")
        return pose

    def _validate_goal(self, goal: Pose) -> None:
        lvl = goal.level
        if lvl in self.levels.boxes and self.levels.in_box(lvl, goal.x, goal.y):
            snapped = _pose_at_level(goal, lvl, self.levels)
            if not math.isfinite(self._cost(snapped)):
                raise ValueError("goal pose is infeasible")
            return
        l3 = self.levels.l3
        ix, iy, theta = snap_pose_to_l3(goal, l3.grid)
        if not l3.grid.in_bounds(ix, iy):
            raise ValueError("goal lies outside the map")
        if not math.isfinite(float(l3.area_cost[theta, iy, ix])):
            raise ValueError("goal pose is infeasible")

    def _reconstruct(self, s0, goal_state, g, parent) -> Path:
        chain = []
        state = goal_state
        while state != s0:
            prev = parent[state]
            chain.append((prev, state))
            state = prev
        chain.reverse()
        steps = [PathStep("start", s0[0], self.pose_of(s0), 0.0, 0.0)]
        total = 0.0
        for prev, state in chain:
            edge = self._edge_between(prev, state)
            for label, level, pose, cost, detail in edge:
                total += cost
                steps.append(PathStep(label, level, pose, cost, total, detail))
        path = Path(steps)
        # g[goal] may sit above the true chain cost: when a closed state's g
        # improves it moves to INCONS and its children keep the stale value
        # until the next weight pass, while the re-derived edges here are
        # always the current minima.  The chain can therefore only be cheaper.
        assert path.cost <= g[goal_state] + 1e-6
        return path

    def _edge_between(self, prev, state):
        """Re-derive the maneuver steps for one settled search edge."""
        best = None
        for cost, edge_steps, succ in self.expand(prev):
            if succ == state and (best is None or cost < best[0]):
                best = (cost, edge_steps)
        if best is None:
            raise RuntimeError("parent edge vanished during reconstruction")
        return best[1]


def _base_shift_axis(pose: Pose, sign: int):
    """Cell offset of a base shift, or None off the grid axes."""
    quarter = LEVEL_ORIENTATIONS[pose.level] // 4
    if pose.theta % quarter:
        return None
    axis = ((1, 0), (0, 1), (-1, 0), (0, -1))[pose.theta // quarter]
    return (sign * axis[0], sign * axis[1])


def _pose_at_level(pose: Pose, level: int, levels: LevelSet) -> Pose:
    """Re-express a pose at ``level`` on that level's lattice (no cost)."""
    if pose.level == level:
        grid = levels.reps[level].grid
        ix, iy = grid.index_of(pose.x, pose.y)
        x, y = grid.world_of(ix, iy)
        res = grid.resolution
        if level == 1:
            return PoseL1(x, y, pose.theta, tuple(snap_index(f, res) * res for f in pose.feet))
        if level == 2:
            return PoseL2(x, y, pose.theta, tuple(snap_index(f, res) * res for f in pose.pairs))
        return PoseL3(x, y, pose.theta)
    grid = levels.reps[level].grid
    ix, iy = grid.index_of(pose.x, pose.y)
    x, y = grid.world_of(ix, iy)
    n_from = LEVEL_ORIENTATIONS[pose.level]
    n_to = LEVEL_ORIENTATIONS[level]
    theta = round_half_up(pose.theta * n_to / n_from) % n_to
    res = grid.resolution
    if level == 1:
        feet = pose.feet if pose.level == 1 else _spread_offsets(pose)
        return PoseL1(x, y, theta, tuple(snap_index(f, res) * res for f in feet))
    if level == 2:
        pairs = _merged_offsets(pose)
        return PoseL2(x, y, theta, tuple(snap_index(p, res) * res for p in pairs))
    return PoseL3(x, y, theta)


def _spread_offsets(pose: Pose):
    if pose.level == 2:
        return (pose.pairs[0], pose.pairs[0], pose.pairs[1], pose.pairs[1])
    return (0.0, 0.0, 0.0, 0.0)


def _merged_offsets(pose: Pose):
    if pose.level == 1:
        return ((pose.feet[0] + pose.feet[1]) / 2.0, (pose.feet[2] + pose.feet[3]) / 2.0)
    return (0.0, 0.0)


def plan(levels: LevelSet, start: Pose, goal: Pose, cfg: PlannerConfig):
    """Convenience wrapper: one query against a prepared level set."""
    return Planner(levels, cfg).plan(start, goal)


# ---------------------------------------------------------------------------
# path serialization


PATH_SCHEMA = "hybrid-path/1"


def _pose_payload(pose: Pose) -> dict:
    payload = {"level": pose.level, "x": pose.x, "y": pose.y, "theta": pose.theta}
    if pose.level == 1:
        payload["offsets"] = list(pose.feet)
    elif pose.level == 2:
        payload["offsets"] = list(pose.pairs)
    else:
        payload["offsets"] = []
    return payload


def path_to_json(path, stats: SearchStats, include_timing: bool = True) -> str:
    """Serialize a plan (or an unreachable verdict) as a stable JSON document.

    With ``include_timing=False`` every wall-clock field is dropped, which
    makes the output byte-for-byte reproducible across runs.
    """
    doc = {
        "schema": PATH_SCHEMA,
        "result": "ok" if path is not None else "unreachable",
        "stats": {
            "expansions": stats.expansions,
            "generated": stats.generated,
            "heuristic": stats.heuristic,
            "iterations": [
                {"weight": w, "cost": None if math.isinf(c) else c}
                | ({"time_s": t} if include_timing else {})
                for w, c, t in stats.iterations
            ],
        },
    }
    if stats.fallback:
        doc["stats"]["fallback"] = stats.fallback
    if include_timing:
        doc["stats"]["preprocessing_s"] = stats.preprocessing_s
    if path is not None:
        doc["total_cost"] = path.cost
        doc["segments"] = [
            {"level": lvl, "first": a, "last": b} for lvl, a, b in path.segments()
        ]
        doc["steps"] = [
            {
                "label": s.label,
                "level": s.level,
                "pose": _pose_payload(s.pose),
                "cost": s.cost,
                "total": s.total,
            }
            | ({"detail": s.detail} if s.detail else {})
            for s in path.steps
        ]
    return json.dumps(doc, sort_keys=True, indent=2)
