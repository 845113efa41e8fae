"""Coarse-to-fine path refinement and the execution simulation.

A coarse path segment is refined one level down by re-expressing its
endpoints on the finer lattice, rasterizing the interpolated base poses
between them into a corridor, and running a small weighted A* over the
finer maneuver set restricted to that corridor.  The segment is not
refineable when an endpoint is infeasible at the finer level or when the
refined cost differs from the coarse estimate by more than the configured
tolerance; both verdicts mean the coarse level assessed the terrain
wrongly and the caller should re-plan.

simulate_execution() drives a planned path the way the robot would: one
maneuver at a time, re-centering the level windows on the robot, refining
the leading coarse segments as soon as a finer window covers them, and
triggering a full re-plan whenever a verdict comes back not refineable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import heapq

from trinav.actions import neighbors
from trinav.config import LEVEL_ORIENTATIONS, PlannerConfig
from trinav.gridmap import HeightGrid
from trinav.levels import EPS, build_level1, build_level2, build_level3
from trinav.robot import (
    Pose,
    demote_l2_l1,
    demote_l3_l2,
    pose_cost,
    round_half_up,
    snap_index,
    snap_pose_to_l3,
)
from trinav.search import (
    Path,
    PathStep,
    Planner,
    _pose_at_level,
    build_level_set,
    euclidean_heuristic,
)

INFLATE_POS = 2  # corridor dilation, position cells
INFLATE_THETA = 1  # corridor dilation, orientation steps

# zero-distance bookkeeping steps; everything else is a real maneuver
_GLUE_LABELS = ("start", "promote", "demote", "snap")

_EXECUTION_STEP_LIMIT = 100_000


# ---------------------------------------------------------------------------
# corridors


@dataclass(frozen=True)
class Corridor:
    """Allowed base poses for one local refinement search.

    Cells are (ix, iy, theta) on the target level's lattice.  Foot and pair
    offsets are deliberately unconstrained: the corridor restricts where the
    base may go, not how the feet get there.
    """

    level: int
    cells: frozenset

    def contains(self, grid, pose: Pose) -> bool:
        ix, iy = grid.index_of(pose.x, pose.y)
        return (ix, iy, pose.theta) in self.cells


def _interpolated_cells(start: Pose, goal: Pose, grid) -> set:
    """Lattice rasterization of the pose interpolation start -> goal."""
    n_theta = LEVEL_ORIENTATIONS[start.level]
    dth = (goal.theta - start.theta + n_theta // 2) % n_theta - n_theta // 2
    dist = math.hypot(goal.x - start.x, goal.y - start.y)
    # half-cell / half-step sampling so no lattice pose is skipped over
    n = max(1, math.ceil(dist / (grid.resolution * 0.5)), 2 * abs(dth))
    cells = set()
    for i in range(n + 1):
        t = i / n
        x = start.x + t * (goal.x - start.x)
        y = start.y + t * (goal.y - start.y)
        theta = round_half_up(start.theta + t * dth) % n_theta
        cells.add(grid.index_of(x, y) + (theta,))
    return cells


def _inflate(raw: set, level: int, grid) -> Corridor:
    n_theta = LEVEL_ORIENTATIONS[level]
    cells = set()
    for ix, iy, th in raw:
        for oy in range(-INFLATE_POS, INFLATE_POS + 1):
            for ox in range(-INFLATE_POS, INFLATE_POS + 1):
                cx, cy = ix + ox, iy + oy
                if not grid.in_bounds(cx, cy):
                    continue
                for dt in range(-INFLATE_THETA, INFLATE_THETA + 1):
                    cells.add((cx, cy, (th + dt) % n_theta))
    return Corridor(level, frozenset(cells))


def build_corridor(start: Pose, goal: Pose, grid) -> Corridor:
    """Rasterized pose interpolation dilated by 2 cells and 1 theta step."""
    if start.level != goal.level:
        raise ValueError("corridor endpoints must share a level")
    return _inflate(_interpolated_cells(start, goal, grid), start.level, grid)


def build_segment_corridor(poses, grid) -> Corridor:
    """Union of the pairwise corridors along ``poses``."""
    raw = set()
    for a, b in zip(poses, poses[1:]):
        if a.level != b.level:
            raise ValueError("corridor poses must share a level")
        raw |= _interpolated_cells(a, b, grid)
    if len(poses) == 1:
        raw |= _interpolated_cells(poses[0], poses[0], grid)
    return _inflate(raw, poses[0].level, grid)


# ---------------------------------------------------------------------------
# refinement outcomes


def _rel_diff(original: float, refined: float) -> float:
    if not math.isfinite(refined):
        return math.inf
    if original <= EPS:
        return 0.0 if refined <= EPS else math.inf
    return abs(refined - original) / original


def cost_verdict(original: float, refined: float, tolerance: float) -> str:
    """Empty string when the refined cost is acceptably close to the estimate."""
    return "" if _rel_diff(original, refined) <= tolerance else "cost-difference"


@dataclass(frozen=True)
class RefineOutcome:
    """Result of refining one coarse segment one level down.

    ``refined`` is the finer-level path when the corridor search found one,
    even for a cost-difference verdict (the caller may want to inspect it);
    ``reason`` is empty iff the segment is refineable.
    """

    refined: Path | None
    original_cost: float
    refined_cost: float
    reason: str = ""  # "" | start-infeasible | goal-infeasible | no-path | cost-difference
    endpoints: tuple = ()  # demoted (start, goal)

    @property
    def refineable(self) -> bool:
        return not self.reason

    @property
    def relative_difference(self) -> float:
        return _rel_diff(self.original_cost, self.refined_cost)


# ---------------------------------------------------------------------------
# the corridor-restricted local search


def _state_key(grid, pose: Pose):
    ix, iy = grid.index_of(pose.x, pose.y)
    res = grid.resolution
    if pose.level == 1:
        offs = tuple(snap_index(f, res) for f in pose.feet)
    elif pose.level == 2:
        offs = tuple(snap_index(p, res) for p in pose.pairs)
    else:
        offs = ()
    return (ix, iy, pose.theta) + offs


def _corridor_search(rep, cfg: PlannerConfig, corridor: Corridor, start: Pose, goal: Pose):
    """Weighted A* over one level's maneuvers, gated to the corridor.

    The goal is the exact demoted pose, offsets included, so a refined
    segment always ends where the next one begins.
    """
    grid = rep.grid
    weight = cfg.refine_weight
    s_key = _state_key(grid, start)
    goal_key = _state_key(grid, goal)
    g = {s_key: 0.0}
    via = {s_key: None}  # key -> (parent key, maneuver)
    poses = {s_key: start}
    heap = [(weight * euclidean_heuristic(start, goal, cfg), 0, s_key)]
    seq = 0
    closed = set()
    while heap:
        _, _, key = heapq.heappop(heap)
        if key in closed:
            continue
        closed.add(key)
        if key == goal_key:
            return _backtrack(rep.level, poses, via, key)
        pose = poses[key]
        for m in neighbors(rep, cfg, pose):
            if not math.isfinite(m.cost) or not corridor.contains(grid, m.target):
                continue
            nk = _state_key(grid, m.target)
            ng = g[key] + m.cost
            if ng < g.get(nk, math.inf) - EPS:
                g[nk] = ng
                via[nk] = (key, m)
                poses[nk] = m.target
                seq += 1
                h = euclidean_heuristic(m.target, goal, cfg)
                heapq.heappush(heap, (ng + weight * h, seq, nk))
    return None


def _backtrack(level: int, poses, via, key) -> Path:
    moves = []
    while via[key] is not None:
        key, m = via[key]
        moves.append(m)
    moves.reverse()
    steps = [PathStep("start", level, poses[key], 0.0, 0.0)]
    total = 0.0
    for m in moves:
        total += m.cost
        steps.append(PathStep(m.kind, level, m.target, m.cost, total, m.detail))
    return Path(steps)


# ---------------------------------------------------------------------------
# segment refinement


def _refine(rep, cfg: PlannerConfig, demoted, original_cost: float) -> RefineOutcome:
    start, goal = demoted[0], demoted[-1]
    for which, pose in (("start", start), ("goal", goal)):
        if not math.isfinite(pose_cost(rep, cfg, pose)):
            return RefineOutcome(
                None, original_cost, math.inf, f"{which}-infeasible", (start, goal)
            )
    corridor = build_segment_corridor(demoted, rep.grid)
    path = _corridor_search(rep, cfg, corridor, start, goal)
    if path is None:
        return RefineOutcome(None, original_cost, math.inf, "no-path", (start, goal))
    reason = cost_verdict(original_cost, path.cost, cfg.refine_tolerance)
    return RefineOutcome(path, original_cost, path.cost, reason, (start, goal))


def refine_l2_segment(seg, l1, cfg: PlannerConfig, original_cost: float) -> RefineOutcome:
    """Refine one pair of successive Level-2 poses into a Level-1 path."""
    a, b = seg
    return _refine(l1, cfg, [demote_l2_l1(a, l1), demote_l2_l1(b, l1)], original_cost)


def refine_l3_segment(seg, l2, cfg: PlannerConfig, original_cost: float) -> RefineOutcome:
    """Refine a whole Level-3 segment into a Level-2 path.

    The corridor is the union of the pairwise corridors over all successive
    pose pairs, so the local search may cut corners the coarse path could
    not, but never leave the segment's neighborhood.
    """
    if len(seg) < 2:
        raise ValueError("a segment needs at least two poses")
    return _refine(l2, cfg, [demote_l3_l2(p, l2) for p in seg], original_cost)


# ---------------------------------------------------------------------------
# whole-path refinement (offline: full-coverage fine representations)


def _runs(steps):
    runs = []
    for s in steps:
        if runs and runs[-1][0] == s.level:
            runs[-1][1].append(s)
        else:
            runs.append((s.level, [s]))
    return runs


def _chain_l2_pairs(poses, costs, l1, cfg: PlannerConfig):
    """Refine successive L2 pose pairs; (list of L1 paths or None, outcomes)."""
    parts = []
    outcomes = []
    for i in range(1, len(poses)):
        outcome = refine_l2_segment((poses[i - 1], poses[i]), l1, cfg, costs[i])
        outcomes.append(outcome)
        if not outcome.refineable:
            return None, outcomes
        parts.append(outcome.refined)
    return parts, outcomes


def refine_path_to_l1(path: Path, map_grid: HeightGrid, cfg: PlannerConfig):
    """Refine every coarse run of ``path`` down to Level 1.

    Assumes the whole map has been observed: full-coverage Level 1/2
    representations are built once and Level-3 runs chain through Level 2.
    Returns (refined Path, outcomes); the path is None as soon as any
    segment is not refineable, with the failing outcome last in the list.
    Promotion snaps are kept as zero-length "snap" steps so the refined
    total stays comparable with the estimated total.
    """
    l1 = build_level1(map_grid, cfg)
    l2 = build_level2(map_grid, cfg)
    flat: list = []  # (label, level, pose, cost, detail)
    outcomes: list = []
    for level, steps in _runs(path.steps):
        if level == 1:
            flat.extend((s.label, 1, s.pose, s.cost, s.detail) for s in steps)
            continue
        glue = sum(s.cost for s in steps if s.label in _GLUE_LABELS)
        poses = [s.pose for s in steps]
        costs = [0.0 if s.label in _GLUE_LABELS else s.cost for s in steps]
        entry_l1 = demote_l2_l1(demote_l3_l2(poses[0], l2) if level == 3 else poses[0], l1)
        flat.append(("start" if not flat else "snap", 1, entry_l1, glue, ""))
        if len(poses) < 2:
            continue
        if level == 3:
            outcome = refine_l3_segment(poses, l2, cfg, sum(costs))
            outcomes.append(outcome)
            if not outcome.refineable:
                return None, outcomes
            poses = [s.pose for s in outcome.refined.steps]
            costs = [s.cost for s in outcome.refined.steps]
        parts, more = _chain_l2_pairs(poses, costs, l1, cfg)
        outcomes.extend(more)
        if parts is None:
            return None, outcomes
        for part in parts:
            flat.extend((s.label, 1, s.pose, s.cost, s.detail) for s in part.steps[1:])
    total = 0.0
    out_steps = []
    for label, lvl, pose, cost, detail in flat:
        total += cost
        out_steps.append(PathStep(label, lvl, pose, cost, total, detail))
    return Path(out_steps), outcomes


# ---------------------------------------------------------------------------
# continuous refinement / execution simulation


def _pose_token(pose: Pose) -> str:
    return f"L{pose.level}:{pose.x:.4f}:{pose.y:.4f}:{pose.theta}"


def _log_outcome(events, outcome: RefineOutcome, level: int, poses) -> None:
    kind = "refined" if outcome.refineable else "not-refineable"
    line = (
        f"event={kind} level={level}"
        f" from={_pose_token(poses[0])} to={_pose_token(poses[-1])}"
        f" original={outcome.original_cost:.4f} refined={outcome.refined_cost:.4f}"
        f" rel={outcome.relative_difference:.4f}"
    )
    if not outcome.refineable:
        line += f" reason={outcome.reason}"
    events.append(line)


@dataclass
class ExecutionResult:
    reached: bool
    reason: str  # "" on success
    replans: int
    executed: Path
    events: list

    @property
    def final_pose(self) -> Pose:
        return self.executed.steps[-1].pose

    @property
    def cost(self) -> float:
        return self.executed.cost

    def log_text(self) -> str:
        return "".join(line + "\n" for line in self.events)


def _refine_covered(remaining, levels, cfg: PlannerConfig, robot_pose: Pose, events) -> bool:
    """Refine the leading coarse runs that the finer windows now cover.

    Mutates ``remaining`` in place until its head is a Level-1 step (or a
    coarse step whose finer level is not planned at all).  Returns False
    when a covered segment is not refineable; the caller re-plans.
    """
    while remaining and remaining[0].level > 1:
        level = remaining[0].level
        finer = level - 1
        if finer not in levels.boxes:
            return True  # single-level execution: nothing to refine into
        run_len = 1
        while run_len < len(remaining) and remaining[run_len].level == level:
            run_len += 1
        covered = 0
        while covered < run_len and levels.in_box(
            finer, remaining[covered].pose.x, remaining[covered].pose.y
        ):
            covered += 1
        if covered == 0:
            return False  # coarse step right at the robot yet outside its window
        grid = levels.reps[level].grid
        entry = _pose_at_level(robot_pose, level, levels)
        entry_key = _state_key(grid, entry)
        glue = 0.0
        pending = 0.0
        poses = [entry]
        costs = [0.0]
        for s in remaining[:covered]:
            if s.label in _GLUE_LABELS:
                # A snap at the entry pose is pure relabeling.  A displaced
                # snap (lattice re-expressions disagreeing across the seam)
                # estimates real travel, so charge it to the next maneuver;
                # keeping it as its own pose would pit the estimate against
                # the exact finer cost of the same hop and fail the verdict.
                if len(poses) == 1 and _state_key(grid, s.pose) == entry_key:
                    glue += s.cost
                else:
                    pending += s.cost
                continue
            poses.append(s.pose)
            costs.append(s.cost + pending)
            pending = 0.0
        glue += pending
        if len(poses) < 2:
            # a lone promotion: collapse it to a snap one level down
            fine_pose = _pose_at_level(robot_pose, finer, levels)
            splice = [PathStep("snap", finer, fine_pose, glue, 0.0)]
        elif level == 3:
            outcome = refine_l3_segment(poses, levels.reps[2], cfg, sum(costs))
            _log_outcome(events, outcome, 3, poses)
            if not outcome.refineable:
                return False
            refined = outcome.refined.steps
            splice = [PathStep("snap", 2, refined[0].pose, glue, 0.0)]
            splice += [PathStep(s.label, 2, s.pose, s.cost, 0.0, s.detail) for s in refined[1:]]
        else:
            parts = []
            ok = True
            for i in range(1, len(poses)):
                outcome = refine_l2_segment(
                    (poses[i - 1], poses[i]), levels.reps[1], cfg, costs[i]
                )
                _log_outcome(events, outcome, 2, (poses[i - 1], poses[i]))
                if not outcome.refineable:
                    ok = False
                    break
                parts.append(outcome.refined)
            if not ok:
                return False
            splice = [PathStep("snap", 1, parts[0].steps[0].pose, glue, 0.0)]
            for part in parts:
                splice += [PathStep(s.label, 1, s.pose, s.cost, 0.0, s.detail) for s in part.steps[1:]]
        remaining[:covered] = splice
    return True


def simulate_execution(
    path: Path, ground_truth: HeightGrid, cfg: PlannerConfig, goal: Pose | None = None
) -> ExecutionResult:
    """Execute ``path`` maneuver by maneuver against the ground-truth map.

    After every maneuver the level windows are re-centered on the robot and
    rebuilt from ``ground_truth`` (the stand-in for fresh sensor data), and
    the leading coarse segments are refined once the finer windows cover
    them, so in combined mode the next maneuver to execute is always a
    Level-1 maneuver.  A not-refineable verdict triggers a full re-plan
    from the current pose; more than cfg.replan_limit re-plans fail the
    execution.  The plan itself may come from an older map; that is the
    point of the exercise.
    """
    if goal is None:
        goal = path.steps[-1].pose
    pose = path.steps[0].pose
    executed = [PathStep("start", pose.level, pose, 0.0, 0.0)]
    total = 0.0
    remaining = list(path.steps[1:])
    events: list = []
    replans = 0
    reason = ""
    goal_l3 = None
    l3grid = None
    for _ in range(_EXECUTION_STEP_LIMIT):
        if not remaining:
            break
        levels = build_level_set(ground_truth, cfg, (pose.x, pose.y))
        if l3grid is None:
            l3grid = levels.l3.grid
            goal_l3 = snap_pose_to_l3(goal, l3grid)
        if not _refine_covered(remaining, levels, cfg, pose, events):
            replans += 1
            if replans > cfg.replan_limit:
                reason = "replan-limit-exceeded"
                break
            try:
                new_path, stats = Planner(levels, cfg).plan(pose, goal)
            except ValueError as err:
                events.append(f"event=replan-failed error={err}")
                reason = "replan-unreachable"
                break
            if new_path is None:
                reason = "replan-unreachable"
                break
            events.append(
                f"event=replanned at={_pose_token(pose)}"
                f" cost={new_path.cost:.4f} expansions={stats.expansions}"
            )
            remaining = list(new_path.steps[1:])
            continue
        step = remaining.pop(0)
        total += step.cost
        executed.append(PathStep(step.label, step.level, step.pose, step.cost, total, step.detail))
        pose = step.pose
    else:
        reason = "step-limit-exceeded"
    if l3grid is None:
        l3grid = build_level3(ground_truth, cfg).grid
        goal_l3 = snap_pose_to_l3(goal, l3grid)
    reached = not reason and not remaining and snap_pose_to_l3(pose, l3grid) == goal_l3
    if not reached and not reason:
        reason = "ended-off-goal"
    return ExecutionResult(reached, "" if reached else reason, replans, Path(executed), events)
