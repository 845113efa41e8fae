"""Maneuver generation: driving, turning, and stepping actions per level.

Every maneuver constructor returns None when the action is infeasible, so
the neighbor enumerators and the calibration scripts share one code path
and one cost model.

Costs are dimensionless effort: driving costs distance x mean pose cost,
turning costs the base half-diagonal arc x mean pose cost, stepping costs
a fixed effort constant plus a height-difference term.  Level-2 pair
actions cost the sum of their two constituent single-foot actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from trinav.config import LEVEL_ORIENTATIONS, PlannerConfig
from trinav.levels import EPS, _swept_offsets, ang_dist
from trinav.robot import Pose, PoseL1, PoseL2, PoseL3, pair_cost_grids, pose_cost, snap_index

# 5x5 translation block minus center and corners: 20 driving targets
DRIVE_OFFSETS = tuple(
    (dx, dy)
    for dy in range(-2, 3)
    for dx in range(-2, 3)
    if (dx, dy) != (0, 0) and not (abs(dx) == 2 and abs(dy) == 2)
)

_AXES = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


@dataclass(frozen=True)
class Maneuver:
    kind: str  # drive | turn | step | base_shift | foot_shift
    target: Pose
    cost: float
    detail: str = ""


def _cost_fn(rep, cfg, cost_fn):
    if cost_fn is not None:
        return cost_fn
    return lambda pose: pose_cost(rep, cfg, pose)


def _axis_heading(pose: Pose):
    """Unit axis vector when the heading lies on a grid axis, else None."""
    quarter = LEVEL_ORIENTATIONS[pose.level] // 4
    if pose.theta % quarter:
        return None
    return _AXES[pose.theta // quarter]


def near_obstacle(rep, pose: Pose) -> bool:
    """True when the base cell is within the obstacle vicinity mask."""
    if pose.level == 3:
        return False
    ix, iy = rep.grid.index_of(pose.x, pose.y)
    if not rep.grid.in_bounds(ix, iy):
        return False
    return bool(rep.near_inf[iy, ix])


# ---------------------------------------------------------------------------
# sweep helpers


def _swept_ok(mask: np.ndarray, sx: int, sy: int, dx: int, dy: int) -> bool:
    """All interior swept cells between (sx,sy) and (sx+dx,sy+dy) pass mask."""
    h, w = mask.shape
    for ox, oy in _swept_offsets(dx, dy):
        cx, cy = sx + ox, sy + oy
        if not (0 <= cx < w and 0 <= cy < h) or not mask[cy, cx]:
            return False
    return True


def _contact_cells_at(rep, cfg: PlannerConfig, pose: Pose):
    """Ground-contact reference cells: foot cells (L1) or pair centers (L2)."""
    grid = rep.grid
    c, s = math.cos(pose.angle), math.sin(pose.angle)
    cells = []
    if pose.level == 1:
        for i in range(4):
            sag0, lat = cfg.geometry.foot_home(i)
            sag = sag0 + pose.feet[i]
            cells.append(grid.index_of(pose.x + c * sag - s * lat, pose.y + s * sag + c * lat))
    else:
        for pair_i, sign in enumerate((1.0, -1.0)):
            sag = sign * cfg.geometry.sagittal_neutral + pose.pairs[pair_i]
            cells.append(grid.index_of(pose.x + c * sag, pose.y + s * sag))
    return cells


def _ground_mask(rep, cfg: PlannerConfig, theta: int) -> np.ndarray:
    """Cells a rolling contact may cross: drivable terrain for this level."""
    if rep.level == 1:
        return rep.drivable
    gated, _ = pair_cost_grids(rep, cfg, theta)
    return np.isfinite(gated)


# ---------------------------------------------------------------------------
# driving and turning


def drive_move(rep, cfg: PlannerConfig, pose: Pose, dx: int, dy: int, cost_fn=None):
    """Translate the base by (dx, dy) grid cells, feet rolling along."""
    cost_of = _cost_fn(rep, cfg, cost_fn)
    c0 = cost_of(pose)
    if not math.isfinite(c0):
        return None
    res = rep.grid.resolution
    if pose.level == 1:
        target = PoseL1(pose.x + dx * res, pose.y + dy * res, pose.theta, pose.feet)
    elif pose.level == 2:
        target = PoseL2(pose.x + dx * res, pose.y + dy * res, pose.theta, pose.pairs)
    else:
        target = PoseL3(pose.x + dx * res, pose.y + dy * res, pose.theta)
    c1 = cost_of(target)
    if not math.isfinite(c1):
        return None
    if pose.level == 3:
        if not _l3_move_allowed(rep, pose, dx, dy):
            return None
    else:
        mask = _ground_mask(rep, cfg, pose.theta)
        for sx, sy in _contact_cells_at(rep, cfg, pose):
            if not _swept_ok(mask, sx, sy, dx, dy):
                return None
    dist = math.hypot(dx, dy) * res
    return Maneuver("drive", target, dist * (c0 + c1) / 2.0)


def _l3_move_allowed(l3, pose: PoseL3, dx: int, dy: int) -> bool:
    """Step cells restrict moves to directions parallel/orthogonal to the
    step orientation, within one discrete orientation step."""
    grid = l3.grid
    sx, sy = grid.index_of(pose.x, pose.y)
    beta = math.atan2(dy, dx)
    tol = 2.0 * math.pi / LEVEL_ORIENTATIONS[3]
    path = [(0, 0), (dx, dy), *_swept_offsets(dx, dy)]
    for ox, oy in path:
        cx, cy = sx + ox, sy + oy
        if not grid.in_bounds(cx, cy):
            return False
        # interior cells must be traversable for this heading as well
        if (ox, oy) not in ((0, 0), (dx, dy)):
            if not math.isfinite(l3.area_cost[pose.theta % LEVEL_ORIENTATIONS[3], cy, cx]):
                return False
        if l3.step_mask[cy, cx]:
            alpha = l3.classes.alpha[cy, cx]
            if math.isnan(alpha):
                return False
            if ang_dist(beta, alpha, period=math.pi / 2.0) >= tol - 1e-12:
                return False
    return True


def turn_move(rep, cfg: PlannerConfig, pose: Pose, dtheta: int, cost_fn=None):
    """Rotate in place by one orientation index in either direction."""
    cost_of = _cost_fn(rep, cfg, cost_fn)
    c0 = cost_of(pose)
    if not math.isfinite(c0):
        return None
    n = LEVEL_ORIENTATIONS[pose.level]
    ntheta = (pose.theta + dtheta) % n
    if pose.level == 1:
        target = PoseL1(pose.x, pose.y, ntheta, pose.feet)
    elif pose.level == 2:
        target = PoseL2(pose.x, pose.y, ntheta, pose.pairs)
    else:
        target = PoseL3(pose.x, pose.y, ntheta)
    c1 = cost_of(target)
    if not math.isfinite(c1):
        return None
    arc = (2.0 * math.pi / n) * abs(dtheta) * cfg.geometry.half_diagonal
    return Maneuver("turn", target, arc * (c0 + c1) / 2.0)


def driving_neighbors(rep, cfg: PlannerConfig, pose: Pose, cost_fn=None):
    out = []
    for dx, dy in DRIVE_OFFSETS:
        m = drive_move(rep, cfg, pose, dx, dy, cost_fn)
        if m is not None:
            out.append(m)
    for dtheta in (-1, 1):
        m = turn_move(rep, cfg, pose, dtheta, cost_fn)
        if m is not None:
            out.append(m)
    return out


# ---------------------------------------------------------------------------
# stepping maneuvers (Levels 1 and 2 only)


def _stance_offsets(pose: Pose):
    return pose.feet if pose.level == 1 else pose.pairs


def _with_offset(pose: Pose, index: int, value: float) -> Pose:
    if pose.level == 1:
        feet = list(pose.feet)
        feet[index] = value
        return PoseL1(pose.x, pose.y, pose.theta, tuple(feet))
    pairs = list(pose.pairs)
    pairs[index] = value
    return PoseL2(pose.x, pose.y, pose.theta, tuple(pairs))


def _offset_cell(rep, cfg: PlannerConfig, pose: Pose, index: int, offset: float):
    """Grid cell of contact ``index`` if its longitudinal offset were ``offset``."""
    c, s = math.cos(pose.angle), math.sin(pose.angle)
    if pose.level == 1:
        sag0, lat = cfg.geometry.foot_home(index)
    else:
        sag0 = cfg.geometry.sagittal_neutral * (1.0 if index == 0 else -1.0)
        lat = 0.0
    sag = sag0 + offset
    return rep.grid.index_of(pose.x + c * sag - s * lat, pose.y + s * sag + c * lat)


def _height_at(rep, ix: int, iy: int) -> float:
    if not rep.grid.in_bounds(ix, iy):
        return math.nan
    return float(rep.height.data[iy, ix])


def _ground_cost_at(rep, cfg: PlannerConfig, theta: int, ix: int, iy: int) -> float:
    if not rep.grid.in_bounds(ix, iy):
        return math.inf
    if rep.level == 1:
        return float(rep.foot_cost[iy, ix])
    gated, _ = pair_cost_grids(rep, cfg, theta)
    v = float(gated[iy, ix])
    return math.inf if math.isnan(v) else v


def step_move(rep, cfg: PlannerConfig, pose: Pose, index: int, target_offset: float, cost_fn=None):
    """Abstract step: lift contact ``index`` and land it at ``target_offset``.

    Feasible when the landing ground is drivable, the takeoff-to-landing
    height difference and the swept clearance stay within the step height
    limit, the step length stays within the step length limit, and the
    swept line actually crosses blocked ground (otherwise a shift or a
    drive does the job).
    """
    if pose.level == 3:
        return None
    geom = cfg.geometry
    offsets = _stance_offsets(pose)
    f0 = offsets[index]
    if abs(target_offset) > geom.sagittal_travel + EPS:
        return None
    step_len = abs(target_offset - f0)
    if step_len < EPS or step_len > cfg.step_max_length + EPS:
        return None

    sx, sy = _offset_cell(rep, cfg, pose, index, f0)
    tx, ty = _offset_cell(rep, cfg, pose, index, target_offset)
    h0 = _height_at(rep, sx, sy)
    h1 = _height_at(rep, tx, ty)
    if math.isnan(h0) or math.isnan(h1):
        return None
    dh = h1 - h0
    if abs(dh) > cfg.step_max_height + EPS:
        return None
    if not math.isfinite(_ground_cost_at(rep, cfg, pose.theta, tx, ty)):
        return None

    # swept line: known heights, bounded clearance, at least one blocked cell
    mask = _ground_mask(rep, cfg, pose.theta)
    swept = _swept_offsets(tx - sx, ty - sy)
    if not swept:
        return None
    top = max(h0, h1)
    crossed_blocked = False
    for ox, oy in swept:
        cx, cy = sx + ox, sy + oy
        hs = _height_at(rep, cx, cy)
        if math.isnan(hs):
            return None
        if hs - top > cfg.step_max_height + EPS:
            return None
        if not mask[cy, cx]:
            crossed_blocked = True
    if not crossed_blocked:
        return None

    feet_per_contact = 1 if pose.level == 1 else 2
    cost = feet_per_contact * (cfg.step_cost_base + cfg.step_cost_height * abs(dh))
    cost += _misalign_penalty(rep, cfg, pose, index, target_offset, h1)
    target = _with_offset(pose, index, target_offset)
    cost_of = _cost_fn(rep, cfg, cost_fn)
    if not math.isfinite(cost_of(target)):
        return None
    return Maneuver("step", target, cost, detail=f"contact {index}")


def _misalign_penalty(rep, cfg: PlannerConfig, pose: Pose, index: int, offset: float, h_land: float) -> float:
    """Penalty when paired contacts share a longitudinal position but stand
    on different heights (biases stair crossings onto aligned treads)."""
    if pose.level == 1:
        partner = index ^ 1
        if abs(pose.feet[partner] - offset) > EPS:
            return 0.0
        px, py = _offset_cell(rep, cfg, pose, partner, pose.feet[partner])
        h_partner = _height_at(rep, px, py)
        if math.isnan(h_partner):
            return 0.0
        return cfg.misalign_coeff * abs(h_land - h_partner)
    # a pair's two areas always share the longitudinal position
    c, s = math.cos(pose.angle), math.sin(pose.angle)
    sag0 = cfg.geometry.sagittal_neutral * (1.0 if index == 0 else -1.0)
    lat = cfg.geometry.lateral_offset
    sag = sag0 + offset
    gap_heights = []
    for side in (1.0, -1.0):
        ax, ay = rep.grid.index_of(
            pose.x + c * sag - s * side * lat, pose.y + s * sag + c * side * lat
        )
        gap_heights.append(_height_at(rep, ax, ay))
    if any(math.isnan(h) for h in gap_heights):
        return 0.0
    return cfg.misalign_coeff * abs(gap_heights[0] - gap_heights[1])


def base_shift_move(rep, cfg: PlannerConfig, pose: Pose, sign: int, cost_fn=None):
    """Shift the base one cell along the heading over planted contacts.

    Only available on axis-aligned headings, where the shifted base stays
    on the grid lattice and the contact offsets stay on the foot lattice.
    """
    if pose.level == 3:
        return None
    axis = _axis_heading(pose)
    if axis is None:
        return None
    res = rep.grid.resolution
    offsets = _stance_offsets(pose)
    new_offsets = tuple(f - sign * res for f in offsets)
    if any(abs(f) > cfg.geometry.sagittal_travel + EPS for f in new_offsets):
        return None
    nx = pose.x + sign * axis[0] * res
    ny = pose.y + sign * axis[1] * res
    if pose.level == 1:
        target = PoseL1(nx, ny, pose.theta, new_offsets)
    else:
        target = PoseL2(nx, ny, pose.theta, new_offsets)
    cost_of = _cost_fn(rep, cfg, cost_fn)
    c0 = cost_of(pose)
    c1 = cost_of(target)
    if not (math.isfinite(c0) and math.isfinite(c1)):
        return None
    return Maneuver("base_shift", target, res * (c0 + c1) / 2.0)


def foot_shift_move(rep, cfg: PlannerConfig, pose: Pose, index: int, target_offset: float, cost_fn=None):
    """Slide contact ``index`` along the ground to ``target_offset``.

    The swept ground must be drivable the whole way.  Cost: distance x
    mean ground cost at the two ends (doubled for a Level-2 pair).
    """
    if pose.level == 3:
        return None
    geom = cfg.geometry
    offsets = _stance_offsets(pose)
    f0 = offsets[index]
    if abs(target_offset) > geom.sagittal_travel + EPS:
        return None
    dist = abs(target_offset - f0)
    if dist < EPS:
        return None
    sx, sy = _offset_cell(rep, cfg, pose, index, f0)
    tx, ty = _offset_cell(rep, cfg, pose, index, target_offset)
    g0 = _ground_cost_at(rep, cfg, pose.theta, sx, sy)
    g1 = _ground_cost_at(rep, cfg, pose.theta, tx, ty)
    if not (math.isfinite(g0) and math.isfinite(g1)):
        return None
    mask = _ground_mask(rep, cfg, pose.theta)
    if not _swept_ok(mask, sx, sy, tx - sx, ty - sy):
        return None
    target = _with_offset(pose, index, target_offset)
    cost_of = _cost_fn(rep, cfg, cost_fn)
    if not math.isfinite(cost_of(target)):
        return None
    feet_per_contact = 1 if pose.level == 1 else 2
    cost = feet_per_contact * dist * (g0 + g1) / 2.0
    return Maneuver("foot_shift", target, cost, detail=f"contact {index}")


def stepping_neighbors(rep, cfg: PlannerConfig, pose: Pose, cost_fn=None, include_base_shifts=True):
    """Stepping-related maneuvers; caller gates on near_obstacle().

    The search routes base shifts itself (they move the base and may leave
    the level window), so it asks for them separately.
    """
    if pose.level == 3:
        return []
    res = rep.grid.resolution
    offsets = _stance_offsets(pose)
    n_contacts = len(offsets)
    out = []
    for index in range(n_contacts):
        # abstract steps: nearest feasible landings first, capped per contact
        found = 0
        k = 1
        while found < cfg.step_targets_per_foot:
            target_offset = offsets[index] + k * res
            if target_offset > cfg.geometry.sagittal_travel + EPS:
                break
            m = step_move(rep, cfg, pose, index, snap_index(target_offset, res) * res, cost_fn)
            if m is not None:
                out.append(m)
                found += 1
            k += 1
        # forward shift (front contacts only)
        if index == 0 or (pose.level == 1 and index == 1):
            m = foot_shift_move(rep, cfg, pose, index, offsets[index] + res, cost_fn)
            if m is not None:
                out.append(m)
        # shift back toward the neutral stance
        if abs(offsets[index]) > EPS:
            m = foot_shift_move(rep, cfg, pose, index, 0.0, cost_fn)
            if m is not None:
                out.append(m)
    if include_base_shifts:
        for sign in (-1, 1):
            m = base_shift_move(rep, cfg, pose, sign, cost_fn)
            if m is not None:
                out.append(m)
    return out


def neighbors(rep, cfg: PlannerConfig, pose: Pose, cost_fn=None):
    """All maneuvers from ``pose``: driving everywhere, stepping near obstacles."""
    out = driving_neighbors(rep, cfg, pose, cost_fn)
    if near_obstacle(rep, pose):
        out.extend(stepping_neighbors(rep, cfg, pose, cost_fn))
    return out
