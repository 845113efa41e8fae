"""Robot poses per level, pose costs, and level promotion/demotion.

Pose cost = mean ground-contact cost of the feet (Level 1) or foot-area
pairs (Level 2) plus a body term for base clearance and terrain slope.
Level 3 poses average the terrain cell costs over the whole ground-contact
area and carry no separate body term.

Foot order: front-left, front-right, rear-left, rear-right.  Longitudinal
foot offsets are meters relative to the neutral stance, positive forward,
quantized to the level's grid resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from trinav.config import LEVEL_ORIENTATIONS, LEVEL_RESOLUTION, PlannerConfig
from trinav.levels import EPS, Level1Rep, Level2Rep, Level3Rep, rect_offsets


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def snap_index(value: float, res: float) -> int:
    """Nearest lattice index of ``value``; exact half-cell ties round up.

    The tie epsilon absorbs float division noise: coarse cell centers sit
    exactly at fine-cell corners, so ties are the common case, and e.g.
    1.0125 / 0.025 evaluates to 40.499999999999993.
    """
    return int(math.floor(value / res + 0.5 + 1e-9))


@dataclass(frozen=True)
class PoseL1:
    x: float
    y: float
    theta: int  # 0..63
    feet: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    level = 1

    @property
    def angle(self) -> float:
        return 2.0 * math.pi * self.theta / LEVEL_ORIENTATIONS[1]


@dataclass(frozen=True)
class PoseL2:
    x: float
    y: float
    theta: int  # 0..31
    pairs: tuple[float, float] = (0.0, 0.0)  # front, rear

    level = 2

    @property
    def angle(self) -> float:
        return 2.0 * math.pi * self.theta / LEVEL_ORIENTATIONS[2]


@dataclass(frozen=True)
class PoseL3:
    x: float
    y: float
    theta: int  # 0..15

    level = 3

    @property
    def angle(self) -> float:
        return 2.0 * math.pi * self.theta / LEVEL_ORIENTATIONS[3]


Pose = PoseL1 | PoseL2 | PoseL3


def format_pose(pose: Pose) -> str:
    parts = [f"L{pose.level}", f"{pose.x:.4f}", f"{pose.y:.4f}", str(pose.theta)]
    if pose.level == 1:
        parts += [f"{f:.4f}" for f in pose.feet]
    elif pose.level == 2:
        parts += [f"{f:.4f}" for f in pose.pairs]
    return " ".join(parts)


def parse_pose(text: str) -> Pose:
    """Parse ``L<k> x y thetaIndex [offsets...]``; missing offsets = neutral."""
    tokens = text.split()
    if not tokens or tokens[0] not in ("L1", "L2", "L3"):
        raise ValueError(f"bad pose {text!r}: expected leading L1/L2/L3")
    level = int(tokens[0][1])
    if len(tokens) < 4:
        raise ValueError(f"bad pose {text!r}: need x y thetaIndex")
    x, y = float(tokens[1]), float(tokens[2])
    theta = int(tokens[3]) % LEVEL_ORIENTATIONS[level]
    rest = [float(t) for t in tokens[4:]]
    if level == 1:
        if rest and len(rest) != 4:
            raise ValueError(f"bad pose {text!r}: L1 takes 4 foot offsets")
        return PoseL1(x, y, theta, tuple(rest) if rest else (0.0, 0.0, 0.0, 0.0))
    if level == 2:
        if rest and len(rest) != 2:
            raise ValueError(f"bad pose {text!r}: L2 takes 2 pair offsets")
        return PoseL2(x, y, theta, tuple(rest) if rest else (0.0, 0.0))
    if rest:
        raise ValueError(f"bad pose {text!r}: L3 takes no offsets")
    return PoseL3(x, y, theta)


# ---------------------------------------------------------------------------
# contact geometry


def contact_points(cfg: PlannerConfig, pose: Pose) -> list[tuple[float, float, float]]:
    """World (x, y, sagittal-separation-contribution) of the ground contacts.

    Level 1: the four feet.  Level 2: the four foot-area centers (each pair
    contributes a left and a right area at the same longitudinal offset).
    Level 3 has no discrete contacts.
    """
    geom = cfg.geometry
    c = math.cos(pose.angle)
    s = math.sin(pose.angle)
    pts = []
    if pose.level == 1:
        offsets = pose.feet
    elif pose.level == 2:
        offsets = (pose.pairs[0], pose.pairs[0], pose.pairs[1], pose.pairs[1])
    else:
        return pts
    for i in range(4):
        sag0, lat = geom.foot_home(i)
        sag = sag0 + offsets[i]
        pts.append((pose.x + c * sag - s * lat, pose.y + s * sag + c * lat, sag))
    return pts


def contact_cells(rep, cfg: PlannerConfig, pose: Pose) -> list[tuple[int, int]]:
    grid = rep.grid
    return [grid.index_of(px, py)[:2] for px, py, _ in contact_points(cfg, pose)]


def _body_cost(
    cfg: PlannerConfig,
    rep,
    base_ix: int,
    base_iy: int,
    heights: list[float],
    sags: list[float],
) -> float:
    """Clearance and slope penalty from the four contact heights."""
    geom = cfg.geometry
    mean_h = sum(heights) / len(heights)
    if rep.disk_max.shape[0] > base_iy >= 0 and rep.disk_max.shape[1] > base_ix >= 0:
        if rep.disk_max[base_iy, base_ix] > mean_h + geom.clearance + EPS:
            return math.inf
    front_h = (heights[0] + heights[1]) / 2.0
    rear_h = (heights[2] + heights[3]) / 2.0
    lon_sep = (sags[0] + sags[1]) / 2.0 - (sags[2] + sags[3]) / 2.0
    pitch = (front_h - rear_h) / lon_sep if lon_sep > EPS else 0.0
    left_h = (heights[0] + heights[2]) / 2.0
    right_h = (heights[1] + heights[3]) / 2.0
    roll = (left_h - right_h) / (2.0 * geom.lateral_offset)
    slope = math.hypot(pitch, roll)
    if slope > cfg.max_slope:
        return math.inf
    return cfg.slope_coeff * slope


# ---------------------------------------------------------------------------
# Level-2 pair cost grids (lazy per orientation)


def pair_cost_grids(l2: Level2Rep, cfg: PlannerConfig, theta: int):
    """(gated, raw) pair-cost grids for one orientation.

    Cost = 1 + k * mean(diff) over the two foot areas, indexed by the pair
    center cell.  Gated variant is +inf where either area-center cell is not
    drivable (the drive limit applies at the area center coordinate); the
    raw variant keeps the averaged value for stepping evaluation.  Unknown
    coverage beyond the area share limit makes the cell NaN.
    """
    key = theta % LEVEL_ORIENTATIONS[2]
    cached = l2.pair_cache.get(key)
    if cached is not None:
        return cached
    geom = cfg.geometry
    res = l2.diff.resolution
    angle = 2.0 * math.pi * key / LEVEL_ORIENTATIONS[2]
    c, s = math.cos(angle), math.sin(angle)

    diff = l2.diff.data
    known = ~np.isnan(diff)
    diff_filled = np.where(known, diff, 0.0)
    h, w = diff.shape

    # union of the two foot areas, offsets relative to the pair center
    offsets = []
    centers = []
    for side in (1.0, -1.0):
        ox = -s * side * geom.lateral_offset
        oy = c * side * geom.lateral_offset
        centers.append((round_half_up(ox / res), round_half_up(oy / res)))
        for dx, dy in rect_offsets(geom.foot_length, geom.foot_width, angle, res):
            offsets.append((dx + centers[-1][0], dy + centers[-1][1]))
    offsets = sorted(set(offsets))

    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    for dx, dy in offsets:
        acc += _shift(diff_filled, dx, dy, 0.0)
        cnt += _shift(known.astype(float), dx, dy, 0.0)
    n_cells = float(len(offsets))
    with np.errstate(invalid="ignore", divide="ignore"):
        raw = 1.0 + cfg.k_diff * acc / cnt
    raw[cnt < (1.0 - cfg.nan_area_share) * n_cells] = np.nan

    gate = np.ones((h, w), dtype=bool)
    for cx, cy in centers:
        gate &= _shift(l2.drivable.astype(np.uint8), cx, cy, 0).astype(bool)
    gated = np.where(gate, raw, np.inf)
    result = (gated.astype(np.float32), raw.astype(np.float32))
    l2.pair_cache[key] = result
    return result


def _shift(arr: np.ndarray, dx: int, dy: int, fill):
    """arr sampled at (ix+dx, iy+dy), padded with ``fill``."""
    h, w = arr.shape
    out = np.full_like(arr, fill)
    src_x0, src_x1 = max(0, dx), min(w, w + dx)
    src_y0, src_y1 = max(0, dy), min(h, h + dy)
    if src_x0 >= src_x1 or src_y0 >= src_y1:
        return out
    out[src_y0 - dy : src_y1 - dy, src_x0 - dx : src_x1 - dx] = arr[src_y0:src_y1, src_x0:src_x1]
    return out


# ---------------------------------------------------------------------------
# pose cost


def _neutral_slice_l1(l1: Level1Rep, cfg: PlannerConfig, theta: int) -> np.ndarray:
    """Pose cost over all base cells for neutral feet at one orientation."""
    key = ("slice", theta)
    cached = l1.pose_cost_cache.get(key)
    if cached is not None:
        return cached
    geom = cfg.geometry
    res = l1.height.resolution
    angle = 2.0 * math.pi * theta / LEVEL_ORIENTATIONS[1]
    c, s = math.cos(angle), math.sin(angle)
    cost_acc = np.zeros_like(l1.foot_cost)
    heights = []
    for i in range(4):
        sag, lat = geom.foot_home(i)
        dx = round_half_up((c * sag - s * lat) / res)
        dy = round_half_up((s * sag + c * lat) / res)
        cost_acc += _shift(l1.foot_cost, dx, dy, np.inf)
        heights.append(_shift(l1.height.data, dx, dy, np.nan))
    contact = cost_acc / 4.0

    with np.errstate(invalid="ignore"):
        mean_h = (heights[0] + heights[1] + heights[2] + heights[3]) / 4.0
        body = np.where(l1.disk_max > mean_h + geom.clearance + EPS, np.inf, 0.0)
        pitch = ((heights[0] + heights[1]) - (heights[2] + heights[3])) / 2.0
        pitch /= 2.0 * geom.sagittal_neutral
        roll = ((heights[0] + heights[2]) - (heights[1] + heights[3])) / 2.0
        roll /= 2.0 * geom.lateral_offset
        slope = np.hypot(pitch, roll)
        body = body + np.where(slope > cfg.max_slope, np.inf, cfg.slope_coeff * slope)
    total = contact + np.where(np.isnan(body), 0.0, body)
    # unknown contact heights only occur where a foot cost is already inf
    out = total.astype(np.float32)
    l1.pose_cost_cache[key] = out
    return out


def _neutral_slice_l2(l2: Level2Rep, cfg: PlannerConfig, theta: int) -> np.ndarray:
    """Pose cost over all base cells for neutral pairs at one orientation."""
    key = ("slice", theta)
    cached = l2.pose_cost_cache.get(key)
    if cached is not None:
        return cached
    geom = cfg.geometry
    res = l2.height.resolution
    angle = 2.0 * math.pi * theta / LEVEL_ORIENTATIONS[2]
    c, s = math.cos(angle), math.sin(angle)
    gated, _ = pair_cost_grids(l2, cfg, theta)

    pair_costs = []
    heights = []
    for sag_sign in (1.0, -1.0):
        sag = sag_sign * geom.sagittal_neutral
        dx = round_half_up(c * sag / res)
        dy = round_half_up(s * sag / res)
        pair_costs.append(_shift(gated.astype(np.float64), dx, dy, np.inf))
        for lat_sign in (1.0, -1.0):
            lat = lat_sign * geom.lateral_offset
            ax = round_half_up((c * sag - s * lat) / res)
            ay = round_half_up((s * sag + c * lat) / res)
            heights.append(_shift(l2.height.data, ax, ay, np.nan))
    with np.errstate(invalid="ignore"):
        contact = (pair_costs[0] + pair_costs[1]) / 2.0
        contact = np.where(np.isnan(contact), np.inf, contact)  # NaN pair = not placeable
        mean_h = (heights[0] + heights[1] + heights[2] + heights[3]) / 4.0
        body = np.where(l2.disk_max > mean_h + geom.clearance + EPS, np.inf, 0.0)
        pitch = ((heights[0] + heights[1]) - (heights[2] + heights[3])) / 2.0
        pitch /= 2.0 * geom.sagittal_neutral
        roll = ((heights[0] + heights[2]) - (heights[1] + heights[3])) / 2.0
        roll /= 2.0 * geom.lateral_offset
        slope = np.hypot(pitch, roll)
        body = body + np.where(slope > cfg.max_slope, np.inf, cfg.slope_coeff * slope)
    total = contact + np.where(np.isnan(body), 0.0, body)
    out = total.astype(np.float32)
    l2.pose_cost_cache[key] = out
    return out


def pose_cost(rep, cfg: PlannerConfig, pose: Pose) -> float:
    """Cost of standing at ``pose``; inf = infeasible, NaN = unknown terrain."""
    grid = rep.grid
    ix, iy = grid.index_of(pose.x, pose.y)
    if pose.level == 3:
        if not (0 <= ix < grid.width and 0 <= iy < grid.height):
            return math.inf
        return float(rep.area_cost[pose.theta % LEVEL_ORIENTATIONS[3], iy, ix])

    neutral = all(abs(f) < EPS for f in (pose.feet if pose.level == 1 else pose.pairs))
    if neutral:
        if not (0 <= ix < grid.width and 0 <= iy < grid.height):
            return math.inf
        if pose.level == 1:
            return float(_neutral_slice_l1(rep, cfg, pose.theta)[iy, ix])
        return float(_neutral_slice_l2(rep, cfg, pose.theta)[iy, ix])

    # general stance, scalar path
    pts = contact_points(cfg, pose)
    heights = []
    sags = []
    if pose.level == 1:
        costs = []
        for px, py, sag in pts:
            cx, cy = grid.index_of(px, py)
            if not (0 <= cx < grid.width and 0 <= cy < grid.height):
                return math.inf
            costs.append(float(rep.foot_cost[cy, cx]))
            heights.append(float(rep.height.data[cy, cx]))
            sags.append(sag)
        contact = sum(costs) / 4.0
    else:
        res = grid.resolution
        angle = pose.angle
        c, s = math.cos(angle), math.sin(angle)
        gated, _ = pair_cost_grids(rep, cfg, pose.theta)
        pair_vals = []
        for pair_i, sag_sign in enumerate((1.0, -1.0)):
            sag = sag_sign * cfg.geometry.sagittal_neutral + pose.pairs[pair_i]
            px = pose.x + c * sag
            py = pose.y + s * sag
            cx, cy = grid.index_of(px, py)
            if not (0 <= cx < grid.width and 0 <= cy < grid.height):
                return math.inf
            v = float(gated[cy, cx])
            pair_vals.append(math.inf if math.isnan(v) else v)
        for px, py, sag in pts:
            cx, cy = grid.index_of(px, py)
            if not (0 <= cx < grid.width and 0 <= cy < grid.height):
                return math.inf
            heights.append(float(rep.height.data[cy, cx]))
            sags.append(sag)
        contact = sum(pair_vals) / 2.0
    if math.isinf(contact):
        return math.inf
    if any(math.isnan(h) for h in heights):
        return math.inf
    return contact + _body_cost(cfg, rep, ix, iy, heights, sags)


# ---------------------------------------------------------------------------
# promotion / demotion


def _snap_coord(value: float, origin: float, res: float) -> float:
    return origin + snap_index(value - origin, res) * res


@dataclass(frozen=True)
class Promotion:
    pose: Pose | None
    snap_cost: float
    reason: str = ""  # non-empty iff pose is None


def promote_l1_l2(pose: PoseL1, l1: Level1Rep, l2: Level2Rep, cfg: PlannerConfig) -> Promotion:
    """Merge feet into pairs and snap onto the Level-2 lattice.

    Fails when a pair's feet are spread farther apart than half the foot
    area length.  Snap cost = base shift distance x pose cost + turn arc
    x pose cost + per-foot shift distance x foot ground cost.
    """
    geom = cfg.geometry
    max_spread = geom.foot_length / 2.0
    if abs(pose.feet[0] - pose.feet[1]) > max_spread + EPS:
        return Promotion(None, math.inf, "front pair spread too wide")
    if abs(pose.feet[2] - pose.feet[3]) > max_spread + EPS:
        return Promotion(None, math.inf, "rear pair spread too wide")

    res2 = LEVEL_RESOLUTION[2]
    nx = _snap_coord(pose.x, l2.grid.origin_x, res2)
    ny = _snap_coord(pose.y, l2.grid.origin_y, res2)
    ntheta = round_half_up(pose.theta / 2.0) % LEVEL_ORIENTATIONS[2]
    pairs = []
    for a, b in ((0, 1), (2, 3)):
        mean = (pose.feet[a] + pose.feet[b]) / 2.0
        pairs.append(snap_index(mean, res2) * res2)

    src_cost = pose_cost(l1, cfg, pose)
    if not math.isfinite(src_cost):
        return Promotion(None, math.inf, "source pose infeasible")
    dist = math.hypot(nx - pose.x, ny - pose.y)
    dangle = abs(pose.angle - 2.0 * math.pi * ntheta / LEVEL_ORIENTATIONS[2])
    dangle = min(dangle, 2.0 * math.pi - dangle)
    snap = dist * src_cost + dangle * geom.half_diagonal * src_cost

    cells = contact_cells(l1, cfg, pose)
    for i, (cx, cy) in enumerate(cells):
        target = pairs[0] if i < 2 else pairs[1]
        ground = float(l1.foot_cost[cy, cx]) if l1.drivable[cy, cx] else math.inf
        shift = abs(pose.feet[i] - target)
        if shift > EPS:
            if not math.isfinite(ground):
                return Promotion(None, math.inf, "foot shift over infeasible ground")
            snap += shift * ground
    return Promotion(PoseL2(nx, ny, ntheta, (pairs[0], pairs[1])), snap)


def promote_l2_l3(pose: PoseL2, l2: Level2Rep, l3: Level3Rep, cfg: PlannerConfig) -> Promotion:
    """Drop pair offsets and snap onto the Level-3 lattice."""
    geom = cfg.geometry
    half_area = cfg.geometry.contact_area_length / 2.0
    for pair_i, sag_sign in enumerate((1.0, -1.0)):
        contact_sag = sag_sign * geom.sagittal_neutral + pose.pairs[pair_i]
        if abs(contact_sag) + geom.foot_length / 2.0 > half_area + EPS:
            return Promotion(None, math.inf, "pair outside contact area")
    res3 = LEVEL_RESOLUTION[3]
    nx = _snap_coord(pose.x, l3.grid.origin_x, res3)
    ny = _snap_coord(pose.y, l3.grid.origin_y, res3)
    ntheta = round_half_up(pose.theta / 2.0) % LEVEL_ORIENTATIONS[3]
    src_cost = pose_cost(l2, cfg, pose)
    if not math.isfinite(src_cost):
        return Promotion(None, math.inf, "source pose infeasible")
    dist = math.hypot(nx - pose.x, ny - pose.y)
    dangle = abs(pose.angle - 2.0 * math.pi * ntheta / LEVEL_ORIENTATIONS[3])
    dangle = min(dangle, 2.0 * math.pi - dangle)
    snap = dist * src_cost + dangle * cfg.geometry.half_diagonal * src_cost
    return Promotion(PoseL3(nx, ny, ntheta), snap)


def demote_l3_l2(pose: PoseL3, l2: Level2Rep) -> PoseL2:
    """Re-express a coarse pose at Level 2 with neutral pairs (free)."""
    res2 = LEVEL_RESOLUTION[2]
    nx = _snap_coord(pose.x, l2.grid.origin_x, res2)
    ny = _snap_coord(pose.y, l2.grid.origin_y, res2)
    return PoseL2(nx, ny, (pose.theta * 2) % LEVEL_ORIENTATIONS[2], (0.0, 0.0))


def demote_l2_l1(pose: PoseL2, l1: Level1Rep) -> PoseL1:
    """Re-express a pair pose at Level 1, both feet at the pair offset."""
    res1 = LEVEL_RESOLUTION[1]
    nx = _snap_coord(pose.x, l1.grid.origin_x, res1)
    ny = _snap_coord(pose.y, l1.grid.origin_y, res1)
    f = pose.pairs
    return PoseL1(
        nx, ny, (pose.theta * 2) % LEVEL_ORIENTATIONS[1], (f[0], f[0], f[1], f[1])
    )


def snap_pose_to_l3(pose: Pose, l3grid) -> tuple[int, int, int]:
    """Pure lattice snap (cell + theta16), ignoring cost and feasibility."""
    ix, iy = l3grid.index_of(pose.x, pose.y)
    n = LEVEL_ORIENTATIONS[pose.level]
    theta16 = round_half_up(pose.theta * LEVEL_ORIENTATIONS[3] / n) % LEVEL_ORIENTATIONS[3]
    return ix, iy, theta16
