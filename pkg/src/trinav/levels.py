"""Three-level terrain representation and terrain classification.

Level 1 (2.5 cm, 64 orientations) carries per-cell foot placement costs.
Level 2 (5 cm, 32 orientations) carries costs for placing foot-area pairs.
Level 3 (10 cm, 16 orientations) carries terrain classes and averaged
cell costs over the robot's ground-contact area.

Ground-contact cost is dimensionless: 1.0 on ideal flat ground, growing
with local height differences, +inf where a wheel cannot go, NaN where the
terrain is unknown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage, signal

from trinav.config import LEVEL_ORIENTATIONS, LEVEL_RESOLUTION, PlannerConfig
from trinav.gridmap import DiffGrid, HeightGrid, height_diff_map, subsample

EPS = 1e-9

# terrain class cost table (Level 3)
FLAT_COST = 1.0
ROUGH_COST = 1.4
STEP_COST_BASE = 76.0
STEP_COST_SLOPE = 2.95  # per meter of local height difference

# class interval bounds on the height-difference map (meters)
FLAT_MAX_DIFF = 2e-4
ROUGH_MAX_DIFF = 0.05

# circular mean resultants below this are too spread out to define a step
# orientation; such cells are demoted to wall
MIN_STEP_RESULTANT = 0.1


class TerrainClass(IntEnum):
    """Ordered by traversal difficulty; ties in votes resolve to the lowest."""

    FLAT = 0
    ROUGH = 1
    STEP = 2
    WALL = 3
    UNKNOWN = 4


# ---------------------------------------------------------------------------
# circular statistics


def mean_direction(angles, period: float = math.pi) -> tuple[float, float]:
    """Circular mean and resultant length of angles with the given period.

    Angles that differ by a multiple of ``period`` are identified; the mean
    is reported in [0, period).  The resultant length lies in [0, 1] and
    measures concentration (1 = all angles identical, 0 = fully spread).
    """
    angles = np.asarray(list(angles), dtype=float)
    if angles.size == 0:
        raise ValueError("need at least one angle")
    k = 2.0 * math.pi / period
    c = float(np.cos(k * angles).sum())
    s = float(np.sin(k * angles).sum())
    r = math.hypot(c, s) / angles.size
    mean = math.atan2(s, c) / k
    return mean % period, r


def circular_mean(angles, period: float = math.pi) -> float:
    """Mean of circular quantities, e.g. undirected orientations (period pi)."""
    return mean_direction(angles, period)[0]


def ang_dist(a: float, b: float, period: float = math.pi) -> float:
    """Shortest circular distance between two angles of the given period."""
    d = (a - b) % period
    return min(d, period - d)


# ---------------------------------------------------------------------------
# geometry helpers shared by the level builders


def rect_offsets(length: float, width: float, angle: float, resolution: float):
    """Integer cell offsets whose centers lie in a centered rotated rectangle."""
    half_l = length / 2.0
    half_w = width / 2.0
    reach = int(math.ceil(math.hypot(half_l, half_w) / resolution)) + 1
    c, s = math.cos(angle), math.sin(angle)
    offsets = []
    for dy in range(-reach, reach + 1):
        for dx in range(-reach, reach + 1):
            px = dx * resolution
            py = dy * resolution
            lon = px * c + py * s
            lat = -px * s + py * c
            if abs(lon) <= half_l + EPS and abs(lat) <= half_w + EPS:
                offsets.append((dx, dy))
    return offsets


def offsets_to_kernel(offsets) -> np.ndarray:
    """0/1 kernel array for a symmetric offset set, odd-sized and centered."""
    reach = max(max(abs(dx), abs(dy)) for dx, dy in offsets)
    size = 2 * reach + 1
    kernel = np.zeros((size, size))
    for dx, dy in offsets:
        kernel[reach + dy, reach + dx] = 1.0
    return kernel


def _footprint_sum(arr: np.ndarray, kernel: np.ndarray, pad_value: float) -> np.ndarray:
    """Sum of ``arr`` under the kernel footprint at every cell.

    Cells outside the array contribute ``pad_value``.  FFT-based; count
    arrays should be rounded by the caller.
    """
    ry = kernel.shape[0] // 2
    rx = kernel.shape[1] // 2
    padded = np.pad(arr, ((ry, ry), (rx, rx)), constant_values=pad_value)
    out = signal.fftconvolve(padded, kernel, mode="same")
    return out[ry : ry + arr.shape[0], rx : rx + arr.shape[1]]


def _dilate(mask: np.ndarray, radius_cells: int) -> np.ndarray:
    """Square dilation; radius in cells."""
    if radius_cells <= 0:
        return mask.copy()
    size = 2 * radius_cells + 1
    return ndimage.maximum_filter(mask.astype(np.uint8), size=size).astype(bool)


# ---------------------------------------------------------------------------
# level representations


@dataclass
class Level1Rep:
    """Fine representation: per-cell foot placement costs at 2.5 cm."""

    height: HeightGrid
    diff: DiffGrid
    foot_cost: np.ndarray
    drivable: np.ndarray
    near_inf: np.ndarray
    disk_max: np.ndarray
    pose_cost_cache: dict = field(default_factory=dict, repr=False)

    level = 1
    orientations = LEVEL_ORIENTATIONS[1]

    @property
    def grid(self) -> HeightGrid:
        return self.height


@dataclass
class Level2Rep:
    """Medium representation: foot-area-pair costs at 5 cm."""

    height: HeightGrid
    diff: DiffGrid
    cell_cost: np.ndarray
    drivable: np.ndarray
    near_inf: np.ndarray
    disk_max: np.ndarray
    pair_cache: dict = field(default_factory=dict, repr=False)
    pose_cost_cache: dict = field(default_factory=dict, repr=False)

    level = 2
    orientations = LEVEL_ORIENTATIONS[2]

    @property
    def grid(self) -> HeightGrid:
        return self.height


@dataclass
class TerrainClassGrid:
    """Per-cell terrain classes plus step orientations where class == STEP."""

    resolution: float
    origin_x: float
    origin_y: float
    classes: np.ndarray
    alpha: np.ndarray  # step orientation in [0, pi), NaN off step cells

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]


@dataclass
class Level3Rep:
    """Coarse representation: terrain classes and robot-area costs at 10 cm."""

    height: HeightGrid
    diff: DiffGrid
    classes: TerrainClassGrid
    cell_cost: np.ndarray
    area_cost: np.ndarray        # (orientations, H, W), committed
    area_cost_opt: np.ndarray    # unknown terrain at optimistic cost 1.0
    step_mask: np.ndarray
    pose_cost_cache: dict = field(default_factory=dict, repr=False)

    level = 3
    orientations = LEVEL_ORIENTATIONS[3]

    @property
    def grid(self) -> HeightGrid:
        return self.height


# ---------------------------------------------------------------------------
# builders


def _crop(grid: HeightGrid, window) -> HeightGrid:
    """Crop a grid to a world rectangle (x0, y0, x1, y1), lattice-aligned."""
    if window is None:
        return grid
    x0, y0, x1, y1 = window
    ix0, iy0 = grid.index_of(x0, y0)
    ix1, iy1 = grid.index_of(x1, y1)
    ix0 = max(0, ix0)
    iy0 = max(0, iy0)
    ix1 = min(grid.width - 1, ix1)
    iy1 = min(grid.height - 1, iy1)
    if ix1 < ix0 or iy1 < iy0:
        raise ValueError("window does not intersect the map")
    ox, oy = grid.world_of(ix0, iy0)
    return HeightGrid(grid.resolution, ox, oy, grid.data[iy0 : iy1 + 1, ix0 : ix1 + 1].copy())


def _ground_cost(diff: np.ndarray, k_diff: float, dh_max: float) -> np.ndarray:
    """1 + k*diff while drivable, +inf above the drive limit or unknown."""
    cost = np.full(diff.shape, np.inf)
    ok = ~np.isnan(diff) & (diff <= dh_max + EPS)
    cost[ok] = 1.0 + k_diff * diff[ok]
    return cost


def _disk_max(height: np.ndarray, radius_m: float, resolution: float) -> np.ndarray:
    """Max known height in a square neighborhood (body obstacle check)."""
    filled = np.where(np.isnan(height), -np.inf, height)
    radius_cells = max(1, int(round(radius_m / resolution)))
    return ndimage.maximum_filter(filled, size=2 * radius_cells + 1)


def build_level1(map_grid: HeightGrid, cfg: PlannerConfig, window=None) -> Level1Rep:
    """Level-1 representation of ``map_grid`` (2.5 cm), cropped to ``window``.

    The input map must already be at the Level-1 resolution.
    """
    if abs(map_grid.resolution - LEVEL_RESOLUTION[1]) > EPS:
        raise ValueError(f"level 1 expects {LEVEL_RESOLUTION[1]} m cells")
    diff_full = height_diff_map(map_grid)
    height = _crop(map_grid, window)
    diff = _crop(diff_full, window)
    foot_cost = _ground_cost(diff.data, cfg.k_diff, cfg.dh_max_drive_l1)
    drivable = np.isfinite(foot_cost)
    near = _dilate(~drivable, int(round(cfg.near_obstacle_radius_m / height.resolution)))
    body_r = min(cfg.geometry.base_length, cfg.geometry.base_width) / 2.0
    disk_max = _disk_max(height.data, body_r, height.resolution)
    return Level1Rep(height, diff, foot_cost, drivable, near, disk_max)


def build_level2(map_grid: HeightGrid, cfg: PlannerConfig, window=None) -> Level2Rep:
    """Level-2 representation (5 cm): subsampled heights and diffs.

    The diff map is subsampled from the Level-1 diff map, not recomputed
    from Level-2 heights, so sub-cell structure keeps its influence.
    """
    height2_full = subsample(map_grid)
    diff2_full = subsample(height_diff_map(map_grid))
    height = _crop(height2_full, window)
    diff = _crop(diff2_full, window)
    cell_cost = _ground_cost(diff.data, cfg.k_diff, cfg.dh_max_drive_l2)
    drivable = np.isfinite(cell_cost)
    near = _dilate(~drivable, int(round(cfg.near_obstacle_radius_m / height.resolution)))
    body_r = min(cfg.geometry.base_length, cfg.geometry.base_width) / 2.0
    disk_max = _disk_max(height.data, body_r, height.resolution)
    return Level2Rep(height, diff, cell_cost, drivable, near, disk_max)


# ---------------------------------------------------------------------------
# terrain classification (runs at Level-2 resolution)


def _intermediate_offsets(dx: int, dy: int):
    """Cells strictly between (0,0) and (dx,dy) on the raster line."""
    cells = []
    adx, ady = abs(dx), abs(dy)
    sx = 1 if dx >= 0 else -1
    sy = 1 if dy >= 0 else -1
    err = adx - ady
    x = y = 0
    while True:
        if (x, y) != (0, 0) and (x, y) != (dx, dy):
            cells.append((x, y))
        if x == dx and y == dy:
            break
        e2 = 2 * err
        if e2 > -ady:
            err -= ady
            x += sx
        if e2 < adx:
            err += adx
            y += sy
    return cells


def _swept_offsets(dx: int, dy: int):
    """Cells strictly between (0,0) and (dx,dy) touched by the exact segment.

    Unlike the plain raster line this is symmetric under reversal,
    swept(-dx,-dy) == [(cx-dx, cy-dy) ...], so a sweep gate built on it
    accepts a translation iff it accepts the reverse translation.  A
    segment crossing a cell edge at its midpoint enters both adjacent
    cells in turn; one passing exactly through a lattice corner steps
    diagonally without picking up the two side cells.
    """
    cells = []
    adx, ady = abs(dx), abs(dy)
    sx = 1 if dx >= 0 else -1
    sy = 1 if dy >= 0 else -1
    x = y = ix = iy = 0
    while ix < adx or iy < ady:
        # parameters of the next column/row boundary crossings, times 2*adx*ady
        tx = (2 * ix + 1) * ady if ix < adx else None
        ty = (2 * iy + 1) * adx if iy < ady else None
        if ty is None or (tx is not None and tx < ty):
            x += sx
            ix += 1
        elif tx is None or ty < tx:
            y += sy
            iy += 1
        else:
            x += sx
            y += sy
            ix += 1
            iy += 1
        if (x, y) != (dx, dy):
            cells.append((x, y))
    return cells


def _wrap_half_turn(alpha: np.ndarray) -> np.ndarray:
    """Fold angles into [0, pi); values within EPS of pi collapse to 0."""
    out = alpha % math.pi
    out[out >= math.pi - 1e-9] = 0.0
    return out


def classify_terrain(l2: Level2Rep, cfg: PlannerConfig) -> TerrainClassGrid:
    """Classify Level-2 cells into flat / rough / step / wall / unknown.

    Step cells come first: for every pair of drivable cells less than
    ``step_max_length`` apart whose connecting raster line runs entirely
    through infinite-cost cells (at least one), the endpoints and the line
    cells are marked as step cells and the crossing direction is recorded.
    Each cell collects the set of distinct directions that cross it (a
    direction detected by several parallel pairs counts once, otherwise
    long straight edges drown their own normal in oblique multiplicity).
    The step orientation is the circular mean (period pi) of that set; a
    resultant below MIN_STEP_RESULTANT leaves the orientation ambiguous
    and demotes the cell to wall.  Remaining cells classify by their
    height difference value.
    """
    diff = l2.diff.data
    res = l2.diff.resolution
    h, w = diff.shape
    known = ~np.isnan(diff)
    drivable = known & (diff <= cfg.dh_max_drive_l2 + EPS)
    infinite = known & ~drivable

    # candidate endpoints must touch the infinite band: the first raster cell
    # out of a qualifying endpoint is infinite, hence 8-adjacent to it
    candidates = drivable & _dilate(infinite, 1)

    max_cells = cfg.step_max_length / res
    reach = int(math.ceil(max_cells))
    pad = reach + 1
    cand_p = np.pad(candidates, pad, constant_values=False)
    inf_p = np.pad(infinite, pad, constant_values=False)

    def view(arr_p, dx, dy):
        return arr_p[pad + dy : pad + dy + h, pad + dx : pad + dx + w]

    # half-plane pair offsets grouped by reduced direction for exact dedup
    directions: dict[tuple[int, int], list] = {}
    for dy in range(0, reach + 1):
        for dx in range(-reach, reach + 1):
            if (dy, dx) <= (0, 0):
                continue
            if math.hypot(dx, dy) >= max_cells - EPS:
                continue
            inter = _intermediate_offsets(dx, dy)
            if not inter:
                continue
            g = math.gcd(abs(dx), dy)
            directions.setdefault((dx // g, dy // g), []).append((dx, dy, inter))

    count = np.zeros((h, w), dtype=np.int32)
    cos2 = np.zeros((h, w))
    sin2 = np.zeros((h, w))
    for (rdx, rdy), offs in sorted(directions.items()):
        plane = np.zeros((h, w), dtype=bool)
        hit = False
        for dx, dy, inter in offs:
            mask = candidates & view(cand_p, dx, dy)
            if not mask.any():
                continue
            for ox, oy in inter:
                mask &= view(inf_p, ox, oy)
                if not mask.any():
                    break
            else:
                hit = True
                plane |= mask  # endpoint c_i
                mask_p = np.pad(mask, pad, constant_values=False)
                plane |= view(mask_p, -dx, -dy)  # endpoint c_j
                for ox, oy in inter:
                    plane |= view(mask_p, -ox, -oy)
        if hit:
            a2 = 2.0 * (math.atan2(rdy, rdx) % math.pi)
            count += plane
            cos2 += np.where(plane, math.cos(a2), 0.0)
            sin2 += np.where(plane, math.sin(a2), 0.0)

    classes = np.full((h, w), TerrainClass.UNKNOWN, dtype=np.uint8)
    classes[known & (diff <= FLAT_MAX_DIFF + EPS)] = TerrainClass.FLAT
    classes[known & (diff > FLAT_MAX_DIFF + EPS)] = TerrainClass.ROUGH
    classes[known & (diff > ROUGH_MAX_DIFF + EPS)] = TerrainClass.WALL

    alpha = np.full((h, w), np.nan)
    stepped = count > 0
    with np.errstate(invalid="ignore"):
        resultant = np.where(stepped, np.hypot(cos2, sin2) / np.maximum(count, 1), 0.0)
    good = stepped & (resultant >= MIN_STEP_RESULTANT)
    ambiguous = stepped & ~good
    classes[good] = TerrainClass.STEP
    alpha[good] = _wrap_half_turn(0.5 * np.arctan2(sin2[good], cos2[good]))
    classes[ambiguous] = TerrainClass.WALL
    return TerrainClassGrid(res, l2.diff.origin_x, l2.diff.origin_y, classes, alpha)


def _majority_classes(classes2: TerrainClassGrid) -> TerrainClassGrid:
    """Subsample classes 2:1 by majority vote over 2x2 blocks.

    Unknown members do not vote; ties resolve to the least difficult class;
    blocks with no known member stay unknown.  Step orientations combine by
    circular mean over the step members.
    """
    cls = classes2.classes
    alp = classes2.alpha
    h2 = (cls.shape[0] + 1) // 2
    w2 = (cls.shape[1] + 1) // 2
    padded = np.full((2 * h2, 2 * w2), TerrainClass.UNKNOWN, dtype=np.uint8)
    padded[: cls.shape[0], : cls.shape[1]] = cls
    blocks = padded.reshape(h2, 2, w2, 2)

    counts = np.stack(
        [(blocks == c).sum(axis=(1, 3)) for c in range(4)]  # known classes only
    )
    known_votes = counts.sum(axis=0)
    # argmax picks the first (= least difficult) class among tied counts
    out = np.where(known_votes > 0, counts.argmax(axis=0), TerrainClass.UNKNOWN)
    out = out.astype(np.uint8)

    alpha_pad = np.full((2 * h2, 2 * w2), np.nan)
    alpha_pad[: alp.shape[0], : alp.shape[1]] = alp
    step_pad = padded == TerrainClass.STEP
    with np.errstate(invalid="ignore"):
        c2 = np.where(step_pad, np.cos(2.0 * alpha_pad), 0.0)
        s2 = np.where(step_pad, np.sin(2.0 * alpha_pad), 0.0)
    c2 = c2.reshape(h2, 2, w2, 2).sum(axis=(1, 3))
    s2 = s2.reshape(h2, 2, w2, 2).sum(axis=(1, 3))
    alpha_out = np.full((h2, w2), np.nan)
    is_step = out == TerrainClass.STEP
    alpha_out[is_step] = _wrap_half_turn(0.5 * np.arctan2(s2[is_step], c2[is_step]))
    return TerrainClassGrid(
        classes2.resolution * 2.0,
        classes2.origin_x + classes2.resolution / 2.0,
        classes2.origin_y + classes2.resolution / 2.0,
        out,
        alpha_out,
    )


def class_cell_costs(classes: TerrainClassGrid, diff: np.ndarray) -> np.ndarray:
    """Cost per terrain class; step cost grows with the local height diff."""
    cls = classes.classes
    cost = np.full(cls.shape, np.nan)
    cost[cls == TerrainClass.FLAT] = FLAT_COST
    cost[cls == TerrainClass.ROUGH] = ROUGH_COST
    step = cls == TerrainClass.STEP
    step_dh = np.where(np.isnan(diff), 0.0, diff)
    cost[step] = STEP_COST_BASE + STEP_COST_SLOPE * step_dh[step]
    cost[cls == TerrainClass.WALL] = np.inf
    return cost


def _area_cost_stack(
    cell_cost: np.ndarray,
    classes: TerrainClassGrid,
    cfg: PlannerConfig,
    optimistic: bool,
) -> np.ndarray:
    """Average cell cost over the ground-contact area, per orientation.

    A pose is infeasible (inf) when any covered cell is infinite or covers a
    step cell whose orientation differs from the robot heading by at least
    one discrete orientation step.  Committed variant: more than
    ``nan_area_share`` unknown coverage makes the pose unknown (NaN), less
    is averaged over the known part.  Optimistic variant: unknown cells
    count as flat cost 1.0.
    """
    geom = cfg.geometry
    res = classes.resolution
    n_orient = LEVEL_ORIENTATIONS[3]
    cls = classes.classes
    alpha = classes.alpha
    is_step = cls == TerrainClass.STEP
    is_unknown = np.isnan(cell_cost)
    is_inf = np.isinf(cell_cost)
    finite = ~is_unknown & ~is_inf
    finite_vals = np.where(finite, cell_cost, 0.0)

    out = np.empty((n_orient, cls.shape[0], cls.shape[1]))
    # heading gate over step cells: strictly less than one orientation step
    step_tol = 2.0 * math.pi / n_orient
    for k in range(n_orient):
        theta = 2.0 * math.pi * k / n_orient
        offsets = rect_offsets(geom.contact_area_length, geom.contact_area_width, theta, res)
        kernel = offsets_to_kernel(offsets)
        n_cells = float(len(offsets))

        with np.errstate(invalid="ignore"):
            d = (alpha - theta) % math.pi
            d = np.minimum(d, math.pi - d)
            misaligned = is_step & ~(d < step_tol - 1e-12)

        inf_cnt = np.rint(_footprint_sum((is_inf | misaligned).astype(float), kernel, 0.0))
        if optimistic:
            vals = np.where(is_unknown, 1.0, finite_vals)
            total = _footprint_sum(vals, kernel, 1.0)
            area = total / n_cells
        else:
            nan_cnt = np.rint(_footprint_sum(is_unknown.astype(float), kernel, 1.0))
            fin_cnt = np.rint(_footprint_sum(finite.astype(float), kernel, 0.0))
            fin_sum = _footprint_sum(finite_vals, kernel, 0.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                area = fin_sum / fin_cnt
            area[nan_cnt > cfg.nan_area_share * n_cells] = np.nan
        area[inf_cnt > 0.5] = np.inf
        out[k] = area
    return out


def build_level3(map_grid: HeightGrid, cfg: PlannerConfig) -> Level3Rep:
    """Level-3 representation (10 cm): classes, costs, area-cost stacks.

    Level 3 always covers the whole map; there is no window argument.
    """
    l2 = build_level2(map_grid, cfg)
    classes2 = classify_terrain(l2, cfg)
    classes3 = _majority_classes(classes2)
    height3 = subsample(l2.height)
    diff3 = subsample(l2.diff)
    cell_cost = class_cell_costs(classes3, diff3.data)
    area = _area_cost_stack(cell_cost, classes3, cfg, optimistic=False)
    area_opt = _area_cost_stack(cell_cost, classes3, cfg, optimistic=True)
    step_mask = classes3.classes == TerrainClass.STEP
    return Level3Rep(height3, diff3, classes3, cell_cost, area, area_opt, step_mask)
