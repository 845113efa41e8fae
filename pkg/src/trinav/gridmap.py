"""2.5D height grids: file I/O, derived difference maps, binomial subsampling.

A height grid stores one height sample per cell, row-major, with NaN marking
unknown terrain.  All world coordinates refer to cell centers; cell (0, 0)
is centered at the grid origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Per-axis binomial weights for the 4x4 subsampling window.  The 2D kernel is
# the outer product (center weight 3/8 * 3/8 = 9/64) and sums to one.
BINOMIAL_AXIS_WEIGHTS = (1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0)

# An output cell is unknown when less than half of its kernel mass lies on
# known input cells.
MIN_KNOWN_MASS = 0.5


class HmapParseError(ValueError):
    """Malformed height-map file; message names the offending line."""


@dataclass
class HeightGrid:
    """Regular grid of height samples (meters), NaN = unknown.

    Attributes:
        resolution: cell edge length in meters.
        origin_x, origin_y: world position of the center of cell (0, 0).
        data: float64 array of shape (height, width), indexed [iy, ix].
    """

    resolution: float
    origin_x: float
    origin_y: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.resolution <= 0.0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError(f"grid needs at least one cell, got shape {self.data.shape}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def index_of(self, x: float, y: float) -> tuple[int, int]:
        """Nearest cell (ix, iy) for a world point; may lie out of bounds."""
        ix = int(math.floor((x - self.origin_x) / self.resolution + 0.5))
        iy = int(math.floor((y - self.origin_y) / self.resolution + 0.5))
        return ix, iy

    def world_of(self, ix: int, iy: int) -> tuple[float, float]:
        """World coordinates of the center of cell (ix, iy)."""
        return (self.origin_x + ix * self.resolution, self.origin_y + iy * self.resolution)

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def value_at(self, ix: int, iy: int) -> float:
        """Cell value; NaN for out-of-bounds or unknown cells."""
        if not self.in_bounds(ix, iy):
            return math.nan
        return float(self.data[iy, ix])

    def copy(self) -> "HeightGrid":
        return HeightGrid(self.resolution, self.origin_x, self.origin_y, self.data.copy())


# The difference map has the same geometry as a height grid, so it reuses the
# class; values are unsigned height differences instead of heights.
DiffGrid = HeightGrid


def load_height_map(path: str) -> HeightGrid:
    """Parse an HMAP text file.

    Format: header line ``HMAP <width> <height> <resolution_m> <origin_x_m>
    <origin_y_m>`` followed by ``height`` rows of ``width`` space-separated
    heights in meters, the token ``nan`` marking unknown cells.

    Raises:
        HmapParseError: malformed header, wrong row count/length, or a
            non-numeric token; the message includes the 1-based line number.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise HmapParseError(f"{path}: line 1: empty file")
    header = lines[0].split()
    if len(header) != 6 or header[0] != "HMAP":
        raise HmapParseError(f"{path}: line 1: expected 'HMAP w h res ox oy'")
    try:
        width, height = int(header[1]), int(header[2])
        resolution, ox, oy = float(header[3]), float(header[4]), float(header[5])
    except ValueError as exc:
        raise HmapParseError(f"{path}: line 1: bad header field ({exc})") from exc
    if width < 1 or height < 1 or resolution <= 0.0:
        raise HmapParseError(f"{path}: line 1: non-positive dimensions or resolution")

    rows = []
    for r in range(height):
        lineno = r + 2
        if lineno > len(lines):
            raise HmapParseError(f"{path}: line {lineno}: missing row {r}")
        tokens = lines[lineno - 1].split()
        if len(tokens) != width:
            raise HmapParseError(
                f"{path}: line {lineno}: expected {width} values, got {len(tokens)}"
            )
        try:
            row = [float(t) for t in tokens]
        except ValueError:
            bad = next(t for t in tokens if not _is_number(t))
            raise HmapParseError(f"{path}: line {lineno}: bad value {bad!r}") from None
        for t, v in zip(tokens, row):
            if math.isinf(v):
                raise HmapParseError(f"{path}: line {lineno}: non-finite value {t!r}")
        rows.append(row)
    extra = len(lines) - 1 - height
    if extra > 0 and any(lines[1 + height + i].strip() for i in range(extra)):
        raise HmapParseError(f"{path}: line {height + 2}: trailing data after last row")
    return HeightGrid(resolution, ox, oy, np.array(rows, dtype=np.float64))


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def save_height_map(grid: HeightGrid, path: str) -> None:
    """Write a grid in the HMAP text format accepted by load_height_map."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(
            f"HMAP {grid.width} {grid.height} {grid.resolution!r} "
            f"{grid.origin_x!r} {grid.origin_y!r}\n"
        )
        for iy in range(grid.height):
            row = grid.data[iy]
            fh.write(" ".join("nan" if math.isnan(v) else repr(float(v)) for v in row))
            fh.write("\n")


def height_diff_map(grid: HeightGrid) -> DiffGrid:
    """Max absolute height difference to the 8-neighborhood, per cell.

    Only known neighbors contribute.  A cell is unknown in the result when
    the cell itself is unknown or when all of its neighbors are unknown.
    Border cells use the neighbors that exist.
    """
    h = grid.data
    padded = np.full((h.shape[0] + 2, h.shape[1] + 2), np.nan)
    padded[1:-1, 1:-1] = h
    stacks = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            shifted = padded[1 + dy : 1 + dy + h.shape[0], 1 + dx : 1 + dx + h.shape[1]]
            stacks.append(np.abs(h - shifted))
    stack = np.stack(stacks)
    valid = ~np.isnan(stack)
    filled = np.where(valid, stack, -np.inf)
    diffs = np.where(valid.any(axis=0), filled.max(axis=0), np.nan)
    diffs[np.isnan(h)] = np.nan
    return DiffGrid(grid.resolution, grid.origin_x, grid.origin_y, diffs)


def subsample(grid: HeightGrid) -> HeightGrid:
    """Halve the grid resolution with a binomial 4x4 kernel.

    Output cell (i, j) covers the 2x2 input block (2i, 2j)..(2i+1, 2j+1)
    plus a one-cell margin, weighted by the outer product of
    (1, 3, 3, 1)/8.  Weights over known cells are renormalized; the output
    cell is unknown iff the known weight mass falls below 0.5.  The output
    origin shifts by half an input cell so cell centers stay aligned with
    the covered block.
    """
    h = grid.data
    out_h = (grid.height + 1) // 2
    out_w = (grid.width + 1) // 2
    padded = np.full((2 * out_h + 2, 2 * out_w + 2), np.nan)
    padded[1 : 1 + grid.height, 1 : 1 + grid.width] = h

    value_sum = np.zeros((out_h, out_w))
    mass = np.zeros((out_h, out_w))
    for v, wy in enumerate(BINOMIAL_AXIS_WEIGHTS):
        for u, wx in enumerate(BINOMIAL_AXIS_WEIGHTS):
            w = wy * wx
            window = padded[v : v + 2 * out_h : 2, u : u + 2 * out_w : 2]
            known = ~np.isnan(window)
            mass += w * known
            value_sum += np.where(known, w * window, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(mass >= MIN_KNOWN_MASS, value_sum / mass, np.nan)
    return HeightGrid(
        grid.resolution * 2.0,
        grid.origin_x + grid.resolution / 2.0,
        grid.origin_y + grid.resolution / 2.0,
        values,
    )


def write_pgm(grid: HeightGrid, path: str, overlay: np.ndarray | None = None) -> None:
    """Export as ASCII portable graymap (P2) plus a scaling sidecar.

    Known values are scaled linearly to gray 1..254 between the grid min and
    max; unknown cells map to gray 0.  An optional boolean overlay mask marks
    cells at gray 255 (used for path overlays).  The sidecar file
    ``<path>.scale`` records min/max/resolution so the graymap is invertible.
    """
    data = grid.data
    known = ~np.isnan(data)
    if known.any():
        lo = float(np.nanmin(data))
        hi = float(np.nanmax(data))
    else:
        lo, hi = 0.0, 0.0
    span = hi - lo
    gray = np.zeros(data.shape, dtype=np.int32)
    if span > 0.0:
        gray[known] = 1 + np.round((data[known] - lo) / span * 253.0).astype(np.int32)
    else:
        gray[known] = 1
    if overlay is not None:
        gray[overlay.astype(bool)] = 255
    with open(path, "w", encoding="ascii") as fh:
        fh.write("P2\n")
        fh.write(f"{grid.width} {grid.height}\n255\n")
        for iy in range(grid.height):
            fh.write(" ".join(str(int(v)) for v in gray[iy]))
            fh.write("\n")
    with open(path + ".scale", "w", encoding="ascii") as fh:
        fh.write(f"min_m = {lo!r}\n")
        fh.write(f"max_m = {hi!r}\n")
        fh.write(f"resolution_m = {grid.resolution!r}\n")
        fh.write(f"origin_x_m = {grid.origin_x!r}\n")
        fh.write(f"origin_y_m = {grid.origin_y!r}\n")
        fh.write("gray_0 = unknown\n")
        fh.write("gray_255 = overlay\n")
