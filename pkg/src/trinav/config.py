"""Robot geometry and planner configuration.

Both types are plain dataclasses.  ``PlannerConfig`` can be loaded from a
flat ``key = value`` text file; command-line flags override file values.
Grid resolutions and orientation counts per level are structural constants
of the representation, not configuration.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

# Structural constants of the three-level representation.
LEVEL_RESOLUTION = {1: 0.025, 2: 0.05, 3: 0.1}
LEVEL_ORIENTATIONS = {1: 64, 2: 32, 3: 16}


@dataclass(frozen=True)
class RobotGeometry:
    """Footprint and leg travel, all lengths in meters.

    Foot order throughout the package: front-left, front-right, rear-left,
    rear-right.  Longitudinal foot offsets are relative to the neutral
    position; lateral positions are fixed.
    """

    base_length: float = 0.8
    base_width: float = 0.7
    foot_length: float = 0.25
    foot_width: float = 0.1
    lateral_offset: float = 0.3
    sagittal_neutral: float = 0.3
    sagittal_travel: float = 0.2
    clearance: float = 0.3

    def __post_init__(self) -> None:
        for name in ("base_length", "base_width", "foot_length", "foot_width",
                     "lateral_offset", "sagittal_neutral", "sagittal_travel", "clearance"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.sagittal_travel >= self.sagittal_neutral + self.base_length:
            raise ValueError("sagittal travel exceeds any sane leg geometry")

    @property
    def half_diagonal(self) -> float:
        """Base half-diagonal; used as the turning arc radius."""
        return math.hypot(self.base_length / 2.0, self.base_width / 2.0)

    @property
    def contact_area_length(self) -> float:
        """Length of the ground-contact envelope (all foot travel covered)."""
        return 2.0 * (self.sagittal_neutral + self.sagittal_travel) + self.foot_length

    @property
    def contact_area_width(self) -> float:
        return 2.0 * self.lateral_offset + self.foot_width

    def foot_home(self, index: int) -> tuple[float, float]:
        """Neutral (sagittal, lateral) position of foot ``index`` in the base frame."""
        sag = self.sagittal_neutral if index < 2 else -self.sagittal_neutral
        lat = self.lateral_offset if index % 2 == 0 else -self.lateral_offset
        return sag, lat


@dataclass
class PlannerConfig:
    """Planner parameters; every field can be set from a config file."""

    # window extents (square, centered on the robot / query start)
    level1_window_m: float = 3.0
    level2_window_m: float = 9.0

    # anytime search
    weights: tuple[float, ...] = (3.0, 2.0, 1.5, 1.25, 1.0)
    heuristic: str = "euclidean"  # or "dijkstra"
    time_budget_s: float = 0.0  # 0 = unlimited
    level_mode: str = "combined"  # or "l1" / "l2" / "l3"

    # terrain cost model
    k_diff: float = 107.0
    dh_max_drive_l1: float = 0.04
    dh_max_drive_l2: float = 0.03
    step_max_height: float = 0.3
    step_max_length: float = 0.45

    # stepping maneuver costs (calibrated against coarse step-cell traversal)
    step_cost_base: float = 3.7
    step_cost_height: float = 0.25
    misalign_coeff: float = 10.0
    step_targets_per_foot: int = 3

    # body cost model
    slope_coeff: float = 0.2
    max_slope: float = 0.6
    nan_area_share: float = 0.25

    # stepping gate and refinement
    near_obstacle_radius_m: float = 0.5
    refine_weight: float = 1.25
    refine_tolerance: float = 0.25
    replan_limit: int = 20

    # calibration
    calib_tolerance: float = 0.05

    geometry: RobotGeometry = field(default_factory=RobotGeometry)

    def __post_init__(self) -> None:
        if self.level1_window_m > self.level2_window_m:
            raise ValueError("level1 window must fit inside level2 window")
        if not self.weights or any(w < 1.0 for w in self.weights):
            raise ValueError("weights must all be >= 1.0")
        if list(self.weights) != sorted(self.weights, reverse=True):
            raise ValueError("weights must be non-increasing")
        if self.heuristic not in ("euclidean", "dijkstra"):
            raise ValueError(f"unknown heuristic {self.heuristic!r}")
        if self.level_mode not in ("combined", "l1", "l2", "l3"):
            raise ValueError(f"unknown level_mode {self.level_mode!r}")
        if not 0.0 < self.refine_tolerance < 1.0:
            raise ValueError("refine_tolerance must lie in (0, 1)")

    def replace(self, **kwargs) -> "PlannerConfig":
        return dataclasses.replace(self, **kwargs)


# Fields settable via config file / CLI (geometry handled with a geo. prefix).
_CONFIG_FIELDS = {
    f.name: f.type for f in dataclasses.fields(PlannerConfig) if f.name != "geometry"
}
_GEOMETRY_FIELDS = {f.name for f in dataclasses.fields(RobotGeometry)}


def parse_config_value(name: str, raw: str):
    """Coerce a raw config-file string to the field's type."""
    raw = raw.strip()
    if name == "weights":
        return tuple(float(tok) for tok in raw.replace(",", " ").split())
    if name in ("heuristic", "level_mode"):
        return raw
    if name in ("replan_limit", "step_targets_per_foot"):
        return int(raw)
    return float(raw)


def load_config(path: str, base: PlannerConfig | None = None) -> PlannerConfig:
    """Read a flat ``key = value`` config file.

    Unknown keys raise ValueError (typos should not silently pass).  Lines
    starting with ``#`` and blank lines are skipped.  Geometry fields use a
    ``geometry.`` prefix, e.g. ``geometry.base_length = 0.8``.
    """
    cfg = base if base is not None else PlannerConfig()
    overrides: dict = {}
    geo_overrides: dict = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key.startswith("geometry."):
                geo_key = key[len("geometry."):]
                if geo_key not in _GEOMETRY_FIELDS:
                    raise ValueError(f"{path}: line {lineno}: unknown geometry key {geo_key!r}")
                geo_overrides[geo_key] = float(raw.strip())
            elif key in _CONFIG_FIELDS:
                overrides[key] = parse_config_value(key, raw)
            else:
                raise ValueError(f"{path}: line {lineno}: unknown key {key!r}")
    if geo_overrides:
        overrides["geometry"] = dataclasses.replace(cfg.geometry, **geo_overrides)
    return cfg.replace(**overrides)
