"""Navigation planning for a hybrid driving/stepping robot on 2.5D height maps.

The planner works on three grid resolutions at once: a fine representation
with individual foot placements near the robot, a medium one with paired
foot areas, and a coarse one that only tracks the robot base over terrain
classes.  Search runs anytime weighted A* across all three, and coarse path
segments are refined to the fine representation as the robot approaches
them.
"""

from trinav.config import PlannerConfig, RobotGeometry
from trinav.gridmap import HeightGrid, load_height_map, save_height_map

__all__ = [
    "HeightGrid",
    "PlannerConfig",
    "RobotGeometry",
    "load_height_map",
    "save_height_map",
]

__version__ = "0.1.0"
