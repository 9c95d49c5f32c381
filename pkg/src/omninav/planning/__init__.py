from .kdtree import INDEXES, KdTree, LinearIndex, kd_insert, kd_nearest, kd_within_radius
from .rrt import (Path, PlannerParams, PlanResult, PlanTree, PlanningError, obstacle_free, path_length, plan,
                  plan_rrt, plan_rrt_star, turning_angle_sum, warm_up)

__all__ = ["INDEXES", "KdTree", "LinearIndex", "kd_insert", "kd_nearest", "kd_within_radius", "Path",
           "PlannerParams", "PlanResult", "PlanTree", "PlanningError", "obstacle_free", "path_length", "plan",
           "plan_rrt", "plan_rrt_star", "turning_angle_sum", "warm_up"]
