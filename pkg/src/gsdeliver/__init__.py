"""Trace-driven delivery of layered, segmented Gaussian-splat scenes."""

from .scene import CostModel, CostTable, Scene, Splat, build_cost_table, load_scene, save_scene
from .utility import Viewport, splat_utility

__all__ = [
    "CostModel",
    "CostTable",
    "Scene",
    "Splat",
    "Viewport",
    "build_cost_table",
    "load_scene",
    "save_scene",
    "splat_utility",
]
__version__ = "0.1.0"
