"""Scene files, the simulation driver and the command line interface."""

from .scene import Scene, SceneError, load_scene, scene_from_dict
from .runner import Simulation, run_scene, bench_scene, compare_scene
