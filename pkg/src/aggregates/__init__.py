"""Compliance-driven layout optimization of rigid and deformable aggregate elements."""
from .elements import ElementInstance, ElementPrototype, build_prototypes, make_instance
from .optimizer import continuation_loop, initialize_layout, schedule_stages
from .problem import Problem
from .scene import SceneConfig, load_scene, parse_scene

__all__ = [
    "ElementInstance", "ElementPrototype", "Problem", "SceneConfig", "build_prototypes",
    "continuation_loop", "initialize_layout", "load_scene", "make_instance", "parse_scene",
    "schedule_stages",
]
__version__ = "0.1.0"
