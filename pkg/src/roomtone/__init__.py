"""Probe-baked reverberation and binaural rendering for 3D scenes."""

__version__ = "0.1.0"

from .bake import BakeConfig, BakedData, ReverbProbe, bake, load_baked, save_baked
from .binaural import ListenerFrameDirection, Spatializer, spatialize
from .engine import Engine, RenderConfig, initialize
from .materials import AcousticMaterial, MaterialTable, builtin_material_table
from .scene import Scene, SceneObject, SourceSpec, Transform, load_scene, shoebox_scene
from .spatial import Ray, SpatialIndex, build_index

__all__ = [
    "AcousticMaterial", "BakeConfig", "BakedData", "Engine", "ListenerFrameDirection",
    "MaterialTable", "Ray", "RenderConfig", "ReverbProbe", "Scene", "SceneObject",
    "SourceSpec", "SpatialIndex", "Spatializer", "Transform", "bake", "build_index",
    "builtin_material_table", "initialize", "load_baked", "load_scene", "save_baked",
    "shoebox_scene", "spatialize",
]
