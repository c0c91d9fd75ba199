from simtreels.treegen.definition import (
    PRESETS, LevelParams, TreeDefinition, definition_from_dict, dump_definition, get_definition, load_definition,
)
from simtreels.treegen.mesh import TriangleMesh, load_obj, required_spacing, sample_mesh
from simtreels.treegen.procedural import build_skeleton, generate_tree

__all__ = [
    "PRESETS", "LevelParams", "TreeDefinition", "TriangleMesh", "build_skeleton", "definition_from_dict",
    "dump_definition", "generate_tree", "get_definition", "load_definition", "load_obj", "required_spacing",
    "sample_mesh",
]
