"""Evaluation, comparison and preprocessing of 4D face-mesh sequences."""

__version__ = "0.1.0"

from .mesh import (  # noqa: E402
    LipLandmarkSet,
    Mesh,
    MeshError,
    MeshSequence,
    TopologyError,
    TopologyMode,
    VertexMask,
    load_lips,
    load_mask,
    load_mesh,
    load_sequence,
    save_mesh,
)

__all__ = [
    "LipLandmarkSet",
    "Mesh",
    "MeshError",
    "MeshSequence",
    "TopologyError",
    "TopologyMode",
    "VertexMask",
    "load_lips",
    "load_mask",
    "load_mesh",
    "load_sequence",
    "save_mesh",
]
