from .trajectory import AgentPose, Trajectory, to_agent_frame, to_world_frame
from .layout import LayoutParams, RoadLayout, generate_layout, LAYOUT_KINDS
from .simulate import simulate_agent
from .raster import GridTransform, SceneMap, rasterize
from .chamfer import ChamferField, chamfer_transform, sample_field
from .dataset import SceneRecord, SceneDataset, generate_dataset, load_dataset

__all__ = [
    "AgentPose",
    "Trajectory",
    "to_agent_frame",
    "to_world_frame",
    "LayoutParams",
    "RoadLayout",
    "generate_layout",
    "LAYOUT_KINDS",
    "simulate_agent",
    "GridTransform",
    "SceneMap",
    "rasterize",
    "ChamferField",
    "chamfer_transform",
    "sample_field",
    "SceneRecord",
    "SceneDataset",
    "generate_dataset",
    "load_dataset",
]
