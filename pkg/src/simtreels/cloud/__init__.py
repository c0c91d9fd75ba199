from simtreels.cloud.index import SpatialIndex, all_within, build_index, nearest_within
from simtreels.cloud.io import read_cloud, write_cloud
from simtreels.cloud.model import LabelledCloud, LabelledPoint, concatenate, params_hash

__all__ = [
    "LabelledCloud", "LabelledPoint", "SpatialIndex", "all_within", "build_index",
    "concatenate", "nearest_within", "params_hash", "read_cloud", "write_cloud",
]
