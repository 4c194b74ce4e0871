"""Point-convolution occupancy networks for surface reconstruction from point clouds."""

from .fields import AnalyticField
from .geometry import Aabb, KdTree, Mesh, PointCloud, knn, mean_nn_distance, rescale_to_reference
from .io import load_model, read_obj, read_xyz, save_model, write_obj, write_xyz
from .mesher import GridSpec, MeshingStats, mc_dense, mc_regro, watertight_check
from .metrics import evaluate_reconstruction
from .model import LatentField, ModelField, PocoConfig, PocoModel, encode, occupancy_batch
from .probe import receptive_field_probe
from .training import train
from .tta import encode_chunked, encode_with_tta, plan_chunks, plan_subsamples

__version__ = "0.1.0"
