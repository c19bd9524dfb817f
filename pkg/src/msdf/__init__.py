"""Set-of-local-grids signed distance toolkit.

Fits a bank of small SDF grids to watertight meshes, evaluates and meshes
the blended field, benchmarks against dense-grid and triplane baselines at
matched parameter budgets, and trains a set-equivariant flow-matching
generator over the fitted representations.
"""

__version__ = "0.1.0"

from .baselines import (DenseGrid, TriplaneLinear, budget_sweep, fit_dense_grid,
                        fit_triplane)
from .channels import ChannelStats, estimate_stats, normalize_channels
from .extraction import (ExtractionResult, active_cell_mask, chamfer_to_mesh,
                         marching_cubes, marching_cubes_masked)
from .finetune import DivergenceError, FineTuneHistory, build_pools, fine_tune
from .geometry.mesh import (MeshError, TriangleMesh, load_mesh,
                            normalize_to_unit_cube, save_obj)
from .geometry.oracle import SdfOracle
from .geometry.sampling import farthest_point_sample, sample_surface
from .metrics import SetMetrics, chamfer, emd, set_metrics
from .mosaic import MosaicSdf, covering_scale, initialize, lattice_points
from .mosaic_io import FormatError
from .mosaic_io import load as load_msdf
from .mosaic_io import save as save_msdf
from .flowmatch import (CondOtPath, ModelConfig, SampleResult, ShapeSample,
                        TrainConfig, VelocityModel, cfg_velocity, sample,
                        sample_path, sample_to_shape, train)

__all__ = [
    "__version__",
    "ChannelStats", "CondOtPath", "DenseGrid", "DivergenceError",
    "ExtractionResult", "FineTuneHistory", "FormatError", "MeshError",
    "ModelConfig", "MosaicSdf", "SampleResult", "SdfOracle", "SetMetrics",
    "ShapeSample", "TrainConfig", "TriangleMesh", "TriplaneLinear",
    "VelocityModel", "active_cell_mask", "budget_sweep", "build_pools",
    "cfg_velocity", "chamfer", "chamfer_to_mesh", "covering_scale", "emd",
    "estimate_stats", "farthest_point_sample", "fine_tune", "fit_dense_grid",
    "fit_triplane", "initialize", "lattice_points", "load_mesh", "load_msdf",
    "marching_cubes", "marching_cubes_masked", "normalize_channels",
    "normalize_to_unit_cube", "sample", "sample_path", "sample_surface",
    "sample_to_shape", "save_msdf", "save_obj", "set_metrics", "train",
]
