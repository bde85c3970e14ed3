"""Moment-preserving lossy compression for velocity-space histogram stacks.

The pipeline combines a tied-weight linear autoencoder, per-dimension
product quantization, selectively coded error-bounded residuals, and a
dual-Newton Lagrange projection that restores four derived moments per
image to near floating-point accuracy.
"""

from mlk.autoencoder import AEModel, TrainConfig, ae_accuracy, train
from mlk.decomp import SelectionScheme, Shard, partition, select_training
from mlk.fdata import (FDataset, SyntheticParams, VelocityGrid, gen_synthetic,
                       load_dataset, make_grid, save_dataset)
from mlk.kernels import BACKEND
from mlk.lagrange import (ConstraintSystem, NewtonOptions, apply_lambda,
                          build_constraints, newton_project)
from mlk.pipeline import (PipelineConfig, TimestepState, compress, decompress,
                          evaluate, run_timesteps)
from mlk.qoi import ErrorReport, compression_ratio, compute_qoi, nrmse
from mlk.quantizer import PQCodebook, kmeans_1d, pq_decode, pq_encode, pq_train
from mlk.residual import BuiltinCodec, EBCodec, find_error_bound

__version__ = "0.1.0"

__all__ = [
    "AEModel", "TrainConfig", "ae_accuracy", "train",
    "SelectionScheme", "Shard", "partition", "select_training",
    "FDataset", "SyntheticParams", "VelocityGrid", "gen_synthetic",
    "load_dataset", "make_grid", "save_dataset",
    "BACKEND",
    "ConstraintSystem", "NewtonOptions", "apply_lambda",
    "build_constraints", "newton_project",
    "PipelineConfig", "TimestepState", "compress", "decompress",
    "evaluate", "run_timesteps",
    "ErrorReport", "compression_ratio", "compute_qoi", "nrmse",
    "PQCodebook", "kmeans_1d", "pq_decode", "pq_encode", "pq_train",
    "BuiltinCodec", "EBCodec", "find_error_bound",
    "__version__",
]
