"""Stepwise Patch Merging on a small numpy autodiff engine."""

from .errors import CheckpointError, ConfigError, GraphError, NumericError, ShapeError, SpmError
from .gle import GLE, GleConfig, gle_forward, gtg_forward
from .msa import MSA, MsaConfig, default_kernel_sizes, msa_forward
from .spm import MERGE_MODES, MergeBlock, SpmConfig, spm_forward, spm_shape_plan
from .tensor import COMPUTE, ORACLE, Parameter, Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "GraphError", "NumericError", "ShapeError", "SpmError",
    "GLE", "GleConfig", "gle_forward", "gtg_forward",
    "MSA", "MsaConfig", "default_kernel_sizes", "msa_forward",
    "MERGE_MODES", "MergeBlock", "SpmConfig", "spm_forward", "spm_shape_plan",
    "COMPUTE", "ORACLE", "Parameter", "Tape", "Tensor", "backward",
]
