"""trivit: a three-level (patch/frame/video) transformer for video
prediction with supervised attention and prototype explanations, built on
a minimal reverse-mode tensor engine with swappable compiled kernels."""

from . import autodiff, backend
from .autodiff import NonFiniteError, ShapeError, Tensor, TensorError
from .gradcheck import GradCheckReport, OracleInvalidError, grad_check
from .model import AttentionRecord, CapacityError, EncoderConfig, MultiLevelTransformer
from .optim import Adam, OptimizerError
from .params import ParameterStore
from .samples import VideoSample, collate
from .supervision import AttnLossWeights
from .synth import SynthConfig, gen_as_sample, gen_ef_sample, make_splits

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AttentionRecord",
    "AttnLossWeights",
    "CapacityError",
    "EncoderConfig",
    "GradCheckReport",
    "MultiLevelTransformer",
    "NonFiniteError",
    "OptimizerError",
    "OracleInvalidError",
    "ParameterStore",
    "ShapeError",
    "SynthConfig",
    "Tensor",
    "TensorError",
    "VideoSample",
    "autodiff",
    "backend",
    "collate",
    "gen_as_sample",
    "gen_ef_sample",
    "grad_check",
    "make_splits",
    "__version__",
]
