"""Synthesise a single still frame that summarises a short video clip.

A generator reads a block-matching compressed clip (key frame, motion
vectors, residuals) and emits one frame; decoders recover the key frame
and the motion stream from it, a classifier reads the action class off it,
and two regularisers keep it looking like a real frame with the clip's
colours. Everything runs on numpy with numba-compiled inner loops.
"""

from ._accel import backend_name, set_num_threads
from .codec import CompressedClip, MotionField, RawClip, compress_clip, estimate_motion, reconstruct_clip
from .errors import (ConfigError, ContractError, DimensionError, DivergenceError, FormatError, IFSError,
                     LoadError, ValidationError)
from .models import ArchConfig, IFSNetworks
from .tensor import Parameter, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "CompressedClip", "ConfigError", "ContractError", "DimensionError", "DivergenceError",
    "FormatError", "IFSError", "IFSNetworks", "LoadError", "MotionField", "Parameter", "RawClip", "Tensor",
    "ValidationError", "backend_name", "compress_clip", "estimate_motion", "no_grad", "reconstruct_clip",
    "set_num_threads",
]
