"""Depth completion for transparent objects.

A windowed-attention encoder, squeeze-excite feature fusion, and a
convolutional decoder turn an RGB image plus a corrupted sensor depth map
into a dense metric depth prediction.  Everything runs on a small numpy
autodiff core so the whole stack is checkable by finite differences.
"""

from .data import (CameraIntrinsics, RgbdSample, SynthConfig, augment,
                   corrupt_depth, generate_scene, load_dataset, load_sample,
                   write_sample)
from .errors import (ConfigError, ContractError, FormatError, GlassDepthError,
                     ShapeError)
from .geometry import (PointCloud, depth_to_pointcloud, pointcloud_to_depth,
                       read_ply, write_ply)
from .loss import LossConfig, depth_loss, final_loss
from .metrics import MetricReport, aggregate, evaluate
from .model import (ModelConfig, ModelParams, decode, encode, ffm_fuse, forward,
                    predict_depth, prepare_input)
from .tensor import Tape, Tensor
from .train import (AdamW, TrainConfig, load_checkpoint, lr_at, save_checkpoint,
                    train)

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor",
    "ModelConfig", "ModelParams", "forward", "encode", "decode", "ffm_fuse",
    "prepare_input", "predict_depth",
    "LossConfig", "depth_loss", "final_loss",
    "MetricReport", "evaluate", "aggregate",
    "RgbdSample", "CameraIntrinsics", "SynthConfig", "generate_scene",
    "corrupt_depth", "augment", "load_sample", "write_sample", "load_dataset",
    "PointCloud", "depth_to_pointcloud", "pointcloud_to_depth", "write_ply",
    "read_ply",
    "TrainConfig", "AdamW", "lr_at", "train", "save_checkpoint",
    "load_checkpoint",
    "GlassDepthError", "ShapeError", "ContractError", "ConfigError",
    "FormatError",
    "__version__",
]
