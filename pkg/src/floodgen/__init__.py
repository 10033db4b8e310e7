"""Flood rendering for street-level photos: a sim-assisted image-to-image
translation model with mask-restricted consistency losses and a pinhole
geometry pipeline that places the water at a chosen metric level."""

from . import errors, geometry, inference, losses, networks, service, sim_dataset, trainer
from .geometry import (
    CameraModel,
    HeightMap,
    ReferenceDetection,
    ScaleEstimate,
    backproject_heights,
    estimate_scale,
    flood_mask_metric,
    flood_mask_percentile,
    mask_from_pipeline,
    metricize,
)
from .inference import FloodModel, FloodRequest, FloodResult, flood, flood_batch, load_flood_model
from .networks import ArchConfig, LatentCode, NetworkBundle, build_networks
from .sim_dataset import (
    CaptureMeta,
    DatasetIndex,
    DepthMap,
    FloodMask,
    Image,
    SegMap,
    SimSample,
    batch_iterator,
    build_index,
    decode_depth,
    encode_depth,
    load_sim_sample,
)
from .trainer import TrainConfig, train, train_height, train_step

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "CameraModel",
    "CaptureMeta",
    "DatasetIndex",
    "DepthMap",
    "FloodMask",
    "FloodModel",
    "FloodRequest",
    "FloodResult",
    "HeightMap",
    "Image",
    "LatentCode",
    "NetworkBundle",
    "ReferenceDetection",
    "ScaleEstimate",
    "SegMap",
    "SimSample",
    "TrainConfig",
    "backproject_heights",
    "batch_iterator",
    "build_index",
    "build_networks",
    "decode_depth",
    "encode_depth",
    "errors",
    "estimate_scale",
    "flood",
    "flood_batch",
    "flood_mask_metric",
    "flood_mask_percentile",
    "load_flood_model",
    "load_sim_sample",
    "mask_from_pipeline",
    "metricize",
    "train",
    "train_height",
    "train_step",
]
