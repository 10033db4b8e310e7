"""Shared fixtures: synthetic simulator captures with analytically known
geometry, plus small dataset trees and a tiny architecture for fast tests.

The synthetic scene is a sloped ground plane (height = slope * distance)
seen by a pinhole camera with a horizontal optical axis, plus an optional
building wall at a fixed distance.  Every pixel's depth follows from ray
intersection, so ground-truth heights, the water mask at a given level,
and all side-channel labels are mutually consistent by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from PIL import Image as PILImage

from floodgen.geometry import CameraModel
from floodgen.networks import ArchConfig
from floodgen.sim_dataset import (
    DEFAULT_PALETTE,
    DepthMap,
    FloodMask,
    decode_depth,
    encode_depth,
)

GROUND, BUILDING, SKY, WATER = 0, 2, 4, 8


@dataclass
class SceneFixture:
    camera: CameraModel
    depth: DepthMap  # quantized through the 24-bit codec
    heights: np.ndarray  # from the quantized depth, meters
    seg: np.ndarray  # labels before flooding
    seg_flooded: np.ndarray
    water_mask: np.ndarray  # uint8 {0,1}
    image: np.ndarray  # non-flooded, float [0,1]
    image_flooded: np.ndarray
    level_m: float
    meta: dict


def build_scene(
    size: int = 64,
    camera_height: float = 2.5,
    fov_deg: float = 90.0,
    slope: float = 0.05,
    wall_span: tuple[float, float] = (0.30, 0.55),
    wall_z: float = 8.0,
    wall_top: float = 6.0,
    level_m: float = 1.0,
    z_cap: float = 200.0,
    sky_z: float = 650.0,
    seed: int = 0,
) -> SceneFixture:
    camera = CameraModel.from_fov(fov_deg, size, size, camera_height)
    rng = np.random.default_rng(seed)

    v = np.arange(size, dtype=np.float64)[:, None]
    u = np.arange(size, dtype=np.float64)[None, :]
    d = v - camera.cy  # downward pixel offset

    denom = slope + d / camera.fy
    with np.errstate(divide="ignore"):
        z_ground = np.where(denom > 0, camera_height / np.where(denom > 0, denom, 1.0), np.inf)
    depth = np.where(np.isfinite(z_ground), np.minimum(z_ground, z_cap), sky_z)
    depth = np.broadcast_to(depth, (size, size)).copy()
    seg = np.where(np.isfinite(z_ground), GROUND, SKY).astype(np.int64)
    seg = np.broadcast_to(seg, (size, size)).copy()

    # building wall: vertical plane at wall_z spanning some columns
    u0, u1 = int(wall_span[0] * size), int(wall_span[1] * size)
    wall_cols = (u >= u0) & (u < u1)
    elev_at_wall = camera_height - d * wall_z / camera.fy
    sees_wall = wall_cols & (elev_at_wall <= wall_top) & (z_ground > wall_z)
    depth[sees_wall] = wall_z
    seg[sees_wall] = BUILDING

    # quantize through the codec so stored depth and labels stay consistent
    depth_q = decode_depth(encode_depth(DepthMap(depth, is_metric=True)))
    heights = camera_height - d * depth_q.values / camera.fy
    water = (heights < level_m).astype(np.uint8)

    seg_flooded = seg.copy()
    seg_flooded[water == 1] = WATER

    shade = np.clip(1.0 - depth_q.values / z_cap, 0.15, 1.0)[..., None]
    base = np.zeros((size, size, 3), dtype=np.float64)
    base[seg == GROUND] = (0.45, 0.42, 0.40)
    base[seg == BUILDING] = (0.55, 0.35, 0.25)
    base[seg == SKY] = (0.60, 0.75, 0.95)
    image = np.clip(base * shade + rng.normal(0, 0.02, base.shape), 0.0, 1.0)

    image_flooded = image.copy()
    water_color = np.array([0.10, 0.22, 0.38])
    ripple = rng.normal(0, 0.015, image.shape)
    image_flooded[water == 1] = np.clip(water_color + ripple, 0, 1)[water == 1]

    meta = {
        "camera_fov_deg": fov_deg,
        "camera_height_m": camera_height,
        "camera_position": [0.0, camera_height, 0.0],
        "camera_rotation": [0.0, 0.0, 0.0],
        "resolution": [size, size],
        "water_level_m": level_m,
    }
    return SceneFixture(
        camera=camera,
        depth=depth_q,
        heights=heights,
        seg=seg,
        seg_flooded=seg_flooded,
        water_mask=water,
        image=image.astype(np.float32),
        image_flooded=image_flooded.astype(np.float32),
        level_m=level_m,
        meta=meta,
    )


def write_sim_dir(d: Path, scene: SceneFixture, meta_extra: dict | None = None) -> Path:
    """Write one simulator capture directory from a scene fixture."""
    d.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(np.rint(scene.image * 255).astype(np.uint8)).save(d / "nonflooded.png")
    PILImage.fromarray(np.rint(scene.image_flooded * 255).astype(np.uint8)).save(d / "flooded.png")
    PILImage.fromarray(encode_depth(scene.depth)).save(d / "depth.png")
    PILImage.fromarray(scene.seg.astype(np.uint8), mode="L").save(d / "seg_nonflooded.png")
    PILImage.fromarray(scene.seg_flooded.astype(np.uint8), mode="L").save(d / "seg_flooded.png")
    FloodMask(scene.water_mask).save_png(d / "mask.png")
    meta = dict(scene.meta)
    if meta_extra:
        meta.update(meta_extra)
    with open(d / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f)
    return d


def write_real_image(path: Path, size: int = 64, seed: int = 0) -> Path:
    rng = np.random.default_rng(seed)
    arr = (rng.uniform(0, 255, (size, size, 3))).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path)
    return path


def make_dataset_root(root: Path, n_sim: int = 2, size: int = 64) -> Path:
    """A minimal full dataset tree: 2+2 real images and n_sim sim captures."""
    for i in range(2):
        write_real_image(root / "real" / "flooded" / f"fl{i}.png", size, seed=100 + i)
        write_real_image(root / "real" / "nonflooded" / f"nf{i}.png", size, seed=200 + i)
    for i in range(n_sim):
        scene = build_scene(
            size=size,
            level_m=0.6 + 0.4 * i,
            wall_span=(0.25 + 0.05 * i, 0.5 + 0.05 * i),
            seed=i,
        )
        write_sim_dir(root / "sim" / f"{i:03d}", scene)
    return root


TINY_ARCH = ArchConfig(
    style_dim=4,
    content_channels=32,
    downsampling_factor=4,
    n_residual_blocks=1,
    disc_base_channels=8,
    style_downsample=2,
    hourglass_features=8,
    hourglass_stacks=1,
    hourglass_depth=2,
)


@pytest.fixture
def tiny_arch() -> ArchConfig:
    return TINY_ARCH


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory) -> Path:
    from floodgen.networks import build_networks, save_checkpoint

    path = tmp_path_factory.mktemp("ckpt") / "tiny.pt"
    save_checkpoint(build_networks(TINY_ARCH, seed=0), path)
    return path


@pytest.fixture
def scene() -> SceneFixture:
    return build_scene()


@pytest.fixture
def sim_dir(tmp_path) -> Path:
    return write_sim_dir(tmp_path / "sample", build_scene())


@pytest.fixture
def dataset_root(tmp_path) -> Path:
    return make_dataset_root(tmp_path / "data")
