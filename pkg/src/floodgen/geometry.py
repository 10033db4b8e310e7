"""Scene height recovery and flood-mask extraction.

A pinhole camera with a horizontal optical axis looks at the scene; for a
pixel (u, v) with depth z the vertical camera-frame offset (downward
positive) is ``Y = (v - cy) * z / fy``, so the height above the ground
plane is ``camera_height_m - Y`` for metric depth and ``-Y`` in relative
units otherwise.  Flood water is modeled as a horizontal plane, so a pixel
floods exactly when its height falls strictly below the flood level.

Relative reconstructions (e.g. from a monocular-depth model) are brought
to metric scale with reference objects of known typical size: each
detection contributes the ratio ``estimated_height_m / relative_height``
and the scene scale is their median (lower of the two middle values for
even counts), which resists detector outliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import (
    AlreadyMetric,
    DepthProviderFailure,
    DimensionMismatch,
    NoReferenceObjects,
    NotMetric,
    OutOfRange,
)
from .sim_dataset import CaptureMeta, DepthMap, FloodMask, Image

# Typical metric heights for the supported reference classes; overridable
# per detector adapter.
CLASS_PRIOR_HEIGHTS_M = {"pedestrian": 1.7, "car": 1.5, "truck": 3.0}

REFERENCE_CLASSES = frozenset(CLASS_PRIOR_HEIGHTS_M)

# Street View-like rig defaults used when capture metadata is absent.
DEFAULT_FOV_DEG = 90.0
DEFAULT_CAMERA_HEIGHT_M = 2.5
DEFAULT_FRACTION = 0.3


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the camera's height above the ground plane."""

    fx: float
    fy: float
    cx: float
    cy: float
    camera_height_m: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise OutOfRange("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise OutOfRange("principal point must lie inside the image")
        if self.camera_height_m <= 0:
            raise OutOfRange("camera height must be positive")

    @classmethod
    def from_fov(
        cls,
        fov_deg: float,
        width: int,
        height: int,
        camera_height_m: float = DEFAULT_CAMERA_HEIGHT_M,
    ) -> "CameraModel":
        """Square-pixel camera from a horizontal field of view."""
        if not 0.0 < fov_deg < 180.0:
            raise OutOfRange("fov must be in (0, 180)")
        f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, camera_height_m, width, height)

    @classmethod
    def from_meta(
        cls, meta: CaptureMeta, width: int | None = None, height: int | None = None
    ) -> "CameraModel":
        """Camera for a capture, optionally rescaled to a resized resolution."""
        w = width if width is not None else meta.resolution[0]
        h = height if height is not None else meta.resolution[1]
        return cls.from_fov(meta.camera_fov_deg, w, h, meta.camera_height_m)


@dataclass(eq=False)
class HeightMap:
    """Signed per-pixel heights above the ground plane."""

    values: np.ndarray
    is_metric: bool = True

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DimensionMismatch(f"height map must be HxW, got shape {vals.shape}")
        self.values = vals

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ReferenceDetection:
    """A detected reference object with its metric and relative extents."""

    object_class: str
    image_bbox: tuple[int, int, int, int]  # (u_min, v_min, u_max, v_max), half-open
    estimated_height_m: float
    relative_height: float | None = None

    def __post_init__(self):
        if self.object_class not in REFERENCE_CLASSES:
            raise OutOfRange(f"unknown reference class {self.object_class!r}")
        u0, v0, u1, v1 = self.image_bbox
        if not (u0 < u1 and v0 < v1 and u0 >= 0 and v0 >= 0):
            raise OutOfRange(f"degenerate bbox {self.image_bbox}")
        if self.estimated_height_m <= 0:
            raise OutOfRange("estimated height must be positive")
        if self.relative_height is not None and self.relative_height <= 0:
            raise OutOfRange("relative height must be positive")


@dataclass(frozen=True)
class ScaleEstimate:
    """Meters per relative unit, aggregated over reference detections."""

    scale: float
    per_object_scales: tuple[float, ...]
    n_objects: int

    def __post_init__(self):
        if self.scale <= 0:
            raise OutOfRange("scale must be positive")
        if self.scale != _lower_median(self.per_object_scales):
            raise OutOfRange("scale must equal the median of per-object ratios")


def _lower_median(xs: Sequence[float]) -> float:
    """Median taking the lower of the two middle values for even counts."""
    s = sorted(xs)
    return s[(len(s) - 1) // 2]


# ---------------------------------------------------------------------------
# operations


def backproject_heights(depth: DepthMap, camera: CameraModel) -> HeightMap:
    """Recover per-pixel heights above the ground plane from axis-aligned depth."""
    if depth.shape != (camera.height, camera.width):
        raise DimensionMismatch(
            f"depth shape {depth.shape} != camera ({camera.height}, {camera.width})"
        )
    v = np.arange(camera.height, dtype=np.float64)[:, None]
    y_down = (v - camera.cy) * depth.values / camera.fy
    if depth.is_metric:
        return HeightMap(camera.camera_height_m - y_down, is_metric=True)
    return HeightMap(-y_down, is_metric=False)


def estimate_scale(detections: Sequence[ReferenceDetection]) -> ScaleEstimate:
    """Median of the per-object metric/relative height ratios."""
    if not detections:
        raise NoReferenceObjects("cannot estimate scale without reference detections")
    ratios = []
    for d in detections:
        if d.relative_height is None:
            raise OutOfRange(f"detection {d.object_class} has no relative height")
        ratios.append(d.estimated_height_m / d.relative_height)
    return ScaleEstimate(_lower_median(ratios), tuple(ratios), len(ratios))


def metricize(
    heights: HeightMap, scale: ScaleEstimate, camera_height_m: float = 0.0
) -> HeightMap:
    """Convert a relative height map to meters.

    Relative maps produced by :func:`backproject_heights` are zero at the
    principal row, so adding ``camera_height_m`` after scaling re-anchors
    the map with the configured camera height holding on the principal ray.
    """
    if heights.is_metric:
        raise AlreadyMetric("height map is already metric")
    return HeightMap(heights.values * scale.scale + camera_height_m, is_metric=True)


def flood_mask_metric(heights: HeightMap, flood_level_m: float) -> FloodMask:
    """Pixels strictly below a metric flood level; ties stay dry."""
    if not heights.is_metric:
        raise NotMetric("metric flood level requires metric heights")
    return FloodMask((heights.values < flood_level_m).astype(np.uint8))


def flood_mask_percentile(
    heights: HeightMap, fraction: float, exclude: FloodMask | None = None
) -> FloodMask:
    """Flood the lowest ``fraction`` of non-excluded pixels.

    The threshold is the linear-interpolation quantile of the heights over
    pixels outside ``exclude``; excluded pixels never flood.  ``fraction=1``
    floods exactly the complement of the exclusion.
    """
    if not 0.0 <= fraction <= 1.0:
        raise OutOfRange("fraction must lie in [0, 1]")
    if exclude is not None and exclude.shape != heights.shape:
        raise DimensionMismatch("exclusion mask shape differs from heights")
    selectable = np.ones(heights.shape, dtype=bool) if exclude is None else exclude.bits == 0
    bits = np.zeros(heights.shape, dtype=np.uint8)
    if not selectable.any() or fraction <= 0.0:
        return FloodMask(bits)
    if fraction >= 1.0:
        bits[selectable] = 1
        return FloodMask(bits)
    threshold = float(np.quantile(heights.values[selectable], fraction, method="linear"))
    bits[(heights.values < threshold) & selectable] = 1
    return FloodMask(bits)


def relative_height_span(heights: HeightMap, bbox: tuple[int, int, int, int]) -> float:
    """Height extent of a detection, over the bbox's central 50% of columns.

    Restricting to the central columns suppresses background bleeding in at
    the bbox edges.
    """
    u0, v0, u1, v1 = bbox
    h, w = heights.shape
    u0, v0 = max(0, u0), max(0, v0)
    u1, v1 = min(w, u1), min(h, v1)
    if u1 <= u0 or v1 <= v0:
        return 0.0
    quarter = (u1 - u0) // 4
    lo, hi = u0 + quarter, u1 - quarter
    if hi <= lo:
        lo, hi = u0, u1
    patch = heights.values[v0:v1, lo:hi]
    return float(patch.max() - patch.min())


def fill_relative_heights(
    detections: Sequence[ReferenceDetection], heights: HeightMap
) -> list[ReferenceDetection]:
    """Fill missing relative heights from the reconstruction; drop degenerate boxes."""
    out = []
    for d in detections:
        if d.relative_height is None:
            span = relative_height_span(heights, d.image_bbox)
            if span <= 0:
                continue
            d = replace(d, relative_height=span)
        out.append(d)
    return out


# ---------------------------------------------------------------------------
# pluggable providers


class DepthProvider(Protocol):
    def __call__(self, image: Image) -> DepthMap: ...


class DetectorProvider(Protocol):
    def __call__(self, image: Image) -> Sequence[ReferenceDetection]: ...


class ConstantDepth:
    """Serve a fixed depth map (simulator ground truth adapter)."""

    name = "ground_truth"

    def __init__(self, depth: DepthMap):
        self.depth = depth

    def __call__(self, image: Image) -> DepthMap:
        if self.depth.shape != (image.height, image.width):
            raise DimensionMismatch("stored depth does not match the image")
        return self.depth


class RowRampDepth:
    """Heuristic relative depth: a ramp growing from the bottom row to a horizon.

    A stand-in for a learned monocular-depth model; rows above the horizon
    are pushed to the far value so they behave like background/sky.
    """

    name = "row_ramp"

    def __init__(self, horizon_frac: float = 0.45, near: float = 1.0, far: float = 80.0):
        if not 0.0 < horizon_frac < 1.0:
            raise OutOfRange("horizon_frac must be in (0, 1)")
        self.horizon_frac = horizon_frac
        self.near = near
        self.far = far

    def __call__(self, image: Image) -> DepthMap:
        h, w = image.height, image.width
        horizon = self.horizon_frac * (h - 1)
        v = np.arange(h, dtype=np.float64)[:, None]
        t = np.clip((h - 1 - v) / max(h - 1 - horizon, 1e-9), 0.0, 1.0)
        vals = self.near + t * (self.far - self.near)
        return DepthMap(np.broadcast_to(vals, (h, w)).copy(), is_metric=False)


class TorchScriptDepth:
    """Adapter over an exported monocular-depth model (TorchScript archive)."""

    def __init__(self, path: str | Path, is_metric: bool = False):
        import torch

        self._torch = torch
        self.module = torch.jit.load(str(path), map_location="cpu").eval()
        self.is_metric = is_metric
        self.name = f"torchscript:{Path(path).name}"

    def __call__(self, image: Image) -> DepthMap:
        torch = self._torch
        with torch.no_grad():
            x = torch.from_numpy(image.pixels).permute(2, 0, 1).unsqueeze(0)
            out = self.module(x)
        vals = out.squeeze().numpy().astype(np.float64)
        return DepthMap(np.clip(vals, 0.0, None), is_metric=self.is_metric)


class NullDetector:
    """Detector adapter that never finds reference objects."""

    def __call__(self, image: Image) -> list[ReferenceDetection]:
        return []


class StaticDetector:
    """Serve a fixed detection list (external 3D-box detector adapter/stub)."""

    def __init__(self, detections: Sequence[ReferenceDetection]):
        self.detections = list(detections)

    def __call__(self, image: Image) -> list[ReferenceDetection]:
        return list(self.detections)


# ---------------------------------------------------------------------------
# full pipeline


def mask_from_pipeline(
    image: Image,
    depth_provider: DepthProvider,
    detector_provider: DetectorProvider | None,
    camera: CameraModel,
    flood_level_m: float | None = None,
    fraction_fallback: float = DEFAULT_FRACTION,
    sky_mask: FloodMask | None = None,
) -> tuple[FloodMask, dict]:
    """Depth -> heights -> (scale) -> flood mask, with percentile fallback.

    Metric masks need metric heights: either the provider's depth is metric
    or reference detections supply a scale.  When neither holds (or no
    level was requested) the mask falls back to the ``fraction_fallback``
    percentile, never flooding ``sky_mask`` pixels.  Returns the mask plus
    a diagnostics mapping (scale, object count, depth source, mode).
    """
    try:
        depth = depth_provider(image)
    except Exception as e:
        raise DepthProviderFailure(f"depth provider failed: {e}") from e
    if depth.shape != (image.height, image.width):
        raise DimensionMismatch("depth provider returned a map with wrong dimensions")

    diagnostics: dict = {
        "depth_source": getattr(depth_provider, "name", type(depth_provider).__name__),
        "n_reference_objects": 0,
        "scale": None,
    }
    heights = backproject_heights(depth, camera)

    if not heights.is_metric and flood_level_m is not None:
        detections = list(detector_provider(image)) if detector_provider is not None else []
        detections = fill_relative_heights(detections, heights)
        if detections:
            scale = estimate_scale(detections)
            heights = metricize(heights, scale, camera.camera_height_m)
            diagnostics["n_reference_objects"] = scale.n_objects
            diagnostics["scale"] = scale.scale

    if heights.is_metric and flood_level_m is not None:
        diagnostics["mode"] = "metric"
        diagnostics["flood_level_m"] = flood_level_m
        mask = flood_mask_metric(heights, flood_level_m)
    else:
        diagnostics["mode"] = "percentile"
        diagnostics["fraction"] = fraction_fallback
        mask = flood_mask_percentile(heights, fraction_fallback, exclude=sky_mask)
    return mask, diagnostics
