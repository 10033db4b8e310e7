"""Real-corpus and simulator-export dataset handling.

Expected on-disk layout::

    root/
      real/
        flooded/*.{jpg,png}
        nonflooded/*.{jpg,png}
        masks/flooded/*.png          # optional binary annotations, 255 = water
      sim/<id>/
        nonflooded.png  flooded.png  depth.png
        seg_nonflooded.png  seg_flooded.png  mask.png  meta.json

Depth maps are stored as 24-bit codes packed big-endian into the RGB
channels of a PNG: ``code = R*2^16 + G*2^8 + B`` and
``meters = code / (2^24 - 1) * 655.36``, so the full code range covers
0..655.36 m with the maximum code landing exactly on the range limit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image as PILImage

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyDomain,
    LabelOutOfRange,
    MaskInconsistent,
    MissingFile,
    NotMetric,
    OutOfRange,
)

DEPTH_MAX_METERS = 655.36
DEPTH_CODE_MAX = (1 << 24) - 1

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")

SIM_SAMPLE_FILES = (
    "nonflooded.png",
    "flooded.png",
    "depth.png",
    "seg_nonflooded.png",
    "seg_flooded.png",
    "mask.png",
    "meta.json",
)


# ---------------------------------------------------------------------------
# palette


@dataclass(frozen=True)
class PaletteClass:
    index: int
    name: str
    rgb: tuple[int, int, int]


DEFAULT_PALETTE: tuple[PaletteClass, ...] = (
    PaletteClass(0, "road/ground", (128, 64, 128)),
    PaletteClass(1, "sidewalk", (244, 35, 232)),
    PaletteClass(2, "building", (70, 70, 70)),
    PaletteClass(3, "vegetation", (107, 142, 35)),
    PaletteClass(4, "sky", (70, 130, 180)),
    PaletteClass(5, "person", (220, 20, 60)),
    PaletteClass(6, "vehicle", (0, 0, 142)),
    PaletteClass(7, "pole/sign", (153, 153, 153)),
    PaletteClass(8, "water", (0, 170, 255)),
    PaletteClass(9, "other", (0, 0, 0)),
)

N_SEG_CLASSES = 10


def validate_palette(palette: Sequence[PaletteClass]) -> tuple[PaletteClass, ...]:
    """Check the 10-class contract and return the palette as a tuple."""
    palette = tuple(palette)
    if len(palette) != N_SEG_CLASSES:
        raise LabelOutOfRange(f"palette must define exactly {N_SEG_CLASSES} classes, got {len(palette)}")
    if sorted(c.index for c in palette) != list(range(N_SEG_CLASSES)):
        raise LabelOutOfRange("palette indices must be 0..9 with no duplicates")
    if not any(c.name == "water" for c in palette):
        raise LabelOutOfRange("palette must contain a class named 'water'")
    return palette


def load_palette(path: str | Path) -> tuple[PaletteClass, ...]:
    """Load a palette from a JSON list of {index, name, rgb} records."""
    with open(path, "r", encoding="utf-8") as f:
        records = json.load(f)
    palette = tuple(
        PaletteClass(int(r["index"]), str(r["name"]), tuple(int(v) for v in r["rgb"]))
        for r in records
    )
    return validate_palette(palette)


def save_palette(palette: Sequence[PaletteClass], path: str | Path) -> None:
    records = [{"index": c.index, "name": c.name, "rgb": list(c.rgb)} for c in palette]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(records, f, indent=2)


# ---------------------------------------------------------------------------
# core array types


@dataclass(eq=False)
class Image:
    """An H x W x 3 color image with float values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionMismatch(f"image must be HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionMismatch("image must have at least one row and column")
        if px.dtype != np.float32:
            px = px.astype(np.float32)
        if float(px.min()) < 0.0 or float(px.max()) > 1.0:
            raise OutOfRange("image values must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "Image":
        return cls(np.asarray(arr, dtype=np.float32) / 255.0)

    @classmethod
    def from_file(cls, path: str | Path, size: int | None = None) -> "Image":
        return cls(load_image_array(path, size=size))

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.pixels * 255.0).astype(np.uint8)

    def save(self, path: str | Path) -> None:
        PILImage.fromarray(self.to_uint8()).save(path)


@dataclass(eq=False)
class DepthMap:
    """Per-pixel distances: meters when ``is_metric``, relative scale otherwise."""

    values: np.ndarray
    is_metric: bool = True

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DimensionMismatch(f"depth map must be HxW, got shape {vals.shape}")
        if vals.size and float(vals.min()) < 0.0:
            raise OutOfRange("depth values must be nonnegative")
        if self.is_metric and vals.size and float(vals.max()) > DEPTH_MAX_METERS:
            raise OutOfRange(f"metric depth exceeds {DEPTH_MAX_METERS} m")
        self.values = vals

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(eq=False)
class SegMap:
    """H x W class indices over the 10-class palette."""

    labels: np.ndarray
    palette: tuple[PaletteClass, ...] = DEFAULT_PALETTE

    def __post_init__(self):
        self.palette = validate_palette(self.palette)
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimensionMismatch(f"segmentation map must be HxW, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= N_SEG_CLASSES):
            raise LabelOutOfRange("segmentation labels must lie in [0, 9]")
        self.labels = labels.astype(np.int64)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def class_index(self, name: str) -> int:
        for c in self.palette:
            if c.name == name:
                return c.index
        raise LabelOutOfRange(f"palette has no class named {name!r}")

    def class_mask(self, name: str) -> "FloodMask":
        return FloodMask((self.labels == self.class_index(name)).astype(np.uint8))


@dataclass(eq=False)
class FloodMask:
    """Binary per-pixel mask; 1 marks the floodable / altered region."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise DimensionMismatch(f"mask must be HxW, got shape {bits.shape}")
        uniq = np.unique(bits)
        if uniq.size and not np.isin(uniq, (0, 1)).all():
            raise OutOfRange("mask must be strictly binary")
        self.bits = bits.astype(np.uint8)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def area(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def zeros(cls, height: int, width: int) -> "FloodMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def from_png(cls, path: str | Path) -> "FloodMask":
        arr = np.asarray(PILImage.open(path).convert("L"))
        return cls((arr >= 128).astype(np.uint8))

    def save_png(self, path: str | Path) -> None:
        # white = flooded, matching the simulator's mask convention
        PILImage.fromarray((self.bits * 255).astype(np.uint8)).save(path)


@dataclass(frozen=True)
class CaptureMeta:
    """Capture metadata stored by the simulator next to each sample."""

    camera_fov_deg: float
    camera_height_m: float
    camera_position: tuple[float, float, float]
    camera_rotation: tuple[float, float, float]
    resolution: tuple[int, int]
    water_level_m: float | None = None
    sample_id: str | None = None

    def __post_init__(self):
        if not 0.0 < self.camera_fov_deg < 180.0:
            raise OutOfRange(f"fov must be in (0, 180), got {self.camera_fov_deg}")
        if self.resolution[0] <= 0 or self.resolution[1] <= 0:
            raise OutOfRange("resolution must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "CaptureMeta":
        return cls(
            camera_fov_deg=float(d["camera_fov_deg"]),
            camera_height_m=float(d["camera_height_m"]),
            camera_position=tuple(float(v) for v in d["camera_position"]),
            camera_rotation=tuple(float(v) for v in d["camera_rotation"]),
            resolution=tuple(int(v) for v in d["resolution"]),
            water_level_m=(None if d.get("water_level_m") is None else float(d["water_level_m"])),
            sample_id=d.get("id"),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "CaptureMeta":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        d = {
            "camera_fov_deg": self.camera_fov_deg,
            "camera_height_m": self.camera_height_m,
            "camera_position": list(self.camera_position),
            "camera_rotation": list(self.camera_rotation),
            "resolution": list(self.resolution),
            "water_level_m": self.water_level_m,
        }
        if self.sample_id is not None:
            d["id"] = self.sample_id
        return d


@dataclass(eq=False)
class SimSample:
    """One paired simulator capture with all side-channel labels."""

    id: str
    non_flooded: Image
    flooded: Image
    depth: DepthMap
    seg_non_flooded: SegMap
    seg_flooded: SegMap
    water_mask: FloodMask
    meta: CaptureMeta

    def __post_init__(self):
        shape = self.non_flooded.pixels.shape[:2]
        for name, arr_shape in (
            ("flooded", self.flooded.pixels.shape[:2]),
            ("depth", self.depth.shape),
            ("seg_non_flooded", self.seg_non_flooded.shape),
            ("seg_flooded", self.seg_flooded.shape),
            ("water_mask", self.water_mask.shape),
        ):
            if arr_shape != shape:
                raise DimensionMismatch(f"{name} shape {arr_shape} != image shape {shape}")
        derived = self.seg_flooded.class_mask("water").bits
        if not np.array_equal(derived, self.water_mask.bits):
            n = int(np.sum(derived != self.water_mask.bits))
            raise MaskInconsistent(f"water mask disagrees with seg water pixels on {n} pixel(s)")


# ---------------------------------------------------------------------------
# depth codec


def decode_depth(depth_image: np.ndarray) -> DepthMap:
    """Unpack a 24-bit RGB depth code image into metric meters."""
    arr = np.asarray(depth_image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionMismatch(f"depth image must be HxWx3, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise OutOfRange("depth image channels must be integers")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise OutOfRange("depth image channels must lie in [0, 255]")
    a = arr.astype(np.int64)
    code = (a[..., 0] << 16) | (a[..., 1] << 8) | a[..., 2]
    values = code.astype(np.float64) * (DEPTH_MAX_METERS / DEPTH_CODE_MAX)
    return DepthMap(values, is_metric=True)


def encode_depth(depth: DepthMap) -> np.ndarray:
    """Pack metric depth back into the 24-bit RGB code image.

    Round-trips with :func:`decode_depth` to within one code quantum
    (655.36 / (2^24 - 1) meters); exact on values produced by the decoder.
    """
    if not depth.is_metric:
        raise NotMetric("encode_depth requires metric depth")
    vals = depth.values
    if vals.size and float(vals.max()) > DEPTH_MAX_METERS:
        raise OutOfRange(f"depth exceeds {DEPTH_MAX_METERS} m")
    code = np.rint(vals * (DEPTH_CODE_MAX / DEPTH_MAX_METERS)).astype(np.int64)
    out = np.empty(vals.shape + (3,), dtype=np.uint8)
    out[..., 0] = (code >> 16) & 0xFF
    out[..., 1] = (code >> 8) & 0xFF
    out[..., 2] = code & 0xFF
    return out


# ---------------------------------------------------------------------------
# image / label IO


def load_image_array(path: str | Path, size: int | None = None) -> np.ndarray:
    """Decode an image file to float32 HxWx3 in [0, 1], optionally resized."""
    img = PILImage.open(path).convert("RGB")
    if size is not None:
        img = _resize_center_crop(img, size, PILImage.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def _resize_center_crop(img: PILImage.Image, size: int, resample) -> PILImage.Image:
    w, h = img.size
    scale = size / min(w, h)
    nw, nh = max(size, round(w * scale)), max(size, round(h * scale))
    img = img.resize((nw, nh), resample)
    left, top = (nw - size) // 2, (nh - size) // 2
    return img.crop((left, top, left + size, top + size))


def _nearest_grid(src_h: int, src_w: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column source indices for a resize-shorter-side + center-crop, nearest."""
    scale = size / min(src_h, src_w)
    nh, nw = max(size, round(src_h * scale)), max(size, round(src_w * scale))
    top, left = (nh - size) // 2, (nw - size) // 2
    rows = np.clip(((np.arange(size) + top + 0.5) * (src_h / nh)).astype(np.int64), 0, src_h - 1)
    cols = np.clip(((np.arange(size) + left + 0.5) * (src_w / nw)).astype(np.int64), 0, src_w - 1)
    return rows, cols


def resample_labels(arr: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resize + center crop for label-like arrays."""
    rows, cols = _nearest_grid(arr.shape[0], arr.shape[1], size)
    return arr[np.ix_(rows, cols)]


def _load_seg_array(path: str | Path, palette: Sequence[PaletteClass]) -> np.ndarray:
    """Read a segmentation PNG stored either as class indices or palette colors."""
    img = PILImage.open(path)
    if img.mode in ("L", "P", "I", "I;16"):
        return np.asarray(img.convert("L"), dtype=np.int64)
    rgb = np.asarray(img.convert("RGB"), dtype=np.int64)
    labels = np.full(rgb.shape[:2], -1, dtype=np.int64)
    for c in palette:
        match = (rgb == np.asarray(c.rgb)).all(axis=2)
        labels[match] = c.index
    if (labels < 0).any():
        bad = rgb[labels < 0][0]
        raise LabelOutOfRange(f"segmentation color {tuple(bad)} not in palette")
    return labels


def load_sim_sample(
    dir_path: str | Path,
    palette: Sequence[PaletteClass] = DEFAULT_PALETTE,
    size: int | None = None,
) -> SimSample:
    """Load and fully validate one simulator capture directory.

    The binary ``mask.png`` is cross-checked against the water-class pixels
    of ``seg_flooded.png``; any disagreement raises :class:`MaskInconsistent`.
    """
    d = Path(dir_path)
    palette = validate_palette(palette)
    missing = [name for name in SIM_SAMPLE_FILES if not (d / name).exists()]
    if missing:
        raise MissingFile(f"{d}: missing {', '.join(missing)}")

    meta = CaptureMeta.from_file(d / "meta.json")
    non_flooded = np.asarray(PILImage.open(d / "nonflooded.png").convert("RGB"), np.float32) / 255.0
    flooded = np.asarray(PILImage.open(d / "flooded.png").convert("RGB"), np.float32) / 255.0
    depth = decode_depth(np.asarray(PILImage.open(d / "depth.png").convert("RGB")))
    seg_nf = _load_seg_array(d / "seg_nonflooded.png", palette)
    seg_fl = _load_seg_array(d / "seg_flooded.png", palette)
    mask = FloodMask.from_png(d / "mask.png")

    shapes = {
        "nonflooded.png": non_flooded.shape[:2],
        "flooded.png": flooded.shape[:2],
        "depth.png": depth.shape,
        "seg_nonflooded.png": seg_nf.shape,
        "seg_flooded.png": seg_fl.shape,
        "mask.png": mask.shape,
    }
    if len(set(shapes.values())) != 1:
        raise DimensionMismatch(f"{d}: inconsistent shapes {shapes}")

    if size is not None:
        non_flooded = load_image_array(d / "nonflooded.png", size=size)
        flooded = load_image_array(d / "flooded.png", size=size)
        depth = DepthMap(resample_labels(depth.values, size), depth.is_metric)
        seg_nf = resample_labels(seg_nf, size)
        seg_fl = resample_labels(seg_fl, size)
        mask = FloodMask(resample_labels(mask.bits, size))

    seg_flooded = SegMap(seg_fl, palette)
    derived = seg_flooded.class_mask("water")
    if not np.array_equal(derived.bits, mask.bits):
        n = int(np.sum(derived.bits != mask.bits))
        raise MaskInconsistent(f"{d}: mask.png disagrees with seg water pixels on {n} pixel(s)")

    sample_id = meta.sample_id if meta.sample_id is not None else d.name
    return SimSample(
        id=sample_id,
        non_flooded=Image(non_flooded),
        flooded=Image(flooded),
        depth=depth,
        seg_non_flooded=SegMap(seg_nf, palette),
        seg_flooded=seg_flooded,
        water_mask=mask,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# index


@dataclass(frozen=True)
class SimSampleRef:
    id: str
    dir: Path


@dataclass(frozen=True)
class IndexConfig:
    require_real: bool = True
    require_sim: bool = True
    palette: tuple[PaletteClass, ...] = DEFAULT_PALETTE


@dataclass(eq=False)
class DatasetIndex:
    real_flooded: tuple[Path, ...]
    real_non_flooded: tuple[Path, ...]
    real_water_masks: dict[Path, Path]
    sim_samples: tuple[SimSampleRef, ...]
    palette: tuple[PaletteClass, ...] = DEFAULT_PALETTE

    @property
    def counts(self) -> tuple[int, int, int]:
        return (len(self.real_flooded), len(self.real_non_flooded), len(self.sim_samples))


def _list_images(d: Path) -> tuple[Path, ...]:
    if not d.is_dir():
        return ()
    return tuple(sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS))


def build_index(root_path: str | Path, config: IndexConfig | None = None) -> DatasetIndex:
    """Scan a dataset tree into a deterministic, validated index.

    Ordering is lexicographic by path so two scans of the same tree are
    identical.  Raises :class:`EmptyDomain` when a required domain has no
    images and :class:`DuplicateId` when two sim captures share an id.
    """
    cfg = config or IndexConfig()
    root = Path(root_path)
    flooded = _list_images(root / "real" / "flooded")
    non_flooded = _list_images(root / "real" / "nonflooded")
    if cfg.require_real:
        if not flooded:
            raise EmptyDomain("real/flooded has no images")
        if not non_flooded:
            raise EmptyDomain("real/nonflooded has no images")

    masks: dict[Path, Path] = {}
    mask_dir = root / "real" / "masks" / "flooded"
    if mask_dir.is_dir():
        by_stem = {p.stem: p for p in _list_images(mask_dir)}
        masks = {p: by_stem[p.stem] for p in flooded if p.stem in by_stem}

    refs: list[SimSampleRef] = []
    seen: set[str] = set()
    sim_root = root / "sim"
    if sim_root.is_dir():
        for d in sorted(p for p in sim_root.iterdir() if p.is_dir()):
            missing = [name for name in SIM_SAMPLE_FILES if not (d / name).exists()]
            if missing:
                raise MissingFile(f"{d}: missing {', '.join(missing)}")
            meta = CaptureMeta.from_file(d / "meta.json")
            sid = meta.sample_id if meta.sample_id is not None else d.name
            if sid in seen:
                raise DuplicateId(f"sim sample id {sid!r} appears more than once")
            seen.add(sid)
            refs.append(SimSampleRef(sid, d))
    if cfg.require_sim and not refs:
        raise EmptyDomain("sim has no samples")

    return DatasetIndex(flooded, non_flooded, masks, tuple(refs), cfg.palette)


# ---------------------------------------------------------------------------
# batching


@dataclass(frozen=True)
class DomainSpec:
    """How to mix simulated and real items inside a batch stream."""

    sim_fraction: float = 0.5
    image_size: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.sim_fraction <= 1.0:
            raise OutOfRange("sim_fraction must lie in [0, 1]")


@dataclass(eq=False)
class BatchItem:
    """One training item: a non-flooded A-side and a flooded B-side.

    Simulated items are exact pairs and carry labels; real items are an
    unpaired draw from the two real pools with labels absent (``None``).
    """

    image_a: np.ndarray
    image_b: np.ndarray
    is_sim: bool
    mask_a: np.ndarray | None = None
    mask_b: np.ndarray | None = None
    seg_a: np.ndarray | None = None
    seg_b: np.ndarray | None = None
    depth: np.ndarray | None = None
    depth_is_metric: bool = False
    meta: CaptureMeta | None = None
    id_a: str = ""
    id_b: str = ""


class BatchSampler:
    """Seeded sampler over a dataset index; state is checkpointable.

    A single instance is single-consumer; create one per stream.
    """

    def __init__(self, index: DatasetIndex, spec: DomainSpec, seed: int):
        self.index = index
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self._sim_cache: dict[str, SimSample] = {}
        self._real_cache: dict[Path, np.ndarray] = {}
        f = spec.sim_fraction
        n_sim, n_real = len(index.sim_samples), len(index.real_non_flooded)
        if f > 0 and n_sim == 0:
            raise EmptyDomain("sim_fraction > 0 but index has no sim samples")
        if f < 1 and (n_real == 0 or len(index.real_flooded) == 0):
            raise EmptyDomain("sim_fraction < 1 but index has no real images")
        if f >= 1.0:
            self.items_per_epoch = n_sim
        elif f <= 0.0:
            self.items_per_epoch = n_real
        else:
            self.items_per_epoch = n_sim + n_real

    # -- state round-trip for resumable training
    def get_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state

    def _load_sim(self, ref: SimSampleRef) -> SimSample:
        if ref.id not in self._sim_cache:
            self._sim_cache[ref.id] = load_sim_sample(
                ref.dir, self.index.palette, size=self.spec.image_size
            )
        return self._sim_cache[ref.id]

    def _load_real(self, path: Path) -> np.ndarray:
        if path not in self._real_cache:
            self._real_cache[path] = load_image_array(path, size=self.spec.image_size)
        return self._real_cache[path]

    def draw(self) -> BatchItem:
        f = self.spec.sim_fraction
        use_sim = f >= 1.0 or (f > 0.0 and self.rng.random() < f)
        if use_sim:
            ref = self.index.sim_samples[int(self.rng.integers(len(self.index.sim_samples)))]
            s = self._load_sim(ref)
            return BatchItem(
                image_a=s.non_flooded.pixels,
                image_b=s.flooded.pixels,
                is_sim=True,
                mask_a=s.water_mask.bits,
                mask_b=s.water_mask.bits,
                seg_a=s.seg_non_flooded.labels,
                seg_b=s.seg_flooded.labels,
                depth=s.depth.values,
                depth_is_metric=s.depth.is_metric,
                meta=s.meta,
                id_a=s.id,
                id_b=s.id,
            )
        pa = self.index.real_non_flooded[int(self.rng.integers(len(self.index.real_non_flooded)))]
        pb = self.index.real_flooded[int(self.rng.integers(len(self.index.real_flooded)))]
        mask_b = None
        if pb in self.index.real_water_masks:
            bits = FloodMask.from_png(self.index.real_water_masks[pb]).bits
            if self.spec.image_size is not None:
                bits = resample_labels(bits, self.spec.image_size)
            mask_b = bits
        return BatchItem(
            image_a=self._load_real(pa),
            image_b=self._load_real(pb),
            is_sim=False,
            mask_b=mask_b,
            id_a=str(pa),
            id_b=str(pb),
        )


def batch_iterator(
    index: DatasetIndex,
    batch_size: int,
    seed: int,
    domain_spec: DomainSpec | None = None,
    epochs: int | None = 1,
) -> Iterator[list[BatchItem]]:
    """Yield reproducible batches mixing real and simulated items.

    Given the same seed the stream is byte-identical.  One epoch covers
    ``items_per_epoch`` draws (the pool size under ``domain_spec``); pass
    ``epochs=None`` for an endless stream.
    """
    if batch_size < 1:
        raise OutOfRange("batch_size must be >= 1")
    spec = domain_spec or DomainSpec()
    sampler = BatchSampler(index, spec, seed)
    n = sampler.items_per_epoch
    epoch = 0
    while epochs is None or epoch < epochs:
        for start in range(0, n, batch_size):
            count = min(batch_size, n - start)
            yield [sampler.draw() for _ in range(count)]
        epoch += 1
