"""Optimization loops: alternating discriminator/generator updates over
mixed real+simulated batches, the gradient-reversal warmup schedule, and
the separate height-estimator loop.

Training is deterministic for a fixed seed and platform: data sampling
runs off a dedicated numpy generator and every stochastic tensor draw off
a dedicated torch generator, and both states travel inside checkpoints so
a resumed run reproduces the uninterrupted one bit for bit.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import geometry, losses, networks, sim_dataset
from .errors import (
    EmptyDomain,
    MissingMetadata,
    ModelLoadError,
    NonFiniteLoss,
    OutOfRange,
)
from .losses import LossReport
from .networks import ArchConfig, NetworkBundle, build_networks
from .sim_dataset import BatchItem, BatchSampler, DatasetIndex, DomainSpec

TRAINER_STATE_VERSION = 1

SEED_ENV_VAR = "FLOODGEN_SEED"

MASK_SOURCES = ("annotation", "geometry_metric", "geometry_percentile")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of the optimization; the paper names none of these."""

    # loss weights
    w_gan: float = 1.0
    w_recon_image: float = 10.0
    w_recon_content: float = 1.0
    w_recon_style: float = 1.0
    w_cycle: float = 10.0
    w_semantic: float = 1.0
    w_domain_adv: float = 0.5
    w_seg: float = 1.0
    w_height: float = 1.0
    inside_weight: float = 0.0  # soft weight for pixels inside the flood mask

    # optimization
    lr_gen: float = 1e-4
    lr_disc: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    total_steps: int = 1000

    # gradient-reversal warmup
    grl_initial: float = 0.0
    grl_final: float = 1.0
    grl_warmup_steps: int = 10000

    # data
    sim_fraction: float = 1.0
    image_size: int = 128
    seed: int = 0
    checkpoint_every: int = 1000
    mask_source: str = "geometry_percentile"
    flood_level_m: float | None = None
    flood_fraction: float = 0.3
    semantic_both_directions: bool = True

    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if self.lr_gen <= 0 or self.lr_disc <= 0:
            raise OutOfRange("learning rates must be positive")
        if self.total_steps < 0:
            raise OutOfRange("total_steps must be >= 0")
        if not 0.0 <= self.sim_fraction <= 1.0:
            raise OutOfRange("sim_fraction must lie in [0, 1]")
        if self.mask_source not in MASK_SOURCES:
            raise OutOfRange(f"mask_source must be one of {MASK_SOURCES}")
        if self.grl_final < self.grl_initial:
            raise OutOfRange("grl_final must be >= grl_initial")
        if self.batch_size < 1:
            raise OutOfRange("batch_size must be >= 1")

    def loss_weights(self) -> dict[str, float]:
        return {
            "gan_A": self.w_gan,
            "gan_B": self.w_gan,
            "recon_image": self.w_recon_image,
            "recon_content": self.w_recon_content,
            "recon_style": self.w_recon_style,
            "cycle_masked": self.w_cycle,
            "semantic_consistency": self.w_semantic,
            "domain_adv": self.w_domain_adv,
            "seg_sup": self.w_seg,
            "height_l2": self.w_height,
        }

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        data = {k: v for k, v in raw.items() if k in known}
        if "arch" in data and isinstance(data["arch"], dict):
            arch_known = {f.name for f in fields(ArchConfig)}
            data["arch"] = ArchConfig(**{k: v for k, v in data["arch"].items() if k in arch_known})
        return cls(**data)


def effective_seed(config: TrainConfig) -> int:
    """Config seed, overridable through the FLOODGEN_SEED environment variable."""
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else config.seed


def grl_schedule(step: int, config: TrainConfig) -> float:
    """Linear warmup from grl_initial to grl_final; constant afterwards."""
    if config.grl_warmup_steps <= 0 or step >= config.grl_warmup_steps:
        return config.grl_final
    t = max(step, 0) / config.grl_warmup_steps
    return config.grl_initial + t * (config.grl_final - config.grl_initial)


# ---------------------------------------------------------------------------
# batch collation


@dataclass(eq=False)
class CollatedBatch:
    x_a: torch.Tensor  # (B, 3, H, W)
    x_b: torch.Tensor
    mask_a: torch.Tensor  # (B, H, W) float, 1 = floodable
    mask_b: torch.Tensor
    is_sim: torch.Tensor  # (B,) bool
    seg_a: torch.Tensor | None  # (n_sim, H, W) long, sim items only
    seg_b: torch.Tensor | None

    @property
    def n_sim(self) -> int:
        return int(self.is_sim.sum())


MaskProvider = Callable[[np.ndarray], np.ndarray]


def _default_real_mask(config: TrainConfig) -> MaskProvider:
    """Geometry-derived floodable region for unannotated real images."""
    depth_provider = geometry.RowRampDepth()

    def provide(pixels: np.ndarray) -> np.ndarray:
        image = sim_dataset.Image(pixels)
        camera = geometry.CameraModel.from_fov(
            geometry.DEFAULT_FOV_DEG, image.width, image.height
        )
        level = config.flood_level_m if config.mask_source == "geometry_metric" else None
        mask, _ = geometry.mask_from_pipeline(
            image,
            depth_provider,
            None,
            camera,
            flood_level_m=level,
            fraction_fallback=config.flood_fraction,
        )
        return mask.bits

    return provide


def collate(
    items: Sequence[BatchItem],
    config: TrainConfig,
    real_mask_provider: MaskProvider | None = None,
) -> CollatedBatch:
    """Stack batch items into tensors, filling real-item masks on demand."""
    provider = real_mask_provider or _default_real_mask(config)

    def mask_for(item: BatchItem, side: str) -> np.ndarray:
        stored = item.mask_a if side == "a" else item.mask_b
        if stored is not None:
            return stored
        pixels = item.image_a if side == "a" else item.image_b
        if config.mask_source == "annotation":
            # annotation requested but absent: nothing is floodable
            return np.zeros(pixels.shape[:2], dtype=np.uint8)
        return provider(pixels)

    xs_a = torch.stack([networks.image_to_tensor(i.image_a).squeeze(0) for i in items])
    xs_b = torch.stack([networks.image_to_tensor(i.image_b).squeeze(0) for i in items])
    masks_a = torch.stack([torch.from_numpy(mask_for(i, "a")).float() for i in items])
    masks_b = torch.stack([torch.from_numpy(mask_for(i, "b")).float() for i in items])
    is_sim = torch.tensor([i.is_sim for i in items], dtype=torch.bool)
    seg_a = seg_b = None
    sim_items = [i for i in items if i.is_sim]
    if sim_items:
        seg_a = torch.stack([torch.from_numpy(i.seg_a).long() for i in sim_items])
        seg_b = torch.stack([torch.from_numpy(i.seg_b).long() for i in sim_items])
    return CollatedBatch(xs_a, xs_b, masks_a, masks_b, is_sim, seg_a, seg_b)


# ---------------------------------------------------------------------------
# training state


@dataclass(eq=False)
class TrainState:
    bundle: NetworkBundle
    optim_gen: torch.optim.Optimizer
    optim_disc: torch.optim.Optimizer
    torch_rng: torch.Generator
    step: int = 0


def init_train_state(config: TrainConfig, seed: int | None = None) -> TrainState:
    seed = config.seed if seed is None else seed
    bundle = build_networks(config.arch, seed=seed).train()
    optim_gen = torch.optim.Adam(
        list(bundle.generator_parameters()), lr=config.lr_gen, betas=(config.beta1, config.beta2)
    )
    optim_disc = torch.optim.Adam(
        list(bundle.discriminator_parameters()),
        lr=config.lr_disc,
        betas=(config.beta1, config.beta2),
    )
    rng = torch.Generator()
    rng.manual_seed(seed + 1)
    return TrainState(bundle, optim_gen, optim_disc, rng)


def _finite_or_raise(name: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NonFiniteLoss(f"loss component {name!r} is non-finite: {value}")
    return value


SemanticSegmenter = Callable[[torch.Tensor], torch.Tensor]


def train_step(
    state: TrainState,
    batch: CollatedBatch,
    config: TrainConfig,
    semantic_segmenter: SemanticSegmenter | None = None,
) -> LossReport:
    """One discriminator update followed by one generator-side update.

    The generator-side update covers encoders, decoders, the segmentation
    head, and (through gradient reversal) the domain classifier.  The
    supervised segmentation term contributes only on simulated items.
    """
    bundle, cfg = state.bundle, config
    x_a, x_b = batch.x_a, batch.x_b
    lam = grl_schedule(state.step, cfg)

    # --- discriminator update
    state.optim_disc.zero_grad(set_to_none=True)
    with torch.no_grad():
        c_a = bundle.content_encoder_A(x_a)
        c_b = bundle.content_encoder_B(x_b)
        s_b_rand = bundle.sample_style(x_a.shape[0], state.torch_rng)
        s_a_rand = bundle.sample_style(x_b.shape[0], state.torch_rng)
        x_ab = bundle.decode(c_a, s_b_rand, "B")
        x_ba = bundle.decode(c_b, s_a_rand, "A")
    d_loss_b = losses.gan_losses(bundle.discriminate(x_b, "B"), bundle.discriminate(x_ab, "B"), "discriminator")
    d_loss_a = losses.gan_losses(bundle.discriminate(x_a, "A"), bundle.discriminate(x_ba, "A"), "discriminator")
    d_total = cfg.w_gan * (_finite_or_raise("disc_A", d_loss_a) + _finite_or_raise("disc_B", d_loss_b))
    d_total.backward()
    state.optim_disc.step()

    # --- generator-side update
    state.optim_gen.zero_grad(set_to_none=True)
    code_a = bundle.encode(x_a, "A")
    code_b = bundle.encode(x_b, "B")

    x_a_recon = bundle.decode(code_a.content, code_a.style, "A")
    x_b_recon = bundle.decode(code_b.content, code_b.style, "B")
    x_ab = bundle.decode(code_a.content, s_b_rand, "B")
    x_ba = bundle.decode(code_b.content, s_a_rand, "A")

    code_ab = bundle.encode(x_ab, "B")
    code_ba = bundle.encode(x_ba, "A")

    recon_image = (x_a - x_a_recon).abs().mean() + (x_b - x_b_recon).abs().mean()
    recon_content = (code_ab.content - code_a.content).abs().mean() + (
        code_ba.content - code_b.content
    ).abs().mean()
    recon_style = (code_ab.style - s_b_rand).abs().mean() + (code_ba.style - s_a_rand).abs().mean()

    x_aba = bundle.decode(code_ab.content, code_a.style, "A")
    x_bab = bundle.decode(code_ba.content, code_b.style, "B")
    cycle = losses.masked_cycle_loss(x_a, x_aba, batch.mask_a, cfg.inside_weight) + \
        losses.masked_cycle_loss(x_b, x_bab, batch.mask_b, cfg.inside_weight)

    gan_b = losses.gan_losses(None, bundle.discriminate(x_ab, "B"), "generator")
    gan_a = losses.gan_losses(None, bundle.discriminate(x_ba, "A"), "generator")

    semantic = x_a.new_zeros(())
    if semantic_segmenter is not None and cfg.w_semantic > 0:
        with torch.no_grad():
            seg_src_a = semantic_segmenter(x_a)
        semantic = losses.semantic_consistency_loss(
            seg_src_a, semantic_segmenter(x_ab), batch.mask_a, cfg.inside_weight
        )
        if cfg.semantic_both_directions:
            with torch.no_grad():
                seg_src_b = semantic_segmenter(x_b)
            semantic = semantic + losses.semantic_consistency_loss(
                seg_src_b, semantic_segmenter(x_ba), batch.mask_b, cfg.inside_weight
            )

    prob_a = bundle.domain_classify(code_a.content, lam)
    prob_b = bundle.domain_classify(code_b.content, lam)
    domain = losses.domain_adv_loss(torch.cat([prob_a, prob_b]), batch.is_sim.repeat(2))

    seg_sup = x_a.new_zeros(())
    if batch.n_sim and cfg.w_seg > 0:
        sim_idx = batch.is_sim.nonzero(as_tuple=True)[0]
        pred_a = bundle.seg_forward(code_a.content[sim_idx])
        pred_b = bundle.seg_forward(code_b.content[sim_idx])
        seg_sup = losses.seg_supervised_loss(pred_a, batch.seg_a, cfg.arch.seg_classes) + \
            losses.seg_supervised_loss(pred_b, batch.seg_b, cfg.arch.seg_classes)

    report = LossReport(
        gan_A=_finite_or_raise("gan_A", gan_a).item(),
        gan_B=_finite_or_raise("gan_B", gan_b).item(),
        recon_image=_finite_or_raise("recon_image", recon_image).item(),
        recon_content=_finite_or_raise("recon_content", recon_content).item(),
        recon_style=_finite_or_raise("recon_style", recon_style).item(),
        cycle_masked=_finite_or_raise("cycle_masked", cycle).item(),
        semantic_consistency=_finite_or_raise("semantic_consistency", semantic).item(),
        domain_adv=_finite_or_raise("domain_adv", domain).item(),
        seg_sup=_finite_or_raise("seg_sup", seg_sup).item(),
        height_l2=0.0,
        disc_A=d_loss_a.item(),
        disc_B=d_loss_b.item(),
    )
    weights = cfg.loss_weights()
    g_total = (
        weights["gan_A"] * gan_a
        + weights["gan_B"] * gan_b
        + weights["recon_image"] * recon_image
        + weights["recon_content"] * recon_content
        + weights["recon_style"] * recon_style
        + weights["cycle_masked"] * cycle
        + weights["semantic_consistency"] * semantic
        + weights["domain_adv"] * domain
        + weights["seg_sup"] * seg_sup
    )
    report.total = losses.total_loss(report, weights)  # validates finiteness
    g_total.backward()
    state.optim_gen.step()
    state.step += 1
    return report


# ---------------------------------------------------------------------------
# checkpoint plumbing


def _atomic_torch_save(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            torch.save(payload, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_train_checkpoint(
    state: TrainState, config: TrainConfig, sampler: BatchSampler, path: str | Path
) -> None:
    payload = {
        "format_version": networks.CHECKPOINT_VERSION,
        "trainer_version": TRAINER_STATE_VERSION,
        "arch": asdict(config.arch),
        "networks": state.bundle.state_dict(),
        "extra": {"step": state.step},
        "trainer": {
            "step": state.step,
            "config": asdict(config),
            "optim_gen": state.optim_gen.state_dict(),
            "optim_disc": state.optim_disc.state_dict(),
            "torch_rng": state.torch_rng.get_state(),
            "sampler_rng": sampler.get_state(),
        },
    }
    _atomic_torch_save(payload, Path(path))


def load_train_checkpoint(path: str | Path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise ModelLoadError(f"cannot read checkpoint {path}: {e}") from e
    if "trainer" not in payload:
        raise ModelLoadError(f"{path} holds no trainer state; cannot resume from it")
    return payload


# ---------------------------------------------------------------------------
# full loops


def train(
    config: TrainConfig,
    index: DatasetIndex,
    out_dir: str | Path,
    resume: str | Path | None = None,
    semantic_segmenter: SemanticSegmenter | None = None,
    real_mask_provider: MaskProvider | None = None,
) -> Path:
    """Run the translation training loop; returns the final checkpoint path.

    Writes ``metrics.jsonl`` (one LossReport line per step) and
    ``ckpt_step{N}.pt`` snapshots under ``out_dir``; the final state lands
    in ``ckpt_final.pt``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        payload = load_train_checkpoint(resume)
        config = TrainConfig.from_dict(payload["trainer"]["config"])
    seed = effective_seed(config)

    spec = DomainSpec(sim_fraction=config.sim_fraction, image_size=config.image_size)
    sampler = BatchSampler(index, spec, seed + 2)
    state = init_train_state(config, seed=seed)

    if resume is not None:
        state.bundle.load_state_dict(payload["networks"])
        state.optim_gen.load_state_dict(payload["trainer"]["optim_gen"])
        state.optim_disc.load_state_dict(payload["trainer"]["optim_disc"])
        state.torch_rng.set_state(payload["trainer"]["torch_rng"])
        state.step = payload["trainer"]["step"]
        sampler.set_state(payload["trainer"]["sampler_rng"])

    metrics_path = out / "metrics.jsonl"
    mode = "a" if resume is not None and metrics_path.exists() else "w"
    with open(metrics_path, mode, encoding="utf-8") as metrics:
        while state.step < config.total_steps:
            items = [sampler.draw() for _ in range(config.batch_size)]
            batch = collate(items, config, real_mask_provider)
            report = train_step(state, batch, config, semantic_segmenter)
            metrics.write(report.to_json_line(state.step) + "\n")
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_train_checkpoint(state, config, sampler, out / f"ckpt_step{state.step}.pt")
    final = out / "ckpt_final.pt"
    save_train_checkpoint(state, config, sampler, final)
    return final


def heights_for_item(item: BatchItem, config: TrainConfig) -> np.ndarray:
    """Ground-truth heights for a simulated item via pinhole backprojection."""
    if item.meta is None:
        raise MissingMetadata(f"sample {item.id_a!r} lacks camera metadata")
    h, w = item.depth.shape
    camera = geometry.CameraModel.from_meta(item.meta, width=w, height=h)
    depth = sim_dataset.DepthMap(item.depth, is_metric=item.depth_is_metric)
    return geometry.backproject_heights(depth, camera).values


def train_height(
    config: TrainConfig,
    sim_index: DatasetIndex,
    out_dir: str | Path,
    resume: str | Path | None = None,
) -> Path:
    """Train the hourglass height estimator on simulated samples only.

    Targets come from the stored depth maps via the pinhole camera model;
    the loss ignores sky pixels (sky class of the non-flooded labels).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        payload = load_train_checkpoint(resume)
        config = TrainConfig.from_dict(payload["trainer"]["config"])
    seed = effective_seed(config)

    spec = DomainSpec(sim_fraction=1.0, image_size=config.image_size)
    sampler = BatchSampler(sim_index, spec, seed + 2)
    sky_index = None
    for c in sim_index.palette:
        if c.name == "sky":
            sky_index = c.index

    state = init_train_state(config, seed=seed)
    optim = torch.optim.Adam(
        state.bundle.height_net.parameters(), lr=config.lr_gen, betas=(config.beta1, config.beta2)
    )
    if resume is not None:
        state.bundle.load_state_dict(payload["networks"])
        optim.load_state_dict(payload["trainer"]["optim_gen"])
        state.torch_rng.set_state(payload["trainer"]["torch_rng"])
        state.step = payload["trainer"]["step"]
        sampler.set_state(payload["trainer"]["sampler_rng"])

    metrics_path = out / "metrics.jsonl"
    mode = "a" if resume is not None and metrics_path.exists() else "w"
    with open(metrics_path, mode, encoding="utf-8") as metrics:
        while state.step < config.total_steps:
            items = [sampler.draw() for _ in range(config.batch_size)]
            x = torch.stack([networks.image_to_tensor(i.image_a).squeeze(0) for i in items])
            gt = torch.stack([torch.from_numpy(heights_for_item(i, config)).float() for i in items])
            if sky_index is None:
                sky = torch.zeros_like(gt)
            else:
                sky = torch.stack(
                    [torch.from_numpy((i.seg_a == sky_index).astype(np.float32)) for i in items]
                )
            optim.zero_grad(set_to_none=True)
            pred = state.bundle.height_forward(x)
            loss = losses.height_l2_loss(pred, gt, sky)
            _finite_or_raise("height_l2", loss)
            loss.backward()
            optim.step()
            state.step += 1
            value = loss.item()
            report = LossReport(height_l2=value, total=config.w_height * value)
            metrics.write(report.to_json_line(state.step) + "\n")
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                _save_height_checkpoint(state, config, optim, sampler, out / f"ckpt_step{state.step}.pt")
    final = out / "ckpt_final.pt"
    _save_height_checkpoint(state, config, optim, sampler, final)
    return final


def _save_height_checkpoint(state, config, optim, sampler, path):
    payload = {
        "format_version": networks.CHECKPOINT_VERSION,
        "trainer_version": TRAINER_STATE_VERSION,
        "arch": asdict(config.arch),
        "networks": state.bundle.state_dict(),
        "extra": {"step": state.step, "loop": "height"},
        "trainer": {
            "step": state.step,
            "config": asdict(config),
            "optim_gen": optim.state_dict(),
            "optim_disc": {},
            "torch_rng": state.torch_rng.get_state(),
            "sampler_rng": sampler.get_state(),
        },
    }
    _atomic_torch_save(payload, Path(path))
