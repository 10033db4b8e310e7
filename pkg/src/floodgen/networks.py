"""Learnable components: content/style encoders, style-conditioned decoders,
multi-scale discriminators, the shared-encoder segmentation head, the
latent-space domain classifier (gradient reversal), and the hourglass
height estimator.

Tensors are NCHW float32 with pixel values in [0, 1].
"""

from __future__ import annotations

import hashlib
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import BadDims, ModelLoadError, ShapeMismatch

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    style_dim: int = 8
    content_channels: int = 256
    downsampling_factor: int = 4  # power of two; 4 = two stride-2 stages
    n_residual_blocks: int = 4
    seg_classes: int = 10
    grl_lambda: float = 1.0
    disc_scales: int = 3
    disc_base_channels: int = 64
    style_downsample: int = 4
    hourglass_stacks: int = 2
    hourglass_features: int = 64
    hourglass_depth: int = 3
    input_channels: int = 3

    def __post_init__(self):
        n = self.downsampling_factor
        if n < 2 or n & (n - 1):
            raise ShapeMismatch("downsampling_factor must be a power of two >= 2")
        if self.content_channels % n:
            raise ShapeMismatch("content_channels must be divisible by downsampling_factor")
        for name in ("style_dim", "content_channels", "n_residual_blocks", "seg_classes",
                     "disc_scales", "disc_base_channels", "hourglass_stacks",
                     "hourglass_features", "hourglass_depth", "input_channels"):
            if getattr(self, name) < 1:
                raise ShapeMismatch(f"{name} must be positive")
        if self.grl_lambda < 0:
            raise ShapeMismatch("grl_lambda must be >= 0")

    @property
    def n_downsample(self) -> int:
        return int(math.log2(self.downsampling_factor))

    @property
    def base_channels(self) -> int:
        return self.content_channels // self.downsampling_factor


@dataclass(eq=False)
class LatentCode:
    """Disentangled codes: spatial content plus a global style vector."""

    content: torch.Tensor  # (B, C_c, H/f, W/f)
    style: torch.Tensor  # (B, S)


# ---------------------------------------------------------------------------
# gradient reversal


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = float(lam)
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return -ctx.lam * grad_output, None


def grad_reverse(x: torch.Tensor, lam: float = 1.0) -> torch.Tensor:
    """Identity forward; backward negates the gradient and scales it by lam."""
    return _GradReverse.apply(x, lam)


# ---------------------------------------------------------------------------
# building blocks


class ResidualBlock(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x):
        return x + self.block(x)


class AdaptiveInstanceNorm(nn.Module):
    """Instance norm whose affine parameters come from the style vector."""

    def __init__(self, channels, style_dim):
        super().__init__()
        self.fc = nn.Linear(style_dim, channels * 2)

    def forward(self, x, style):
        gamma, beta = self.fc(style).chunk(2, dim=1)
        out = F.instance_norm(x)
        return (1.0 + gamma[:, :, None, None]) * out + beta[:, :, None, None]


class AdaINResBlock(nn.Module):
    def __init__(self, dim, style_dim):
        super().__init__()
        self.pad = nn.ReflectionPad2d(1)
        self.conv1 = nn.Conv2d(dim, dim, 3)
        self.conv2 = nn.Conv2d(dim, dim, 3)
        self.adain1 = AdaptiveInstanceNorm(dim, style_dim)
        self.adain2 = AdaptiveInstanceNorm(dim, style_dim)

    def forward(self, x, style):
        h = F.relu(self.adain1(self.conv1(self.pad(x)), style), inplace=True)
        h = self.adain2(self.conv2(self.pad(h)), style)
        return x + h


class ContentEncoder(nn.Module):
    def __init__(self, in_channels, base, n_downsample, n_res):
        super().__init__()
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(in_channels, base, 7),
            nn.InstanceNorm2d(base),
            nn.ReLU(inplace=True),
        ]
        dim = base
        for _ in range(n_downsample):
            layers += [
                nn.Conv2d(dim, dim * 2, 4, stride=2, padding=1),
                nn.InstanceNorm2d(dim * 2),
                nn.ReLU(inplace=True),
            ]
            dim *= 2
        layers += [ResidualBlock(dim) for _ in range(n_res)]
        self.model = nn.Sequential(*layers)
        self.out_channels = dim

    def forward(self, x):
        return self.model(x)


class StyleEncoder(nn.Module):
    def __init__(self, in_channels, base, style_dim, n_downsample):
        super().__init__()
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(in_channels, base, 7), nn.ReLU(inplace=True)]
        dim = base
        for _ in range(n_downsample):
            layers += [nn.Conv2d(dim, dim * 2, 4, stride=2, padding=1), nn.ReLU(inplace=True)]
            dim *= 2
        layers += [nn.AdaptiveAvgPool2d(1), nn.Conv2d(dim, style_dim, 1)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x).flatten(1)


class Decoder(nn.Module):
    """Style-conditioned decoder; sigmoid output keeps pixels in [0, 1]."""

    def __init__(self, out_channels, content_channels, style_dim, n_upsample, n_res):
        super().__init__()
        self.res_blocks = nn.ModuleList(
            [AdaINResBlock(content_channels, style_dim) for _ in range(n_res)]
        )
        ups = []
        dim = content_channels
        for _ in range(n_upsample):
            ups += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.ReflectionPad2d(2),
                nn.Conv2d(dim, dim // 2, 5),
                nn.GroupNorm(1, dim // 2),
                nn.ReLU(inplace=True),
            ]
            dim //= 2
        ups += [nn.ReflectionPad2d(3), nn.Conv2d(dim, out_channels, 7), nn.Sigmoid()]
        self.upsample = nn.Sequential(*ups)

    def forward(self, content, style):
        h = content
        for block in self.res_blocks:
            h = block(h, style)
        return self.upsample(h)


class PatchDiscriminator(nn.Module):
    def __init__(self, in_channels, base):
        super().__init__()
        # GroupNorm(1, .) instead of instance norm: the deepest pyramid scale
        # can reach 1x1 maps where per-channel spatial stats are undefined
        self.model = nn.Sequential(
            nn.Conv2d(in_channels, base, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base, base * 2, 4, stride=2, padding=1),
            nn.GroupNorm(1, base * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base * 2, base * 4, 4, stride=2, padding=1),
            nn.GroupNorm(1, base * 4),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base * 4, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.model(x)


class MultiScaleDiscriminator(nn.Module):
    """Independent patch discriminators at factor-2 image pyramid scales."""

    def __init__(self, in_channels, base, n_scales):
        super().__init__()
        self.downsample = nn.AvgPool2d(3, stride=2, padding=1, count_include_pad=False)
        self.scales = nn.ModuleList(
            [PatchDiscriminator(in_channels, base) for _ in range(n_scales)]
        )

    def forward(self, x):
        outputs = []
        for disc in self.scales:
            outputs.append(disc(x))
            x = self.downsample(x)
        return outputs


class SegHead(nn.Module):
    """Atrous-convolution head over content codes, upsampled to input size."""

    def __init__(self, content_channels, n_classes, upsample_factor):
        super().__init__()
        branch_dim = max(content_channels // 4, n_classes)
        self.branches = nn.ModuleList(
            [
                nn.Conv2d(content_channels, branch_dim, 3, padding=d, dilation=d)
                for d in (1, 2, 4)
            ]
        )
        self.project = nn.Sequential(
            nn.ReLU(inplace=True),
            nn.Conv2d(branch_dim * 3, n_classes, 1),
        )
        self.upsample_factor = upsample_factor

    def forward(self, content):
        h = torch.cat([b(content) for b in self.branches], dim=1)
        scores = self.project(h)
        return F.interpolate(
            scores, scale_factor=self.upsample_factor, mode="bilinear", align_corners=False
        )


class DomainClassifier(nn.Module):
    """Predicts P(code came from the simulated domain) behind a reversal layer."""

    def __init__(self, content_channels, hidden=128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(content_channels, hidden, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(hidden, hidden, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(hidden, 1),
        )

    def forward(self, content, grl_lambda=1.0):
        h = grad_reverse(content, grl_lambda)
        return torch.sigmoid(self.net(h)).flatten()


# --- hourglass height estimator ---


class _HgResidual(nn.Module):
    def __init__(self, in_c, out_c):
        super().__init__()
        self.conv = nn.Sequential(
            nn.GroupNorm(1, in_c),
            nn.ReLU(inplace=True),
            nn.Conv2d(in_c, out_c, 3, padding=1),
            nn.GroupNorm(1, out_c),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_c, out_c, 3, padding=1),
        )
        self.skip = nn.Conv2d(in_c, out_c, 1) if in_c != out_c else nn.Identity()

    def forward(self, x):
        return self.skip(x) + self.conv(x)


class _Hourglass(nn.Module):
    def __init__(self, depth, features):
        super().__init__()
        self.up1 = _HgResidual(features, features)
        self.pool = nn.MaxPool2d(2, 2)
        self.low1 = _HgResidual(features, features)
        self.low2 = _Hourglass(depth - 1, features) if depth > 1 else _HgResidual(features, features)
        self.low3 = _HgResidual(features, features)

    def forward(self, x):
        up1 = self.up1(x)
        low = self.low3(self.low2(self.low1(self.pool(x))))
        up2 = F.interpolate(low, size=up1.shape[-2:], mode="bilinear", align_corners=False)
        return up1 + up2


class HeightNet(nn.Module):
    """Stacked hourglass regressing signed per-pixel height at input resolution."""

    def __init__(self, in_channels=3, features=64, stacks=2, depth=3):
        super().__init__()
        self.pre = nn.Sequential(
            nn.Conv2d(in_channels, features, 7, padding=3),
            nn.ReLU(inplace=True),
            _HgResidual(features, features),
        )
        self.hourglasses = nn.ModuleList([_Hourglass(depth, features) for _ in range(stacks)])
        self.features = nn.ModuleList(
            [nn.Sequential(_HgResidual(features, features), nn.Conv2d(features, features, 1))
             for _ in range(stacks)]
        )
        self.outs = nn.ModuleList([nn.Conv2d(features, 1, 1) for _ in range(stacks)])
        self.merge_features = nn.ModuleList(
            [nn.Conv2d(features, features, 1) for _ in range(stacks - 1)]
        )
        self.merge_preds = nn.ModuleList([nn.Conv2d(1, features, 1) for _ in range(stacks - 1)])

    def forward(self, x):
        h = self.pre(x)
        pred = None
        for i, hg in enumerate(self.hourglasses):
            feat = self.features[i](hg(h))
            pred = self.outs[i](feat)
            if i < len(self.hourglasses) - 1:
                h = h + self.merge_features[i](feat) + self.merge_preds[i](pred)
        return pred.squeeze(1)


# ---------------------------------------------------------------------------
# bundle


@dataclass(eq=False)
class NetworkBundle:
    content_encoder_A: nn.Module
    content_encoder_B: nn.Module
    style_encoder_A: nn.Module
    style_encoder_B: nn.Module
    decoder_A: nn.Module
    decoder_B: nn.Module
    discriminator_A: nn.Module
    discriminator_B: nn.Module
    seg_head: nn.Module
    domain_classifier: nn.Module
    height_net: nn.Module
    hyper: ArchConfig

    def modules(self) -> dict[str, nn.Module]:
        return {
            "content_encoder_A": self.content_encoder_A,
            "content_encoder_B": self.content_encoder_B,
            "style_encoder_A": self.style_encoder_A,
            "style_encoder_B": self.style_encoder_B,
            "decoder_A": self.decoder_A,
            "decoder_B": self.decoder_B,
            "discriminator_A": self.discriminator_A,
            "discriminator_B": self.discriminator_B,
            "seg_head": self.seg_head,
            "domain_classifier": self.domain_classifier,
            "height_net": self.height_net,
        }

    def _check_image(self, image: torch.Tensor) -> None:
        if image.dim() != 4 or image.shape[1] != self.hyper.input_channels:
            raise BadDims(f"expected (B, {self.hyper.input_channels}, H, W), got {tuple(image.shape)}")
        f = self.hyper.downsampling_factor
        if image.shape[2] % f or image.shape[3] % f:
            raise BadDims(f"spatial dims must be divisible by {f}, got {tuple(image.shape[2:])}")

    def encode(self, image: torch.Tensor, domain: str) -> LatentCode:
        """Split an image into a content code and a global style code."""
        self._check_image(image)
        enc_c = self.content_encoder_A if domain == "A" else self.content_encoder_B
        enc_s = self.style_encoder_A if domain == "A" else self.style_encoder_B
        return LatentCode(content=enc_c(image), style=enc_s(image))

    def decode(self, content: torch.Tensor, style: torch.Tensor, domain: str) -> torch.Tensor:
        if content.dim() != 4 or content.shape[1] != self.hyper.content_channels:
            raise ShapeMismatch(
                f"content must be (B, {self.hyper.content_channels}, h, w), got {tuple(content.shape)}"
            )
        if style.dim() != 2 or style.shape[1] != self.hyper.style_dim:
            raise ShapeMismatch(f"style must be (B, {self.hyper.style_dim}), got {tuple(style.shape)}")
        if content.shape[0] != style.shape[0]:
            raise ShapeMismatch("content and style batch sizes differ")
        dec = self.decoder_A if domain == "A" else self.decoder_B
        return dec(content, style)

    def discriminate(self, image: torch.Tensor, domain: str) -> list[torch.Tensor]:
        disc = self.discriminator_A if domain == "A" else self.discriminator_B
        return disc(image)

    def seg_forward(self, content: torch.Tensor) -> torch.Tensor:
        if content.dim() != 4 or content.shape[1] != self.hyper.content_channels:
            raise ShapeMismatch(f"content shape {tuple(content.shape)} incompatible with seg head")
        return self.seg_head(content)

    def domain_classify(self, content: torch.Tensor, grl_lambda: float | None = None) -> torch.Tensor:
        lam = self.hyper.grl_lambda if grl_lambda is None else grl_lambda
        return self.domain_classifier(content, lam)

    def height_forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.height_net(image)

    def sample_style(self, batch: int, generator: torch.Generator | None = None) -> torch.Tensor:
        return torch.randn(batch, self.hyper.style_dim, generator=generator)

    def generator_parameters(self):
        for name, module in self.modules().items():
            if name.startswith("discriminator"):
                continue
            if name == "height_net":  # trained by its own loop
                continue
            yield from module.parameters()

    def discriminator_parameters(self):
        yield from self.discriminator_A.parameters()
        yield from self.discriminator_B.parameters()

    def train(self, mode: bool = True) -> "NetworkBundle":
        for m in self.modules().values():
            m.train(mode)
        return self

    def eval(self) -> "NetworkBundle":
        return self.train(False)

    def parameter_count(self) -> int:
        return sum(p.numel() for m in self.modules().values() for p in m.parameters())

    def state_dict(self) -> dict:
        return {name: m.state_dict() for name, m in self.modules().items()}

    def load_state_dict(self, state: dict) -> None:
        for name, m in self.modules().items():
            m.load_state_dict(state[name])


def build_networks(config: ArchConfig | None = None, seed: int = 0) -> NetworkBundle:
    """Construct every sub-network with a reproducible initialization."""
    cfg = config or ArchConfig()
    torch.manual_seed(seed)
    base, n_down = cfg.base_channels, cfg.n_downsample
    make_content = lambda: ContentEncoder(cfg.input_channels, base, n_down, cfg.n_residual_blocks)
    make_style = lambda: StyleEncoder(cfg.input_channels, base, cfg.style_dim, cfg.style_downsample)
    make_decoder = lambda: Decoder(
        cfg.input_channels, cfg.content_channels, cfg.style_dim, n_down, cfg.n_residual_blocks
    )
    make_disc = lambda: MultiScaleDiscriminator(cfg.input_channels, cfg.disc_base_channels, cfg.disc_scales)
    return NetworkBundle(
        content_encoder_A=make_content(),
        content_encoder_B=make_content(),
        style_encoder_A=make_style(),
        style_encoder_B=make_style(),
        decoder_A=make_decoder(),
        decoder_B=make_decoder(),
        discriminator_A=make_disc(),
        discriminator_B=make_disc(),
        seg_head=SegHead(cfg.content_channels, cfg.seg_classes, cfg.downsampling_factor),
        domain_classifier=DomainClassifier(cfg.content_channels),
        height_net=HeightNet(
            cfg.input_channels, cfg.hourglass_features, cfg.hourglass_stacks, cfg.hourglass_depth
        ),
        hyper=cfg,
    )


# ---------------------------------------------------------------------------
# tensor helpers


def image_to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """HxWx3 float array in [0,1] -> (1, 3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(pixels)).float().permute(2, 0, 1).unsqueeze(0)


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) tensor -> HxWx3 float32 array clipped to [0,1]."""
    if t.dim() == 4:
        t = t.squeeze(0)
    arr = t.detach().permute(1, 2, 0).cpu().numpy()
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# checkpoints


def _arch_from_dict(d: dict) -> ArchConfig:
    known = {f.name for f in fields(ArchConfig)}
    return ArchConfig(**{k: v for k, v in d.items() if k in known})


def save_checkpoint(bundle: NetworkBundle, path: str | Path, extra: dict | None = None) -> None:
    """Atomically write all sub-network parameters plus the ArchConfig."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "arch": asdict(bundle.hyper),
        "networks": bundle.state_dict(),
        "extra": extra or {},
    }
    path = Path(path)
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


def load_checkpoint(path: str | Path) -> tuple[NetworkBundle, dict]:
    """Rebuild a bundle from an archive written by :func:`save_checkpoint`."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FloatingPointError:  # pragma: no cover
        raise
    except Exception as e:
        raise ModelLoadError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise ModelLoadError(f"{path} is not a recognized checkpoint archive")
    version = payload["format_version"]
    if int(version) != CHECKPOINT_VERSION:
        raise ModelLoadError(
            f"checkpoint format {version} incompatible with supported version {CHECKPOINT_VERSION}"
        )
    bundle = build_networks(_arch_from_dict(payload["arch"]))
    bundle.load_state_dict(payload["networks"])
    return bundle, payload.get("extra", {})


def checkpoint_digest(path: str | Path) -> str:
    """Short content digest identifying a checkpoint file."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:12]
