"""Networks: encoder E, decoder/generator G, image and latent discriminators.

Architecture contract:
  * E: stride-2 5x5 conv blocks (conv -> batch-norm -> leaky rectifier),
    flattened and squashed by a sigmoid into a latent vector in [0, 1]^D.
  * G: mirror of E with transposed convolutions; the final layer is linear
    so branch images are unbounded and two branches can sum to any target.
  * D1: stride-2 conv blocks, global average pool, affine head, sigmoid.
  * D2: affine stack D -> D/2 -> D/4 -> 1 with leaky rectifiers, sigmoid.

Both discriminators clamp their output probabilities away from {0, 1} so
downstream log losses stay finite.  With the default 64x64 patches and five
encoder layers the bottleneck is 2x2x256 = 1024 values, flattened to the
latent vector.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, ShapeError
from .projection import ProjectionPair


@dataclass
class ArchitectureConfig:
    """Shape contract for all four networks.

    ``enc_channels`` also fixes the decoder (mirrored).  The number of
    encoder layers is ``len(enc_channels)``; the input patch must survive
    that many halvings with at least a 2x2 map left, and the final feature
    volume must equal ``latent_dim`` exactly (the latent is the flattened
    bottleneck; there are no fully connected layers in E or G).
    """

    patch_size: int = 64
    latent_dim: int = 1024
    enc_channels: tuple[int, ...] = (32, 64, 128, 256, 256)
    disc_channels: tuple[int, ...] = (16, 32, 64, 128)
    kernel_size: int = 5
    stride: int = 2
    leaky_slope: float = 0.2
    prob_clamp: float = 1e-6

    @property
    def n_layers(self) -> int:
        return len(self.enc_channels)

    @property
    def bottleneck_size(self) -> int:
        return self.patch_size // (2 ** self.n_layers)

    def validate(self):
        down = 2 ** self.n_layers
        if self.patch_size % down != 0 or self.patch_size // down < 2:
            raise ConfigError(
                f"patch_size {self.patch_size} does not survive {self.n_layers} "
                f"stride-2 layers with a >=2x2 bottleneck ({self.patch_size}/{down} < 2)"
            )
        volume = self.bottleneck_size ** 2 * self.enc_channels[-1]
        if volume != self.latent_dim:
            raise ConfigError(
                f"final feature volume {self.bottleneck_size}x{self.bottleneck_size}"
                f"x{self.enc_channels[-1]} = {volume} != latent_dim {self.latent_dim}"
            )
        if self.latent_dim // 4 < 1:
            raise ConfigError(f"latent_dim {self.latent_dim} too small for the affine stack")
        if self.kernel_size != 5 or self.stride != 2:
            raise ConfigError("architecture is defined for kernel 5, stride 2")
        if not (0.0 < self.prob_clamp < 0.5):
            raise ConfigError(f"prob_clamp {self.prob_clamp} outside (0, 0.5)")

    @staticmethod
    def toy() -> "ArchitectureConfig":
        """8x8 patches, 16-dim latent; used by gradient checking."""
        return ArchitectureConfig(
            patch_size=8,
            latent_dim=16,
            enc_channels=(4, 4),
            disc_channels=(4, 8),
        )


# stride-2 5x5 convs with padding 2 halve even sizes exactly; the matching
# transposed conv needs output_padding 1 to invert the halving.
_PAD = 2
_OUT_PAD = 1


class Encoder(nn.Module):
    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        self.cfg = cfg
        blocks = []
        c_in = 1
        for c_out in cfg.enc_channels:
            blocks += [
                nn.Conv2d(c_in, c_out, cfg.kernel_size, cfg.stride, _PAD),
                nn.BatchNorm2d(c_out),
                nn.LeakyReLU(cfg.leaky_slope),
            ]
            c_in = c_out
        self.net = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.net(x)
        return torch.sigmoid(h.flatten(start_dim=1))


class Decoder(nn.Module):
    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        self.cfg = cfg
        chans = tuple(reversed(cfg.enc_channels))
        blocks = []
        for i in range(len(chans) - 1):
            blocks += [
                nn.ConvTranspose2d(chans[i], chans[i + 1], cfg.kernel_size, cfg.stride, _PAD,
                                   output_padding=_OUT_PAD),
                nn.BatchNorm2d(chans[i + 1]),
                nn.ReLU(),
            ]
        # final layer linear: branch images are unbounded
        blocks.append(
            nn.ConvTranspose2d(chans[-1], 1, cfg.kernel_size, cfg.stride, _PAD,
                               output_padding=_OUT_PAD)
        )
        self.net = nn.Sequential(*blocks)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        s = self.cfg.bottleneck_size
        h = z.reshape(z.shape[0], self.cfg.enc_channels[-1], s, s)
        return self.net(h)


class ImageDiscriminator(nn.Module):
    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        self.cfg = cfg
        blocks = []
        c_in = 1
        for i, c_out in enumerate(cfg.disc_channels):
            blocks.append(nn.Conv2d(c_in, c_out, cfg.kernel_size, cfg.stride, _PAD))
            if i > 0:  # no batch-norm on the first block (stabilizes adversarial training)
                blocks.append(nn.BatchNorm2d(c_out))
            blocks.append(nn.LeakyReLU(cfg.leaky_slope))
            c_in = c_out
        self.net = nn.Sequential(*blocks)
        self.head = nn.Linear(c_in, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.net(x)
        pooled = h.mean(dim=(2, 3))
        p = torch.sigmoid(self.head(pooled)).squeeze(1)
        return torch.clamp(p, self.cfg.prob_clamp, 1.0 - self.cfg.prob_clamp)


class LatentDiscriminator(nn.Module):
    def __init__(self, cfg: ArchitectureConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.latent_dim
        self.net = nn.Sequential(
            nn.Linear(d, d // 2),
            nn.LeakyReLU(cfg.leaky_slope),
            nn.Linear(d // 2, d // 4),
            nn.LeakyReLU(cfg.leaky_slope),
            nn.Linear(d // 4, 1),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        p = torch.sigmoid(self.net(z)).squeeze(1)
        return torch.clamp(p, self.cfg.prob_clamp, 1.0 - self.cfg.prob_clamp)


@dataclass
class ModelSet:
    """All networks plus the projection pair, with named-array addressing."""

    arch: ArchitectureConfig
    encoder: Encoder
    decoder: Decoder
    d_image: ImageDiscriminator
    d_latent: LatentDiscriminator
    proj: ProjectionPair
    _prefixes: dict[str, nn.Module] = field(init=False, repr=False)

    def __post_init__(self):
        self._prefixes = {
            "E": self.encoder,
            "G": self.decoder,
            "D1": self.d_image,
            "D2": self.d_latent,
            "proj": self.proj,
        }

    def modules_by_group(self) -> dict[str, nn.Module]:
        return dict(self._prefixes)

    def named_arrays(self) -> dict[str, torch.Tensor]:
        """Every parameter and buffer under a unique dotted name.

        The projection matrices appear as ``proj.P1`` and ``proj.P2``.
        """
        out: dict[str, torch.Tensor] = {}
        for prefix, module in self._prefixes.items():
            for name, p in module.named_parameters():
                out[f"{prefix}.{name}"] = p
            for name, b in module.named_buffers():
                out[f"{prefix}.{name}"] = b
        return out

    def train_mode(self, flag: bool = True):
        for m in self._prefixes.values():
            m.train(flag)

    @contextlib.contextmanager
    def inference(self):
        """Eval-mode, no-grad window; restores training flags afterwards."""
        modes = {k: m.training for k, m in self._prefixes.items()}
        self.train_mode(False)
        try:
            with torch.no_grad():
                yield
        finally:
            for k, m in self._prefixes.items():
                m.train(modes[k])

    def assert_finite(self):
        for name, t in self.named_arrays().items():
            if not torch.isfinite(t).all():
                raise ConfigError(f"non-finite entries in parameter array '{name}'")


def init_parameters(cfg: ArchitectureConfig, seed: int,
                    dtype: torch.dtype = torch.float32,
                    weight_std: float = 0.02,
                    proj_noise_std: float = 0.01) -> ModelSet:
    """Build all networks with deterministic initialization.

    Conv/affine weights ~ N(0, weight_std), biases 0, batch-norm scale 1 and
    shift 0; projection matrices start at I/2 plus N(0, proj_noise_std).
    Identical seeds produce identical parameter bytes.
    """
    cfg.validate()
    gen = torch.Generator().manual_seed(seed)
    models = ModelSet(
        arch=cfg,
        encoder=Encoder(cfg).to(dtype),
        decoder=Decoder(cfg).to(dtype),
        d_image=ImageDiscriminator(cfg).to(dtype),
        d_latent=LatentDiscriminator(cfg).to(dtype),
        proj=ProjectionPair(cfg.latent_dim, dtype=dtype),
    )
    with torch.no_grad():
        for module in (models.encoder, models.decoder, models.d_image, models.d_latent):
            for m in module.modules():
                if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                    m.weight.normal_(0.0, weight_std, generator=gen)
                    if m.bias is not None:
                        m.bias.zero_()
                elif isinstance(m, nn.BatchNorm2d):
                    m.weight.fill_(1.0)
                    m.bias.zero_()
                    m.reset_running_stats()
    models.proj.init_near_half_identity(gen, noise_std=proj_noise_std)
    return models


def _check_image_batch(cfg: ArchitectureConfig, batch: torch.Tensor) -> torch.Tensor:
    if batch.ndim == 3:
        batch = batch.unsqueeze(1)
    if batch.ndim != 4 or batch.shape[1] != 1 or batch.shape[2:] != (cfg.patch_size,) * 2:
        raise ShapeError(
            f"image batch shape {tuple(batch.shape)} does not match "
            f"(B, 1, {cfg.patch_size}, {cfg.patch_size})"
        )
    return batch


def _check_latent_batch(cfg: ArchitectureConfig, batch: torch.Tensor) -> torch.Tensor:
    if batch.ndim == 1:
        batch = batch.unsqueeze(0)
    if batch.ndim != 2 or batch.shape[1] != cfg.latent_dim:
        raise ShapeError(
            f"latent batch shape {tuple(batch.shape)} does not match (B, {cfg.latent_dim})"
        )
    return batch


def encode(models: ModelSet, batch: torch.Tensor) -> torch.Tensor:
    """Encode a batch of images to latent vectors in [0, 1]^D.

    Pure: batch-norm runs in inference mode on its running statistics.
    """
    batch = _check_image_batch(models.arch, batch)
    with models.inference():
        return models.encoder(batch)


def decode(models: ModelSet, latents: torch.Tensor) -> torch.Tensor:
    """Decode latent vectors to branch images (B, 1, H, W); unbounded values."""
    latents = _check_latent_batch(models.arch, latents)
    with models.inference():
        return models.decoder(latents)


def discriminate_image(models: ModelSet, batch: torch.Tensor) -> torch.Tensor:
    """Probability that each image is real, clamped inside (0, 1)."""
    batch = _check_image_batch(models.arch, batch)
    with models.inference():
        return models.d_image(batch)


def discriminate_latent(models: ModelSet, latents: torch.Tensor) -> torch.Tensor:
    """Probability that each latent came from the encoder (vs the prior).

    Accepts vectors outside [0, 1]: projected latents may leave the box.
    """
    latents = _check_latent_batch(models.arch, latents)
    with models.inference():
        return models.d_latent(latents)
