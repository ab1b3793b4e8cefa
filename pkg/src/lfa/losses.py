"""The five training objectives.

All functions return scalars in the orientation the trainer descends:
discriminator losses are the negated adversarial values (so gradient
descent on them is ascent of the adversarial objective), generator and
encoder losses keep the sign of the term each network minimizes.

Probability inputs are expected pre-clamped away from {0, 1} by the
discriminators; no clamping happens here.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeError


@dataclass
class LossBundle:
    """All per-step scalars, recorded per epoch in the metrics stream."""

    l_rec: float
    l_adv1_d: float
    l_adv1_g: float
    l_adv2_d: float
    l_adv2_e: float
    l_diff: float
    l_proj: float

    def as_dict(self) -> dict[str, float]:
        return {
            "l_rec": self.l_rec,
            "l_adv1_d": self.l_adv1_d,
            "l_adv1_g": self.l_adv1_g,
            "l_adv2_d": self.l_adv2_d,
            "l_adv2_e": self.l_adv2_e,
            "l_diff": self.l_diff,
            "l_proj": self.l_proj,
        }


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def rec_loss(x: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    """Mean squared reconstruction error over batch and pixels; >= 0."""
    _check_same_shape(x, r, "rec_loss")
    return ((x - r) ** 2).mean()


def adv1_discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """-[mean log D1(x) + mean log(1 - D1(R))].

    The image discriminator descends this, which maximizes its adversarial
    objective: call reals real, reconstructions fake.
    """
    return -(torch.log(d_real).mean() + torch.log(1.0 - d_fake).mean())


def adv1_generator_loss(d_fake: torch.Tensor, non_saturating: bool = False) -> torch.Tensor:
    """Generator half of the image-adversarial objective.

    Default is the saturating form, mean log(1 - D1(R)), exactly the term
    the generator minimizes in the min-max objective.  The non-saturating
    variant -mean log D1(R) is available behind a flag (off by default).
    """
    if non_saturating:
        return -torch.log(d_fake).mean()
    return torch.log(1.0 - d_fake).mean()


def adv2_discriminator_loss(d_encoded: torch.Tensor, d_uniform: torch.Tensor) -> torch.Tensor:
    """-[mean log D2(E(x)) + mean log(1 - D2(u))], u ~ U[0,1]^D.

    Note the label orientation: the latent discriminator maximizes
    log D2(z) on encoded latents and log(1 - D2(u)) on prior draws.
    """
    return -(torch.log(d_encoded).mean() + torch.log(1.0 - d_uniform).mean())


def adv2_encoder_loss(d_encoded: torch.Tensor) -> torch.Tensor:
    """mean log D2(E(x)); the encoder descends its own term of the min-max."""
    return torch.log(d_encoded).mean()


def diff_loss(y1: torch.Tensor, y2: torch.Tensor) -> torch.Tensor:
    """Negated L1 gap between the branch images; always <= 0.

    Per image the absolute difference is averaged over pixels (resolution
    independence), then summed over the batch, mirroring the unnormalized
    image sum of the sparsity objective.  Minimizing this maximizes the
    branch separation.
    """
    _check_same_shape(y1, y2, "diff_loss")
    per_image = (y1 - y2).abs().flatten(start_dim=1).mean(dim=1)
    return -per_image.sum()
