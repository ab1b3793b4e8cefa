"""Learnable projection pair factorizing the latent space.

Two square matrices split a latent vector z into z1 = P1 z and z2 = P2 z.
The training penalty drives each matrix toward idempotency (P^2 = P) and
the pair toward mutual orthogonality (P1^T P2 = 0), so that the two latent
components land in orthogonal subspaces.  The matrices are unconstrained
parameters; they may converge to oblique (non-symmetric) projectors.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ShapeError

# Floor for normalized diagnostics, keeps 0/0 out of reports.
EPS = 1e-12


class ProjectionPair(nn.Module):
    """Holds the two learnable square matrices.

    Serialized inside checkpoints under the names ``proj.P1`` / ``proj.P2``.
    """

    def __init__(self, dim: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.dim = dim
        self.P1 = nn.Parameter(torch.zeros(dim, dim, dtype=dtype))
        self.P2 = nn.Parameter(torch.zeros(dim, dim, dtype=dtype))

    @torch.no_grad()
    def init_near_half_identity(self, generator: torch.Generator, noise_std: float = 0.01):
        """Set each matrix to I/2 plus small entrywise noise.

        Starting at I/2 makes P1 + P2 = I, so the branch sum can reconstruct
        from the first step; the noise breaks the symmetric saddle of the
        idempotency penalty.
        """
        for p in (self.P1, self.P2):
            eye = torch.eye(self.dim, dtype=p.dtype)
            noise = torch.empty_like(p).normal_(0.0, noise_std, generator=generator)
            p.copy_(0.5 * eye + noise)


def project(pair: ProjectionPair, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Apply both projections to a batch of latent vectors.

    Args:
        pair: the projection matrices.
        z: (B, D) batch of latent vectors.

    Returns:
        (z1, z2), each (B, D).  Outputs are unconstrained and may leave the
        encoder's [0, 1] range.
    """
    if z.ndim != 2 or z.shape[1] != pair.dim:
        raise ShapeError(
            f"latent batch shape {tuple(z.shape)} does not match projection dim {pair.dim}"
        )
    # z rows are vectors: z1_row = (P1 @ z_col)^T = z_row @ P1^T
    z1 = z @ pair.P1.t()
    z2 = z @ pair.P2.t()
    return z1, z2


def proj_loss(pair: ProjectionPair) -> torch.Tensor:
    """Projection-algebra penalty.

    Sum of squared Frobenius norms of the ordered cross products P_i^T P_j
    (i != j, so the single cross term appears twice) plus the idempotency
    defects ||P_i^2 - P_i||_F^2.  Nonnegative, and zero exactly when both
    matrices are idempotent and mutually orthogonal.
    """
    p1, p2 = pair.P1, pair.P2
    cross = p1.t() @ p2
    idem1 = p1 @ p1 - p1
    idem2 = p2 @ p2 - p2
    return 2.0 * (cross * cross).sum() + (idem1 * idem1).sum() + (idem2 * idem2).sum()


def idempotency_residual(p: torch.Tensor) -> float:
    """Normalized distance of a square matrix from projectorhood.

    ||P^2 - P||_F / max(||P||_F, eps).  Diagnostic only; zero for any exact
    idempotent, including the zero matrix.
    """
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {tuple(p.shape)}")
    with torch.no_grad():
        num = torch.linalg.matrix_norm(p @ p - p)
        den = torch.clamp(torch.linalg.matrix_norm(p), min=EPS)
        return float(num / den)


def cross_orthogonality(pair: ProjectionPair) -> float:
    """||P1^T P2||_F / max(||P1||_F ||P2||_F, eps), the matrix-level analogue
    of latent orthogonality."""
    with torch.no_grad():
        num = torch.linalg.matrix_norm(pair.P1.t() @ pair.P2)
        den = torch.clamp(
            torch.linalg.matrix_norm(pair.P1) * torch.linalg.matrix_norm(pair.P2), min=EPS
        )
        return float(num / den)


def latent_orthogonality(pair: ProjectionPair, z: torch.Tensor) -> float:
    """Mean |cos(z1, z2)| over a batch of latents.

    |z1^T z2| / max(||z1|| ||z2||, eps) per vector, averaged; lies in [0, 1].
    Zero when P1^T P2 = 0, since z1^T z2 = z^T P1^T P2 z.
    """
    single = z.ndim == 1
    if single:
        z = z.unsqueeze(0)
    z1, z2 = project(pair, z)
    with torch.no_grad():
        dots = (z1 * z2).sum(dim=1).abs()
        dens = torch.clamp(
            torch.linalg.vector_norm(z1, dim=1) * torch.linalg.vector_norm(z2, dim=1), min=EPS
        )
        vals = dots / dens
        return float(vals.mean())
