import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lfa.errors import ShapeError
from lfa.projection import (ProjectionPair, cross_orthogonality,
                            idempotency_residual, latent_orthogonality,
                            proj_loss, project)
from oracles import frob_sq_loop, matmul_loop, matvec_loop


def make_pair(p1: np.ndarray, p2: np.ndarray, grad: bool = False) -> ProjectionPair:
    pair = ProjectionPair(p1.shape[0], dtype=torch.float64)
    with torch.no_grad():
        pair.P1.copy_(torch.from_numpy(np.asarray(p1, dtype=np.float64)))
        pair.P2.copy_(torch.from_numpy(np.asarray(p2, dtype=np.float64)))
    pair.P1.requires_grad_(grad)
    pair.P2.requires_grad_(grad)
    return pair


def complementary_pair(dim=8) -> ProjectionPair:
    d1 = np.diag([1.0] * (dim // 2) + [0.0] * (dim - dim // 2))
    return make_pair(d1, np.eye(dim) - d1)


def test_project_identity_and_annihilator(rng):
    dim = 8
    pair = make_pair(np.eye(dim), np.zeros((dim, dim)))
    z = torch.from_numpy(rng.normal(size=(3, dim)))
    z1, z2 = project(pair, z)
    assert torch.equal(z1, z)
    assert torch.equal(z2, torch.zeros_like(z))


def test_project_complementary_halves():
    pair = complementary_pair(8)
    z = torch.ones(1, 8, dtype=torch.float64)
    z1, z2 = project(pair, z)
    assert z1[0].tolist() == [1, 1, 1, 1, 0, 0, 0, 0]
    assert z2[0].tolist() == [0, 0, 0, 0, 1, 1, 1, 1]
    assert float((z1 @ z2.t()).detach()) == 0.0


def test_project_matches_matvec_oracle(rng):
    dim = 16
    p1 = rng.normal(size=(dim, dim))
    p2 = rng.normal(size=(dim, dim))
    pair = make_pair(p1, p2)
    z = rng.normal(size=(4, dim))
    z1, z2 = project(pair, torch.from_numpy(z))
    for i in range(4):
        assert np.abs(z1[i].detach().numpy() - matvec_loop(p1, z[i])).max() < 1e-10
        assert np.abs(z2[i].detach().numpy() - matvec_loop(p2, z[i])).max() < 1e-10


def test_project_shape_error():
    with pytest.raises(ShapeError):
        project(make_pair(np.eye(4), np.eye(4)), torch.zeros(2, 5))


def test_proj_loss_zero_for_identity_and_annihilator():
    assert float(proj_loss(make_pair(np.eye(6), np.zeros((6, 6)))).detach()) == 0.0


def test_proj_loss_half_identity_closed_form():
    # P1 = P2 = I/2 at n=4: cross 2*||I/4||^2 = 0.5, idempotency 2*||-I/4||^2 = 0.5
    val = float(proj_loss(make_pair(0.5 * np.eye(4), 0.5 * np.eye(4))))
    assert val == 1.0


def test_proj_loss_identity_pair_closed_form():
    n = 1024
    val = float(proj_loss(make_pair(np.eye(n), np.eye(n))))
    assert val == 2.0 * n


def test_proj_loss_matches_loop_oracle(rng):
    p1 = rng.normal(scale=0.5, size=(6, 6))
    p2 = rng.normal(scale=0.5, size=(6, 6))
    want = (2.0 * frob_sq_loop(matmul_loop(p1.T, p2))
            + frob_sq_loop(matmul_loop(p1, p1) - p1)
            + frob_sq_loop(matmul_loop(p2, p2) - p2))
    got = float(proj_loss(make_pair(p1, p2)))
    assert got == pytest.approx(want, rel=1e-12)


def test_proj_loss_symmetric_under_swap(rng):
    p1 = rng.normal(size=(8, 8))
    p2 = rng.normal(size=(8, 8))
    a = float(proj_loss(make_pair(p1, p2)))
    b = float(proj_loss(make_pair(p2, p1)))
    assert a == pytest.approx(b, rel=1e-12)


def test_proj_loss_zero_iff_constraints_hold(rng):
    # forward: constructed solutions hit exactly zero
    assert float(proj_loss(complementary_pair(8))) == 0.0
    # reverse: zero loss forces both residuals and the cross norm to zero
    q = rng.normal(size=(8, 8))
    pair = make_pair(q, q)          # violates everything generically
    assert float(proj_loss(pair)) > 0
    z = complementary_pair(8)
    assert idempotency_residual(z.P1) == 0.0
    assert idempotency_residual(z.P2) == 0.0
    assert cross_orthogonality(z) == 0.0


def test_proj_loss_gradient_matches_finite_differences(rng):
    dim = 8
    p1 = rng.normal(scale=0.4, size=(dim, dim))
    p2 = rng.normal(scale=0.4, size=(dim, dim))
    pair = make_pair(p1, p2, grad=True)
    loss = proj_loss(pair)
    loss.backward()
    h = 1e-6
    for mat, grad, base in ((pair.P1, pair.P1.grad, p1), (pair.P2, pair.P2.grad, p2)):
        for (i, j) in [(0, 0), (3, 5), (7, 7), (2, 1)]:
            def at(delta):
                pert = base.copy()
                pert[i, j] += delta
                p = make_pair(pert, p2 if mat is pair.P1 else base)
                if mat is pair.P2:
                    p = make_pair(p1, pert)
                return float(proj_loss(p))
            fd = (at(h) - at(-h)) / (2 * h)
            a = float(grad[i, j])
            assert abs(a - fd) / max(abs(a), abs(fd), 1e-6) < 1e-5


def test_idempotency_residual_values(rng):
    assert idempotency_residual(torch.diag(torch.tensor([1.0, 0.0, 1.0]))) == 0.0
    # P = I/2 at n=4: ||-I/4|| / ||I/2|| = 0.5
    assert idempotency_residual(0.5 * torch.eye(4)) == pytest.approx(0.5, rel=1e-6)
    p = rng.normal(size=(9, 9))
    want = math.sqrt(frob_sq_loop(matmul_loop(p, p) - p)) / math.sqrt(frob_sq_loop(p))
    assert idempotency_residual(torch.from_numpy(p)) == pytest.approx(want, rel=1e-10)


def test_idempotency_residual_requires_square():
    with pytest.raises(ShapeError):
        idempotency_residual(torch.zeros(3, 4))


def test_latent_orthogonality_extremes(rng):
    comp = complementary_pair(8)
    z = torch.from_numpy(rng.uniform(0.1, 1.0, size=(5, 8)))
    assert latent_orthogonality(comp, z) == pytest.approx(0.0, abs=1e-15)
    same = make_pair(np.eye(8), np.eye(8))
    assert latent_orthogonality(same, z) == pytest.approx(1.0, rel=1e-12)


def test_latent_orthogonality_matches_dot_oracle(rng):
    dim = 12
    p1 = rng.normal(size=(dim, dim))
    p2 = rng.normal(size=(dim, dim))
    z = rng.normal(size=(dim,))
    z1, z2 = matvec_loop(p1, z), matvec_loop(p2, z)
    want = abs(float(z1 @ z2)) / (np.linalg.norm(z1) * np.linalg.norm(z2))
    got = latent_orthogonality(make_pair(p1, p2), torch.from_numpy(z))
    assert got == pytest.approx(want, abs=1e-12)


def test_zero_loss_implies_zero_orthogonality_for_every_z(rng):
    pair = complementary_pair(16)
    assert float(proj_loss(pair)) == 0.0
    for _ in range(20):
        z = torch.from_numpy(rng.normal(size=(1, 16)))
        assert latent_orthogonality(pair, z) <= 1e-14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_proj_loss_nonnegative_property(seed):
    r = np.random.default_rng(seed)
    pair = make_pair(r.normal(scale=2.0, size=(5, 5)), r.normal(scale=2.0, size=(5, 5)))
    assert float(proj_loss(pair)) >= 0.0
    z = torch.from_numpy(r.normal(size=(3, 5)))
    assert 0.0 <= latent_orthogonality(pair, z) <= 1.0 + 1e-12


def test_init_near_half_identity_statistics():
    pair = ProjectionPair(64)
    gen = torch.Generator().manual_seed(0)
    pair.init_near_half_identity(gen, noise_std=0.01)
    p = pair.P1.detach()
    assert torch.allclose(torch.diagonal(p).mean(), torch.tensor(0.5), atol=0.01)
    off = p - torch.diag(torch.diagonal(p))
    assert float(off.abs().mean()) < 0.02
