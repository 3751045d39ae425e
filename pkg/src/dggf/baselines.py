"""Comparison methods: PINN, GaussNet (Gaussian-mollified delta) and a
finite-difference numeric Green's function."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .geometry import Domain
from .mlp import Mlp
from .operators import PdeOperator, ProblemInstance, residual
from .oracles import interior_nodes, laplacian_matrix
from .training import SampleBatch, TrainConfig, _fit, _mean_square, _new_net, _seed, sample_batch


def gauss_delta(r, xi, epsilon: float, dim: int | None = None):
    """Unit-mass isotropic Gaussian ``(2 pi eps^2)^(-n/2) exp(-|r - xi|^2 / (2 eps^2))``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    r = np.asarray(r, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    dim = r.shape[-1] if dim is None else dim
    d2 = np.sum((r - xi) ** 2, axis=-1)
    out = (2 * np.pi * epsilon**2) ** (-dim / 2) * np.exp(-d2 / (2 * epsilon**2))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class GaussNetConfig(TrainConfig):
    epsilon: float = 0.05
    symmetry_loss_weight: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.symmetry_loss_weight < 0:
            raise ValueError("symmetry_loss_weight must be nonnegative")

    @classmethod
    def from_train(cls, cfg: TrainConfig, **extra) -> "GaussNetConfig":
        return cls(**dataclasses.asdict(cfg), **extra)


def gaussnet_loss(net: Mlp, op: PdeOperator, batch: SampleBatch, cfg: GaussNetConfig):
    """``(total, residual_part, boundary_part)``; the optional symmetry term is
    folded into the residual part."""
    n = op.dim
    res = bd = 0.0
    if batch.n_interior:
        x = batch.interior_inputs()
        d = net.derivatives(x, coords=range(n))
        target = gauss_delta(batch.interior_r, batch.interior_xi, cfg.epsilon, n)
        res = cfg.lambda_res * _mean_square(residual(op, d) - target)
        if cfg.symmetry_loss_weight > 0:
            swapped = np.concatenate([batch.interior_xi, batch.interior_r], axis=1)
            res = res + cfg.symmetry_loss_weight * symmetry_loss(net, x, swapped)
    if batch.n_boundary:
        bd = cfg.lambda_bd * _mean_square(net(batch.boundary_inputs()))
    return res + bd, res, bd


def symmetry_loss(net: Mlp, x, swapped):
    """Mean of ``|G(r, xi) - G(xi, r)|^2`` over the given pairs."""
    return _mean_square(net(x) - net(swapped))


def train_gaussnet(domain: Domain, op: PdeOperator, cfg: GaussNetConfig, log_every: int = 0):
    """Single-network Green's function trained against a Gaussian delta."""
    if op.dim != domain.dim:
        raise ValueError("operator and domain dimensions differ")
    net = _new_net(2 * domain.dim, cfg, tag=3)

    def sample(epoch):
        return sample_batch(domain, cfg.n_dm, cfg.n_bd, _seed(cfg.seed, 3, epoch))

    return _fit(net, lambda t, b: gaussnet_loss(t, op, b, cfg), sample, cfg, log_every)


def pinn_loss(net: Mlp, problem: ProblemInstance, r_in, r_bd, cfg: TrainConfig):
    op = problem.operator
    res = bd = 0.0
    if len(r_in):
        d = net.derivatives(r_in, coords=range(op.dim))
        res = cfg.lambda_res * _mean_square(residual(op, d) - problem.f(r_in))
    if len(r_bd):
        bd = cfg.lambda_bd * _mean_square(net(r_bd))
    return res + bd, res, bd


def train_pinn(problem: ProblemInstance, cfg: TrainConfig, log_every: int = 0):
    """Direct solve of one problem instance; the network is the solution."""
    domain = problem.domain
    net = _new_net(domain.dim, cfg, tag=4)

    def sample(epoch):
        s = _seed(cfg.seed, 4, epoch).spawn(2)
        return domain.sample_interior(cfg.n_dm, s[0]), domain.sample_boundary(cfg.n_bd, s[1])

    return _fit(net, lambda t, b: pinn_loss(t, problem, b[0], b[1], cfg), sample, cfg, log_every)


# -- numeric Green's function ---------------------------------------------------
class NumericGreen:
    """Discrete Green's matrix of the 5-point Laplacian on the unit square.

    Column ``j`` solves ``A g_j = e_j / h^2`` (unit point mass at node j), so
    a solution is the discrete sum ``u = G f h^2``.
    """

    def __init__(self, grid_n: int):
        if grid_n < 4:
            raise ValueError("grid_n must be >= 4")
        self.grid_n = grid_n
        self.h = 1.0 / grid_n
        self.points = interior_nodes(grid_n, 2)
        A = laplacian_matrix(grid_n, 2).tocsc()
        lu = spla.splu(A)
        m = A.shape[0]
        self.matrix = lu.solve(np.eye(m) / self.h**2)
        if not np.all(np.isfinite(self.matrix)):
            raise np.linalg.LinAlgError("singular discrete operator")

    def __call__(self, i, j):
        return self.matrix[i, j]

    def solve(self, f: Callable | np.ndarray) -> np.ndarray:
        vals = f(self.points) if callable(f) else np.asarray(f)
        return self.matrix @ vals * self.h**2


def ngf_solve(op: PdeOperator, grid_n: int, domain: Domain | None = None) -> NumericGreen:
    if op.kind != "poisson" or op.dim != 2:
        raise ValueError("NGF is only provided for the 2D Poisson operator")
    if domain is not None and domain.shape != "square":
        raise ValueError("NGF is only provided on the square")
    if grid_n < 16:
        raise ValueError("ngf_solve needs grid_n >= 16")
    return NumericGreen(grid_n)
