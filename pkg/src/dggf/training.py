"""Two-stage training of the generalized Green's function.

Stage 1 fits the harmonic correction ``t_r(r, xi)`` whose boundary values
cancel the free-space fundamental solution. Stage 2 fits ``G^t(r, xi)`` with
``L_r G^t = t_s + t_r`` in the interior and ``G^t = 0`` on the boundary.
Both stages minimise a weighted residual + boundary loss with Adam on
freshly sampled Latin-hypercube batches.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .geometry import Domain
from .mlp import Mlp, init_mlp, param_digest
from .operators import PdeOperator, residual, t_singular

MIN_PAIR_SEPARATION = 1e-6


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


@dataclass
class TrainConfig:
    """Batch sizes, loss weights and optimizer settings.

    ``n_dm``/``n_bd`` size the Stage-2 (and baseline) batches,
    ``n_dm_t``/``n_bd_t`` the Stage-1 batches.
    """

    n_dm: int = 1000
    n_bd: int = 1000
    n_dm_t: int = 1000
    n_bd_t: int = 1000
    lambda_res: float = 1.0
    lambda_bd: float = 5.0
    learning_rate: float = 1e-3
    epochs: int = 5000
    seed: int = 0
    resample_every_epoch: bool = True
    hidden: tuple = (50, 50, 50, 50)
    activation: str = "tanh"
    output_scale: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("n_dm", "n_bd", "n_dm_t", "n_bd_t"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lambda_res <= 0:
            raise ValueError("lambda_res must be positive")
        if self.lambda_bd < 0:
            raise ValueError("lambda_bd must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not self.output_scale > 0:
            raise ValueError("output_scale must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class TrainReport:
    residual_loss: list = field(default_factory=list)
    boundary_loss: list = field(default_factory=list)
    total_loss: list = field(default_factory=list)
    wall_time: float = 0.0
    param_digest: str = ""
    config_digest: str = ""

    @property
    def epochs(self) -> int:
        return len(self.total_loss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "residual_loss", "boundary_loss", "total_loss"])
            for i, row in enumerate(zip(self.residual_loss, self.boundary_loss, self.total_loss)):
                w.writerow([i + 1, *(repr(float(v)) for v in row)])


@dataclass
class SampleBatch:
    """Interior pairs (r_i, xi_i) and boundary pairs (r_j on the boundary, xi_j interior)."""

    interior_r: np.ndarray
    interior_xi: np.ndarray
    boundary_r: np.ndarray
    boundary_xi: np.ndarray
    seed: object = None

    @property
    def n_interior(self) -> int:
        return len(self.interior_r)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_r)

    def interior_inputs(self) -> np.ndarray:
        return np.concatenate([self.interior_r, self.interior_xi], axis=1)

    def boundary_inputs(self) -> np.ndarray:
        return np.concatenate([self.boundary_r, self.boundary_xi], axis=1)


def _seed(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])


def _separate(domain, r, xi, seed, min_sep):
    """Redraw xi wherever a pair is closer than ``min_sep``."""
    rng = np.random.default_rng(seed)
    for _ in range(100):
        bad = np.linalg.norm(r - xi, axis=1) < min_sep
        if not np.any(bad):
            return xi
        xi = xi.copy()
        xi[bad] = domain.sample_interior(int(bad.sum()), rng)
    raise RuntimeError("could not separate sampled pairs")


def sample_batch(
    domain: Domain, n_interior: int, n_boundary: int, seed, min_sep: float = MIN_PAIR_SEPARATION
) -> SampleBatch:
    """LHS batch of interior and boundary point pairs; every xi is strictly interior."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else _seed(seed)
    s = ss.spawn(5)
    none = np.zeros((0, domain.dim))

    def draw(sampler, count, sub):
        return sampler(count, sub) if count else none

    r_in = draw(domain.sample_interior, n_interior, s[0])
    xi_in = _separate(domain, r_in, draw(domain.sample_interior, n_interior, s[1]), s[4], min_sep)
    r_bd = draw(domain.sample_boundary, n_boundary, s[2])
    xi_bd = draw(domain.sample_interior, n_boundary, s[3])
    return SampleBatch(r_in, xi_in, r_bd, xi_bd, seed)


# -- losses -------------------------------------------------------------------
def _check_batch(batch: SampleBatch):
    if batch.n_interior == 0 and batch.n_boundary == 0:
        raise ValueError("empty batch")


def _mean_square(x):
    return ad.vmean(ad.square(x))


def stage1_loss(net_tr: Mlp, batch: SampleBatch, cfg: TrainConfig):
    """``(total, residual_part, boundary_part)`` for the harmonic correction.

    Residual: Laplacian in ``r`` of the network. Boundary: network minus
    ``g = -t_singular`` at boundary pairs.
    """
    _check_batch(batch)
    n = batch.interior_r.shape[1] if batch.n_interior else batch.boundary_r.shape[1]
    res = bd = 0.0
    if batch.n_interior:
        d = net_tr.derivatives(batch.interior_inputs(), coords=range(n))
        lap = d.hess_diag[0]
        for i in range(1, n):
            lap = lap + d.hess_diag[i]
        res = cfg.lambda_res * _mean_square(lap)
    if batch.n_boundary:
        g = -t_singular(batch.boundary_r, batch.boundary_xi, n)
        v = net_tr(batch.boundary_inputs())
        bd = cfg.lambda_bd * _mean_square(v - g)
    return res + bd, res, bd


def composite_t(net_tr: Mlp, r, xi, dim: int | None = None):
    """``t = t_singular + t_r`` evaluated at pairs (single or batched)."""
    r = np.asarray(r, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    ts = t_singular(r, xi, dim)
    x = np.concatenate([np.atleast_2d(r), np.atleast_2d(xi)], axis=1)
    tr = net_tr(x)
    if r.ndim == 1:
        return float(ts + tr[0])
    return ts + tr


def stage2_loss(net_g: Mlp, net_tr: Mlp, op: PdeOperator, batch: SampleBatch, cfg: TrainConfig, target=None):
    """``(total, residual_part, boundary_part)`` for the generalized Green's function.

    ``target`` may carry precomputed ``t`` values at the interior pairs.
    """
    _check_batch(batch)
    res = bd = 0.0
    if batch.n_interior:
        if target is None:
            target = composite_t(net_tr, batch.interior_r, batch.interior_xi, op.dim)
        d = net_g.derivatives(batch.interior_inputs(), coords=range(op.dim))
        res = cfg.lambda_res * _mean_square(residual(op, d) - target)
    if batch.n_boundary:
        bd = cfg.lambda_bd * _mean_square(net_g(batch.boundary_inputs()))
    return res + bd, res, bd


# -- optimizer ----------------------------------------------------------------
@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params, grads, lr: float):
    """One Adam update without weight decay; returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise ValueError(f"shape mismatch: param {np.shape(p)}, grad {np.shape(g)}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m = [b1 * m + (1 - b1) * g for m, g in zip(state.m, grads)]
    new_v = [b2 * v + (1 - b2) * g * g for v, g in zip(state.v, grads)]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new_p = [
        p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps) for p, m, v in zip(params, new_m, new_v)
    ]
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def loss_param_gradient(loss: Callable, net: Mlp):
    """Gradient of ``loss(net)`` with respect to every parameter of ``net``.

    ``loss`` receives a traced copy of the network and must build its value
    from supported primitives. Returns ``(value, grads)`` with ``grads`` in
    storage order (W0, b0, W1, b1, ...).
    """
    traced = net.traced()
    out = loss(traced)
    leaves = traced.params()
    if not isinstance(out, ad.Var):
        return float(out), [np.zeros_like(p.value) for p in leaves]
    out.backward()
    grads = [np.zeros_like(p.value) if p.grad is None else p.grad for p in leaves]
    return float(out.value), grads


# -- training loops -------------------------------------------------------------
def _scaled(params, c):
    return params if c == 1.0 else params[:-2] + [params[-2] * c, params[-1] * c]


def _fit(net: Mlp, loss_parts: Callable, sample: Callable, cfg: TrainConfig, log_every: int = 0):
    """Generic Adam loop; ``loss_parts(traced, batch)`` returns (total, res, bd).

    Adam works on raw parameters whose final affine layer is multiplied by
    ``cfg.output_scale`` in every forward pass. The returned network has the
    factor folded into its last layer, and losses are in unscaled units.
    """
    report = TrainReport(config_digest=cfg.digest)
    c = cfg.output_scale
    params = _scaled([np.array(p) for p in net.params()], 1.0 / c)
    state = AdamState.zeros_like(params)
    start = time.perf_counter()
    batch = None
    for epoch in range(cfg.epochs):
        if batch is None or cfg.resample_every_epoch:
            batch = sample(epoch)
        leaves = [ad.Var(p) for p in params]
        total, res, bd = loss_parts(net.with_params(_scaled(leaves, c)), batch)
        total.backward()
        value = float(total.value)
        if not np.isfinite(value):
            raise TrainingDiverged(epoch, value)
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in leaves]
        params, state = adam_step(state, params, grads, cfg.learning_rate)
        report.total_loss.append(value)
        report.residual_loss.append(float(ad._val(res)))
        report.boundary_loss.append(float(ad._val(bd)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: total={value:.3e} res={report.residual_loss[-1]:.3e} "
                  f"bd={report.boundary_loss[-1]:.3e}", flush=True)
    out = net.with_params(_scaled(params, c))
    report.wall_time = time.perf_counter() - start
    report.param_digest = param_digest(out)
    return out, report


def _new_net(input_dim: int, cfg: TrainConfig, tag: int) -> Mlp:
    """Glorot-initialised network with ``cfg.output_scale`` applied to its last layer."""
    net = init_mlp((input_dim, *cfg.hidden, 1), cfg.activation, seed=_seed(cfg.seed, tag).generate_state(1)[0])
    return net.with_params(_scaled(net.params(), cfg.output_scale))


def train_stage1(domain: Domain, cfg: TrainConfig, net: Mlp | None = None, log_every: int = 0):
    """Fit the harmonic correction network ``t_r(r, xi)`` on ``domain``."""
    n = domain.dim
    net = net if net is not None else _new_net(2 * n, cfg, tag=1)

    def sample(epoch):
        return sample_batch(domain, cfg.n_dm_t, cfg.n_bd_t, _seed(cfg.seed, 1, epoch))

    return _fit(net, lambda t, b: stage1_loss(t, b, cfg), sample, cfg, log_every)


def train_stage2(domain: Domain, op: PdeOperator, net_tr: Mlp, cfg: TrainConfig, net: Mlp | None = None, log_every: int = 0):
    """Fit the generalized Green's function ``G^t(r, xi)`` for ``op`` on ``domain``."""
    if op.dim != domain.dim:
        raise ValueError("operator and domain dimensions differ")
    net = net if net is not None else _new_net(2 * domain.dim, cfg, tag=2)
    cache = {}

    def sample(epoch):
        batch = sample_batch(domain, cfg.n_dm, cfg.n_bd, _seed(cfg.seed, 2, epoch))
        cache["t"] = composite_t(net_tr, batch.interior_r, batch.interior_xi, op.dim)
        return batch

    def parts(traced, batch):
        return stage2_loss(traced, net_tr, op, batch, cfg, target=cache["t"])

    return _fit(net, parts, sample, cfg, log_every)
