"""Linear operators of the experiment catalog and the Laplacian fundamental solution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Domain

KINDS = ("poisson", "helmholtz", "heat", "klein_gordon")
SINGULAR_TOL = 1e-12


class SingularityError(ValueError):
    """Raised when the fundamental solution is evaluated at r == xi."""


@dataclass(frozen=True)
class PdeOperator:
    """Constant-coefficient linear operator acting on ``dim`` coordinates.

    For ``heat`` and ``klein_gordon`` the last coordinate is time; the
    remaining ``dim - 1`` are spatial.
    """

    kind: str
    dim: int
    k: float = 0.0

    def __post_init__(self):
        kind = self.kind.lower().replace("-", "_")
        if kind not in KINDS:
            raise ValueError(f"unknown operator {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "kind", kind)
        if not np.isfinite(self.k):
            raise ValueError("k must be finite")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if kind in ("heat", "klein_gordon") and self.dim < 2:
            raise ValueError(f"{kind} needs at least one spatial coordinate plus time")

    @property
    def has_time(self) -> bool:
        return self.kind in ("heat", "klein_gordon")

    @property
    def identifier(self) -> str:
        k = f",k={self.k:g}" if self.kind in ("helmholtz", "klein_gordon") else ""
        return f"{self.kind}(dim={self.dim}{k})"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k}


def residual(op: PdeOperator, d) -> float | np.ndarray:
    """Apply ``op`` given a derivative bundle over its ``dim`` coordinates.

    Works on single points, batches (coordinate axis first) and on
    reverse-mode nodes alike.
    """
    n = len(d.hess_diag)
    if n != op.dim:
        raise ValueError(f"bundle covers {n} coordinates, operator needs {op.dim}")
    h = d.hess_diag
    spatial = op.dim - 1 if op.has_time else op.dim
    lap = h[0]
    for i in range(1, spatial):
        lap = lap + h[i]
    k2 = op.k * op.k
    if op.kind == "poisson":
        return lap
    if op.kind == "helmholtz":
        return lap + k2 * d.value
    if op.kind == "heat":
        return lap - d.grad[op.dim - 1]
    return lap - h[op.dim - 1] - k2 * d.value


def _distance(r, xi):
    r = np.asarray(r, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if r.shape[-1] != xi.shape[-1]:
        raise ValueError("r and xi have different dimensions")
    return np.linalg.norm(r - xi, axis=-1)


def t_singular(r, xi, dim: int | None = None):
    """Free-space fundamental solution of the Laplacian, ``Delta t = delta``.

    ``(1/2pi) ln|r - xi|`` in 2D and ``-1/(4 pi |r - xi|)`` in 3D.
    """
    dist = _distance(r, xi)
    dim = np.shape(r)[-1] if dim is None else dim
    if np.any(dist < SINGULAR_TOL):
        raise SingularityError("t_singular evaluated at r == xi")
    if dim == 2:
        out = np.log(dist) / (2.0 * np.pi)
    elif dim == 3:
        out = -1.0 / (4.0 * np.pi * dist)
    else:
        raise ValueError(f"fundamental solution only for dim 2 or 3, got {dim}")
    return float(out) if np.ndim(out) == 0 else out


def t_singular_boundary_trace(domain: Domain, r, xi):
    """Dirichlet data for the harmonic correction: ``-t_singular`` on the boundary."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(domain.boundary_distance(r) > 1e-8):
        raise ValueError("r must lie on the domain boundary")
    if not np.all(domain.contains(xi)):
        raise ValueError("xi must be interior")
    return -t_singular(r, xi, domain.dim)


@dataclass
class ProblemInstance:
    """``L u = f`` on ``domain`` with homogeneous Dirichlet data."""

    operator: PdeOperator
    domain: Domain
    f: Callable
    laplacian_of_f: Callable | None = None
    grad_f: Callable | None = None

    def __post_init__(self):
        if self.operator.dim != self.domain.dim:
            raise ValueError("operator and domain dimensions differ")
