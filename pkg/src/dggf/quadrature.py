"""Quadrature rules and solution construction from a trained kernel."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import ClosedBSpline, Domain, cutcube_patches
from .mlp import Mlp


@dataclass
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    resolution: int

    def __len__(self):
        return len(self.weights)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass
class BoundaryRule:
    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.weights)


def build_quadrature(domain: Domain, resolution: int) -> QuadratureRule:
    """Masked midpoint rule: ``resolution**n`` cells over the bounding box,
    keeping cells whose midpoint is interior; weight = cell volume."""
    if resolution < 4:
        raise ValueError("quadrature resolution must be >= 4")
    lo, hi = domain.bbox
    h = (hi - lo) / resolution
    axes = [lo[i] + (np.arange(resolution) + 0.5) * h[i] for i in range(domain.dim)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    keep = domain.contains(grid)
    if not np.any(keep):
        raise ValueError(f"no interior cells for {domain.shape} at resolution {resolution}")
    nodes = grid[keep]
    return QuadratureRule(nodes, np.full(len(nodes), float(np.prod(h))), resolution)


def gauss_legendre_square(order: int, domain: Domain | None = None) -> QuadratureRule:
    """Tensor Gauss-Legendre rule; only for the square domain."""
    domain = domain or Domain("square")
    if domain.shape != "square":
        raise ValueError("Gauss-Legendre rule is only provided for the square")
    lo, hi = domain.bbox
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    X, Y = np.meshgrid(lo[0] + x * (hi[0] - lo[0]), lo[1] + x * (hi[1] - lo[1]), indexing="ij")
    W = np.outer(w, w) * np.prod(hi - lo)
    return QuadratureRule(np.stack([X.ravel(), Y.ravel()], 1), W.ravel(), order)


def build_boundary_rule(domain: Domain, resolution: int) -> BoundaryRule:
    """Midpoint rule in arc length (2D) or surface area (3D)."""
    if resolution < 4:
        raise ValueError("boundary rule resolution must be >= 4")
    p = domain.params
    if domain.shape == "square":
        side = p["side"]
        t = (np.arange(resolution) + 0.5) / resolution
        lo = np.asarray(p["origin"], float)
        edges = [
            (np.stack([t, 0 * t], 1), (0.0, -1.0)),
            (np.stack([1 + 0 * t, t], 1), (1.0, 0.0)),
            (np.stack([t, 1 + 0 * t], 1), (0.0, 1.0)),
            (np.stack([0 * t, t], 1), (-1.0, 0.0)),
        ]
        nodes = np.concatenate([lo + side * e for e, _ in edges])
        normals = np.concatenate([np.tile(n, (resolution, 1)) for _, n in edges])
        return BoundaryRule(nodes, np.full(len(nodes), side / resolution), normals)
    if domain.shape == "circle":
        m = 4 * resolution
        theta = 2 * np.pi * (np.arange(m) + 0.5) / m
        n = np.stack([np.cos(theta), np.sin(theta)], 1)
        nodes = np.asarray(p["center"]) + p["radius"] * n
        return BoundaryRule(nodes, np.full(m, 2 * np.pi * p["radius"] / m), n)
    if domain.shape.startswith("bspline"):
        sp: ClosedBSpline = domain._spline
        m = 4 * resolution
        s = sp.length * (np.arange(m) + 0.5) / m
        u = sp.param_at_arclength(s)
        d = sp.derivative(u)
        n = np.stack([d[:, 1], -d[:, 0]], 1)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return BoundaryRule(sp.point(u), np.full(m, sp.length / m), n)
    if domain.shape == "cutcube":
        nodes, weights, normals = [], [], []
        for axis, level, lo, hi, sign in cutcube_patches(p["cut"]):
            others = [a for a in range(3) if a != axis]
            k = max(2, int(round(resolution * max(hi[0] - lo[0], hi[1] - lo[1]))))
            a = lo[0] + (np.arange(k) + 0.5) / k * (hi[0] - lo[0])
            b = lo[1] + (np.arange(k) + 0.5) / k * (hi[1] - lo[1])
            A, B = np.meshgrid(a, b, indexing="ij")
            pts = np.empty((k * k, 3))
            pts[:, axis] = level
            pts[:, others[0]] = A.ravel()
            pts[:, others[1]] = B.ravel()
            nrm = np.zeros((k * k, 3))
            nrm[:, axis] = sign
            nodes.append(pts)
            normals.append(nrm)
            weights.append(np.full(k * k, (hi[0] - lo[0]) * (hi[1] - lo[1]) / (k * k)))
        return BoundaryRule(np.concatenate(nodes), np.concatenate(weights), np.concatenate(normals))
    # ellipsoid: midpoint rule in (cos(polar), azimuth) with the exact area element
    a = np.asarray(p["semi_axes"], float)
    nz, nphi = resolution, 2 * resolution
    z = -1 + (np.arange(nz) + 0.5) * 2 / nz
    phi = (np.arange(nphi) + 0.5) * 2 * np.pi / nphi
    Z, PHI = np.meshgrid(z, phi, indexing="ij")
    rho = np.sqrt(1 - Z**2)
    x, y, zz = rho * np.cos(PHI), rho * np.sin(PHI), Z
    dA = np.sqrt((a[1] * a[2] * x) ** 2 + (a[0] * a[2] * y) ** 2 + (a[0] * a[1] * zz) ** 2)
    w = dA * (2 / nz) * (2 * np.pi / nphi)
    nodes = np.stack([a[0] * x, a[1] * y, a[2] * zz], -1).reshape(-1, 3)
    g = nodes / a**2
    return BoundaryRule(nodes, w.ravel(), g / np.linalg.norm(g, axis=1, keepdims=True))


# -- solution construction ----------------------------------------------------
def _pairs(r0, xi):
    return np.concatenate([np.broadcast_to(r0, xi.shape), xi], axis=1)


def kernel_matrix(net: Mlp, nodes: np.ndarray, eval_points, chunk: int = 200_000) -> np.ndarray:
    """``K[i, j] = net(r_i, xi_j)`` for evaluation points r_i and nodes xi_j."""
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=np.float64))
    if eval_points.shape[1] != nodes.shape[1] or net.input_dim != 2 * nodes.shape[1]:
        raise ValueError("evaluation points, nodes and network input disagree in dimension")
    nq = len(nodes)
    rows_per_chunk = max(1, chunk // nq)
    out = np.empty((len(eval_points), nq))
    for s in range(0, len(eval_points), rows_per_chunk):
        r = eval_points[s : s + rows_per_chunk]
        x = np.concatenate([np.repeat(r, nq, axis=0), np.tile(nodes, (len(r), 1))], axis=1)
        out[s : s + len(r)] = net(x).reshape(len(r), nq)
    return out


class GreenOperator:
    """A trained kernel bound to a quadrature rule and evaluation points.

    The kernel matrix is evaluated once; every further input function costs
    one matrix-vector product, with no training involved.
    """

    def __init__(self, net: Mlp, rule: QuadratureRule, eval_points):
        self.rule = rule
        self.eval_points = np.atleast_2d(np.asarray(eval_points, dtype=np.float64))
        self.matrix = kernel_matrix(net, rule.nodes, self.eval_points) * rule.weights

    def apply(self, density: Callable | np.ndarray) -> np.ndarray:
        vals = density(self.rule.nodes) if callable(density) else np.asarray(density)
        return self.matrix @ vals


def construct_solution(net_g: Mlp, rule: QuadratureRule, laplacian_of_f: Callable, eval_points) -> np.ndarray:
    """``u(r0) = sum_j w_j G^t(r0, xi_j) (Delta f)(xi_j)`` at each evaluation point."""
    return GreenOperator(net_g, rule, eval_points).apply(laplacian_of_f)


def boundary_correction(net_g: Mlp, brule: BoundaryRule, f: Callable, grad_f: Callable, eval_point) -> float:
    """Boundary integral of ``f dG/dn - G df/dn`` over the source variable.

    Normal derivatives of the kernel are taken in its second (source)
    argument, which is the integration variable.
    """
    r0 = np.asarray(eval_point, dtype=np.float64)
    n = len(r0)
    x = _pairs(r0, brule.nodes)
    d = net_g.derivatives(x, coords=range(n, 2 * n))
    dG_dn = np.sum(d.grad.T * brule.normals, axis=1)
    fv = f(brule.nodes)
    df_dn = np.sum(grad_f(brule.nodes) * brule.normals, axis=1)
    return float(np.dot(brule.weights, fv * dG_dn - d.value * df_dn))


def laplacian_fd(f: Callable, domain: Domain) -> Callable:
    """Centered finite-difference Laplacian of ``f``.

    Step is ``1e-4`` times the bounding-box diameter; expect roughly 1e-6
    relative accuracy for smooth ``f`` and worse near rapid variation.
    """
    lo, hi = domain.bbox
    h = 1e-4 * float(np.linalg.norm(hi - lo))

    def lap(x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        f0 = f(x)
        out = np.zeros(len(x))
        for i in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[i] = h
            out += (f(x + e) - 2 * f0 + f(x - e)) / h**2
        return out

    return lap


def write_solution_csv(path, points, columns: dict) -> None:
    points = np.atleast_2d(points)
    names = ["x", "y", "z"][: points.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + list(columns))
        for i, p in enumerate(points):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v[i])) for v in columns.values()])


def evaluation_grid(domain: Domain, grid_n: int) -> np.ndarray:
    """Interior nodes of a uniform ``grid_n``-per-axis grid spanning the bounding box.

    Box faces are excluded (nodes sit at ``k / (grid_n + 1)``), then points
    outside the domain are dropped.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    lo, hi = domain.bbox
    axes = [lo[i] + (hi[i] - lo[i]) * np.arange(1, grid_n + 1) / (grid_n + 1) for i in range(domain.dim)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    return grid[domain.contains(grid)]
