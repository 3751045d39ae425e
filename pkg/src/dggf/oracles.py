"""Independent ground truths: analytic Green's functions, manufactured
solutions and a finite-difference reference solver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import j0, j1, jn_zeros

from .geometry import Domain
from .operators import PdeOperator, SingularityError


def disk_green_analytic(r, xi):
    """Dirichlet Green's function of the Laplacian on the unit disk (images).

    ``(1/2pi) [ln|r - xi| - ln(|xi| |r - xi/|xi|^2|)]``; at ``xi = 0`` the
    image goes to infinity and the value is ``(1/2pi) ln|r|``.
    """
    single = np.ndim(r) == 1 and np.ndim(xi) == 1
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    r, xi = np.broadcast_arrays(r, xi)
    d = np.linalg.norm(r - xi, axis=1)
    if np.any(d < 1e-12):
        raise SingularityError("disk Green's function evaluated at r == xi")
    rho = np.linalg.norm(xi, axis=1)
    out = np.empty(len(r))
    centre = rho < 1e-14
    out[centre] = np.log(np.linalg.norm(r[centre], axis=1)) / (2 * np.pi)
    m = ~centre
    # |xi| |r - xi*| written without the division: sqrt(|r|^2|xi|^2 - 2 r.xi + 1)
    rr = np.sum(r[m] ** 2, axis=1)
    image = np.sqrt(np.maximum(rr * rho[m] ** 2 - 2 * np.sum(r[m] * xi[m], axis=1) + 1.0, 0.0))
    out[m] = (np.log(d[m]) - np.log(image)) / (2 * np.pi)
    return float(out[0]) if single else out


def square_green_series(r, xi, power: int = 1, modes: int = 60):
    """Dirichlet eigen-expansion on the unit square.

    ``power=1`` gives the Laplacian Green's function ``t`` (``Delta t = delta``),
    ``power=2`` the generalized kernel ``G^t`` with ``Delta G^t = t``:
    ``sum_mn (-1)^power phi_mn(r) phi_mn(xi) / lambda_mn^power``.
    Truncation error decays like ``modes^-2`` for ``t`` (slower near
    ``r = xi``) and ``modes^-4`` for ``G^t``.
    """
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    r, xi = np.broadcast_arrays(r, xi)
    m = np.arange(1, modes + 1)
    a = np.sin(np.pi * np.outer(r[:, 0], m)) * np.sin(np.pi * np.outer(xi[:, 0], m))
    b = np.sin(np.pi * np.outer(r[:, 1], m)) * np.sin(np.pi * np.outer(xi[:, 1], m))
    lam = np.pi**2 * (m[:, None] ** 2 + m[None, :] ** 2)
    return 4 * np.einsum("pi,pj,ij->p", a, b, (-1.0) ** power / lam**power)


def square_green(r, xi, modes: int = 200):
    """Dirichlet Green's function ``t`` of the Laplacian on the unit square.

    Single sine series in x with closed-form y dependence,
    ``-sum_m 2 sin(m pi x) sin(m pi x') sinh(m pi y<) sinh(m pi (1 - y>)) / (m pi sinh(m pi))``.
    Terms decay like ``exp(-m pi |y - y'|)``, so ``modes`` mainly matters for
    pairs at nearly equal height.
    """
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    r, xi = np.broadcast_arrays(r, xi)
    if np.any(np.linalg.norm(r - xi, axis=1) < 1e-12):
        raise SingularityError("square Green's function evaluated at r == xi")
    m = np.arange(1, modes + 1) * np.pi
    lo = np.minimum(r[:, 1], xi[:, 1])[:, None] * m
    hi = (1.0 - np.maximum(r[:, 1], xi[:, 1]))[:, None] * m
    # sinh(a) sinh(b) / sinh(c) with a + b <= c, written with decaying exponentials
    ratio = np.exp(lo + hi - m) * (-np.expm1(-2 * lo)) * (-np.expm1(-2 * hi)) / (2 * -np.expm1(-2 * m))
    terms = 2 * np.sin(np.outer(r[:, 0], m)) * np.sin(np.outer(xi[:, 0], m)) * ratio / m
    return -terms.sum(axis=1)


def relative_l2(values, reference) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    reference = np.asarray(reference, dtype=np.float64).ravel()
    if values.shape != reference.shape:
        raise ValueError("values and reference differ in length")
    norm = np.linalg.norm(reference)
    if norm == 0:
        raise ValueError("reference is identically zero")
    return float(np.linalg.norm(values - reference) / norm)


@dataclass
class ManufacturedCase:
    """An analytic ``u`` with ``f = L u`` and ``Delta f`` supplied in closed form."""

    name: str
    u: Callable
    f: Callable
    laplacian_f: Callable
    grad_f: Callable
    domain: Domain
    operator: PdeOperator
    note: str = ""


def _sinsin(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


def _sinsin_grad(x):
    sx, sy = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
    cx, cy = np.cos(np.pi * x[:, 0]), np.cos(np.pi * x[:, 1])
    return np.pi * np.stack([cx * sy, sx * cy], axis=1)


J01 = float(jn_zeros(0, 1)[0])


def _bessel(x):
    return j0(J01 * np.linalg.norm(x, axis=1))


def _bessel_grad(x):
    rho = np.linalg.norm(x, axis=1)
    safe = np.where(rho > 0, rho, 1.0)
    dr = -J01 * j1(J01 * rho)
    return (dr / safe)[:, None] * x


def manufactured_catalog() -> list[ManufacturedCase]:
    sq, disk = Domain("square"), Domain("circle")
    pi2 = np.pi**2
    k = 1.0
    return [
        ManufacturedCase(
            "poisson_square_sinsin",
            u=_sinsin,
            f=lambda x: -2 * pi2 * _sinsin(x),
            laplacian_f=lambda x: 4 * pi2**2 * _sinsin(x),
            grad_f=lambda x: -2 * pi2 * _sinsin_grad(x),
            domain=sq,
            operator=PdeOperator("poisson", 2),
        ),
        ManufacturedCase(
            "poisson_disk_poly",
            u=lambda x: 1 - np.sum(x**2, axis=1),
            f=lambda x: np.full(len(x), -4.0),
            laplacian_f=lambda x: np.zeros(len(x)),
            grad_f=lambda x: np.zeros_like(x),
            domain=disk,
            operator=PdeOperator("poisson", 2),
            note="f does not vanish on the boundary; the volume term alone is zero and "
            "the whole solution comes from the boundary correction",
        ),
        ManufacturedCase(
            "poisson_disk_bessel",
            u=_bessel,
            f=lambda x: -(J01**2) * _bessel(x),
            laplacian_f=lambda x: J01**4 * _bessel(x),
            grad_f=lambda x: -(J01**2) * _bessel_grad(x),
            domain=disk,
            operator=PdeOperator("poisson", 2),
        ),
        ManufacturedCase(
            "helmholtz_disk_bessel",
            u=_bessel,
            f=lambda x: (k * k - J01**2) * _bessel(x),
            laplacian_f=lambda x: -(J01**2) * (k * k - J01**2) * _bessel(x),
            grad_f=lambda x: (k * k - J01**2) * _bessel_grad(x),
            domain=disk,
            operator=PdeOperator("helmholtz", 2, k),
        ),
        ManufacturedCase(
            "helmholtz_square_sinsin",
            u=_sinsin,
            f=lambda x: (k * k - 2 * pi2) * _sinsin(x),
            laplacian_f=lambda x: -2 * pi2 * (k * k - 2 * pi2) * _sinsin(x),
            grad_f=lambda x: (k * k - 2 * pi2) * _sinsin_grad(x),
            domain=sq,
            operator=PdeOperator("helmholtz", 2, k),
        ),
    ]


def get_case(name: str) -> ManufacturedCase:
    for case in manufactured_catalog():
        if case.name == name:
            return case
    names = [c.name for c in manufactured_catalog()]
    raise KeyError(f"unknown case {name!r}; choose from {names}")


def scaled_case(case: ManufacturedCase, scale: float, name: str | None = None) -> ManufacturedCase:
    """The same case with ``u`` (and therefore ``f``) multiplied by ``scale``."""
    return ManufacturedCase(
        name or f"{case.name}*{scale:g}",
        u=lambda x: scale * case.u(x),
        f=lambda x: scale * case.f(x),
        laplacian_f=lambda x: scale * case.laplacian_f(x),
        grad_f=lambda x: scale * case.grad_f(x),
        domain=case.domain,
        operator=case.operator,
        note=case.note,
    )


def polynomial_inputs(count: int, seed: int = 0):
    """Random quadratic inputs ``f = a1 x^2 + a2 xy + a3 y^2 + a4 x + a5 y + a6``.

    Coefficients are drawn from Normal(0, 2). Returned as ``(coefficients,
    f, laplacian_f)`` triples; ``Delta f = 2 a1 + 2 a3`` is constant and ``f``
    generally does not vanish on the boundary.
    """
    rng = np.random.default_rng(seed)
    out = []
    for a in rng.normal(0.0, 2.0, size=(count, 6)):
        def f(x, a=a):
            return a[0] * x[:, 0] ** 2 + a[1] * x[:, 0] * x[:, 1] + a[2] * x[:, 1] ** 2 + a[3] * x[:, 0] + a[4] * x[:, 1] + a[5]

        def lap(x, a=a):
            return np.full(len(x), 2 * a[0] + 2 * a[2])

        out.append((a, f, lap))
    return out


# -- finite differences --------------------------------------------------------
@dataclass
class GridSolution:
    points: np.ndarray  # interior nodes, shape (M, dim)
    values: np.ndarray
    grid_n: int


def laplacian_matrix(grid_n: int, dim: int = 2) -> sp.csr_matrix:
    """Second-order FD Laplacian on the interior nodes of the unit box, h = 1/grid_n."""
    m = grid_n - 1
    h = 1.0 / grid_n
    d1 = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2
    eye = sp.identity(m)
    if dim == 2:
        return (sp.kron(d1, eye) + sp.kron(eye, d1)).tocsr()
    if dim == 3:
        return (sp.kron(sp.kron(d1, eye), eye) + sp.kron(sp.kron(eye, d1), eye) + sp.kron(sp.kron(eye, eye), d1)).tocsr()
    raise ValueError("FD reference supports dim 2 or 3")


def interior_nodes(grid_n: int, dim: int = 2) -> np.ndarray:
    c = np.arange(1, grid_n) / grid_n
    return np.stack(np.meshgrid(*([c] * dim), indexing="ij"), axis=-1).reshape(-1, dim)


def fdm_reference(operator: PdeOperator, f: Callable, grid_n: int, domain: Domain | None = None) -> GridSolution:
    """5-point (2D) / 7-point (3D) solve of ``L u = f`` with zero Dirichlet data on the unit box."""
    if domain is not None and domain.shape != "square":
        raise ValueError("the FD reference is only defined on the square")
    if grid_n < 4:
        raise ValueError("grid_n must be >= 4")
    if operator.has_time:
        raise ValueError("FD reference covers Poisson and Helmholtz only")
    A = laplacian_matrix(grid_n, operator.dim)
    if operator.kind == "helmholtz":
        A = A + operator.k**2 * sp.identity(A.shape[0])
    pts = interior_nodes(grid_n, operator.dim)
    rhs = f(pts)
    return GridSolution(pts, spla.spsolve(A.tocsc(), rhs), grid_n)
