"""Domains, boundary parameterizations and Latin-hypercube samplers.

Six shapes are supported: ``square``, ``circle``, ``bspline1``, ``bspline2``
(2D) and ``cutcube``, ``ellipsoid`` (3D). Samplers are pure functions of
``(domain, count, seed)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

BOUNDARY_TOL = 1e-10

# Closed uniform cubic B-spline control polygons (counter-clockwise).
BSPLINE1_CONTROL = (
    (1.0, 0.0), (0.8, 0.6), (0.1, 0.9), (-0.6, 0.7),
    (-1.0, 0.1), (-0.7, -0.6), (0.0, -0.9), (0.7, -0.7),
)
# Same loop with two dents pulled inward, giving concave lobes.
BSPLINE2_CONTROL = (
    (1.0, 0.0), (0.9, 0.8), (0.15, 0.35), (-0.3, 1.0),
    (-1.0, 0.3), (-0.8, -0.7), (0.0, -0.3), (0.8, -0.9),
)


class DegenerateDomainError(RuntimeError):
    pass


class NotOnBoundaryError(ValueError):
    pass


# -- Latin hypercube ---------------------------------------------------------
def lhs(count: int, dim: int, seed=None) -> np.ndarray:
    """Latin hypercube sample of ``count`` points in ``[0, 1)^dim``.

    Each axis is cut into ``count`` equal strata and every stratum receives
    exactly one point.
    """
    if count < 1:
        raise ValueError("lhs needs count >= 1")
    if dim < 1:
        raise ValueError("lhs needs dim >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random((count, dim))
    perms = np.argsort(rng.random((dim, count)), axis=1).T
    pts = (perms + u) / count
    # (k + u)/count can round up to the next stratum edge for u close to 1
    return np.minimum(pts, np.nextafter((perms + 1) / count, 0.0))


# -- closed cubic B-splines --------------------------------------------------
_BASIS = np.array(
    [[-1.0, 3.0, -3.0, 1.0], [3.0, -6.0, 3.0, 0.0], [-3.0, 0.0, 3.0, 0.0], [1.0, 4.0, 1.0, 0.0]]
) / 6.0


class ClosedBSpline:
    """Uniform periodic cubic B-spline; parameter ``u`` runs over ``[0, n)``."""

    def __init__(self, control, arc_table_size: int = 8192):
        self.control = np.asarray(control, dtype=np.float64)
        self.n = len(self.control)
        u = np.linspace(0.0, self.n, arc_table_size * self.n + 1)
        # arc length by composite Simpson on each table interval
        speed = np.linalg.norm(self.derivative(u), axis=1)
        mid = np.linalg.norm(self.derivative(0.5 * (u[1:] + u[:-1])), axis=1)
        seg = (u[1] - u[0]) / 6.0 * (speed[:-1] + 4.0 * mid + speed[1:])
        self._table_u = u
        self._table_s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self._table_s[-1])
        self.polyline = self.point(np.linspace(0.0, self.n, 4096, endpoint=False))

    def _segments(self, u):
        u = np.mod(np.asarray(u, dtype=np.float64), self.n)
        i = np.floor(u).astype(int)
        i = np.minimum(i, self.n - 1)
        t = u - i
        idx = (i[..., None] + np.arange(-1, 3)) % self.n
        return t, self.control[idx]

    def point(self, u):
        t, cp = self._segments(u)
        tt = np.stack([t**3, t**2, t, np.ones_like(t)], axis=-1)
        w = tt @ _BASIS
        return np.einsum("...k,...kd->...d", w, cp)

    def derivative(self, u):
        t, cp = self._segments(u)
        tt = np.stack([3 * t**2, 2 * t, np.ones_like(t), np.zeros_like(t)], axis=-1)
        w = tt @ _BASIS
        return np.einsum("...k,...kd->...d", w, cp)

    def second_derivative(self, u):
        t, cp = self._segments(u)
        tt = np.stack([6 * t, 2 * np.ones_like(t), np.zeros_like(t), np.zeros_like(t)], axis=-1)
        w = tt @ _BASIS
        return np.einsum("...k,...kd->...d", w, cp)

    def param_at_arclength(self, s):
        s = np.asarray(s, dtype=np.float64) % self.length
        return np.interp(s, self._table_s, self._table_u)

    def closest_param(self, p):
        p = np.atleast_2d(p)
        uu = np.linspace(0.0, self.n, self.polyline.shape[0], endpoint=False)
        d = np.linalg.norm(p[:, None, :] - self.polyline[None], axis=-1)
        u = uu[np.argmin(d, axis=1)]
        for _ in range(8):
            c = self.point(u)
            d1 = self.derivative(u)
            d2 = self.second_derivative(u)
            r = c - p
            f = np.sum(r * d1, axis=1)
            fp = np.sum(d1 * d1, axis=1) + np.sum(r * d2, axis=1)
            u = u - f / fp
        return np.mod(u, self.n)

    def winding_number(self, p):
        """Winding number of the refined polyline around each point."""
        wind, _ = _kernels.winding_and_distance(np.atleast_2d(p).astype(np.float64), self.polyline)
        return wind


# -- Domain ------------------------------------------------------------------
SHAPES_2D = ("square", "circle", "bspline1", "bspline2")
SHAPES_3D = ("cutcube", "ellipsoid")
SHAPES = SHAPES_2D + SHAPES_3D


@dataclass(frozen=True)
class Domain:
    """A bounded region with inside test, boundary sampler and outward normals.

    ``params`` carries shape parameters: ``side``/``origin`` for the square,
    ``center``/``radius`` for the circle, ``control`` for B-splines,
    ``cut`` for the cut cube and ``semi_axes`` for the ellipsoid.
    """

    shape: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown domain shape {self.shape!r}; choose from {SHAPES}")
        defaults = {
            "square": {"origin": [0.0, 0.0], "side": 1.0},
            "circle": {"center": [0.0, 0.0], "radius": 1.0},
            "bspline1": {"control": [list(p) for p in BSPLINE1_CONTROL]},
            "bspline2": {"control": [list(p) for p in BSPLINE2_CONTROL]},
            "cutcube": {"cut": 0.5},
            "ellipsoid": {"semi_axes": [1.0, 0.75, 0.5]},
        }[self.shape]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown parameters for {self.shape}: {sorted(unknown)}")
        merged = {**defaults, **self.params}
        object.__setattr__(self, "params", merged)
        if self.shape.startswith("bspline"):
            spline = ClosedBSpline(merged["control"])
            object.__setattr__(self, "_spline", spline)
            pts = spline.point(np.linspace(0, spline.n, 20000))
            object.__setattr__(self, "_spline_box", (pts.min(axis=0) - 1e-9, pts.max(axis=0) + 1e-9))

    def __hash__(self):
        return hash(self.identifier)

    # -- descriptors ----------------------------------------------------
    @property
    def dim(self) -> int:
        return 2 if self.shape in SHAPES_2D else 3

    @property
    def identifier(self) -> str:
        return f"{self.shape}:{self.digest[:12]}"

    @property
    def digest(self) -> str:
        blob = json.dumps({"shape": self.shape, "params": self.params}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"shape": self.shape, **{k: v for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        d = dict(d)
        shape = d.pop("shape")
        return cls(shape, d)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        if self.shape == "square":
            lo = np.asarray(p["origin"], float)
            return lo, lo + p["side"]
        if self.shape == "circle":
            c = np.asarray(p["center"], float)
            return c - p["radius"], c + p["radius"]
        if self.shape.startswith("bspline"):
            return self._spline_box
        if self.shape == "cutcube":
            return np.zeros(3), np.ones(3)
        a = np.asarray(p["semi_axes"], float)
        return -a, a

    @property
    def volume(self) -> float:
        p = self.params
        if self.shape == "square":
            return p["side"] ** 2
        if self.shape == "circle":
            return np.pi * p["radius"] ** 2
        if self.shape.startswith("bspline"):
            c = self._spline.polyline
            x, y = c[:, 0], c[:, 1]
            return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if self.shape == "cutcube":
            return 1.0 - (1.0 - p["cut"]) ** 3
        return 4.0 / 3.0 * np.pi * float(np.prod(p["semi_axes"]))

    def _check(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        if pts.shape[-1] != self.dim:
            raise ValueError(f"point dimension {pts.shape[-1]} != domain dimension {self.dim}")
        return pts

    # -- predicates -----------------------------------------------------
    def contains(self, pts) -> np.ndarray | bool:
        """Strict interior test; boundary points are outside."""
        pts = self._check(pts)
        single = pts.ndim == 1
        q = np.atleast_2d(pts)
        p = self.params
        if self.shape == "square":
            lo, hi = self.bbox
            inside = np.all((q > lo) & (q < hi), axis=1)
        elif self.shape == "circle":
            r = np.linalg.norm(q - np.asarray(p["center"]), axis=1)
            inside = r < p["radius"]
        elif self.shape.startswith("bspline"):
            wind, dist = _kernels.winding_and_distance(q, self._spline.polyline)
            inside = wind != 0
            # points within the polyline chord error of the curve are settled exactly
            near = dist < 1e-5
            if np.any(near):
                inside[near] = self._signed_distance_spline(q[near]) < -BOUNDARY_TOL
        elif self.shape == "cutcube":
            in_cube = np.all((q > 0.0) & (q < 1.0), axis=1)
            in_cut = np.all(q >= p["cut"], axis=1)
            inside = in_cube & ~in_cut
        else:
            a = np.asarray(p["semi_axes"])
            inside = np.sum((q / a) ** 2, axis=1) < 1.0
        return bool(inside[0]) if single else inside

    def _signed_distance_spline(self, q):
        sp = self._spline
        u = sp.closest_param(q)
        c = sp.point(u)
        d = sp.derivative(u)
        normal = np.stack([d[:, 1], -d[:, 0]], axis=1)
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        return np.sum((q - c) * normal, axis=1)

    def boundary_distance(self, pts) -> np.ndarray:
        """Absolute distance (or level-set residual for the ellipsoid) to the boundary."""
        q = np.atleast_2d(self._check(pts))
        p = self.params
        if self.shape == "square":
            lo, hi = self.bbox
            inside = np.minimum(q - lo, hi - q)
            outside = np.maximum(np.maximum(lo - q, q - hi), 0.0)
            out_norm = np.linalg.norm(outside, axis=1)
            return np.where(out_norm > 0, out_norm, np.abs(inside.min(axis=1)))
        if self.shape == "circle":
            return np.abs(np.linalg.norm(q - np.asarray(p["center"]), axis=1) - p["radius"])
        if self.shape.startswith("bspline"):
            return np.abs(self._signed_distance_spline(q))
        if self.shape == "cutcube":
            return np.array([_cutcube_distance(x, p["cut"]) for x in q])
        a = np.asarray(p["semi_axes"])
        return np.abs(np.sum((q / a) ** 2, axis=1) - 1.0)

    def boundary_normal(self, pt, tol: float = 1e-8) -> np.ndarray:
        """Unit outward normal at a boundary point."""
        pt = self._check(pt)
        if pt.ndim != 1:
            return np.array([self.boundary_normal(x, tol) for x in pt])
        if self.boundary_distance(pt)[0] > tol:
            raise NotOnBoundaryError(f"{pt} is not on the boundary of {self.shape}")
        p = self.params
        if self.shape == "square":
            lo, hi = self.bbox
            gaps = np.concatenate([pt - lo, hi - pt])
            k = int(np.argmin(gaps))
            n = np.zeros(2)
            n[k % 2] = -1.0 if k < 2 else 1.0
            return n
        if self.shape == "circle":
            v = pt - np.asarray(p["center"])
            return v / np.linalg.norm(v)
        if self.shape.startswith("bspline"):
            u = self._spline.closest_param(pt)
            d = self._spline.derivative(u)[0]
            n = np.array([d[1], -d[0]])
            return n / np.linalg.norm(n)
        if self.shape == "cutcube":
            return _cutcube_normal(pt, p["cut"])
        a = np.asarray(p["semi_axes"])
        g = pt / a**2
        return g / np.linalg.norm(g)

    # -- samplers -------------------------------------------------------
    def sample_interior(self, count: int, seed=None, max_rounds: int = 50) -> np.ndarray:
        """``count`` interior points: LHS over the bounding box with rejection.

        Rejected draws are refilled by fresh LHS rounds sized from the
        observed acceptance ratio.
        """
        if count < 1:
            raise ValueError("sample_interior needs count >= 1")
        rng = np.random.default_rng(seed)
        lo, hi = self.bbox
        accepted = []
        n_have, drawn, kept = 0, 0, 0
        need = count
        for _ in range(max_rounds):
            ratio = kept / drawn if drawn else 1.0
            if drawn >= 1000 and ratio < 1e-3:
                break
            batch = need if drawn == 0 else int(np.ceil(need / max(ratio, 1e-3) * 1.1)) + 8
            pts = lo + (hi - lo) * lhs(batch, self.dim, rng)
            ok = self.contains(pts)
            drawn += batch
            kept += int(ok.sum())
            good = pts[ok][:need]
            accepted.append(good)
            n_have += len(good)
            need = count - n_have
            if need == 0:
                return np.concatenate(accepted)
        raise DegenerateDomainError(
            f"acceptance ratio {kept / max(drawn, 1):.2e} too low sampling {self.shape}"
        )

    def sample_boundary(self, count: int, seed=None) -> np.ndarray:
        """Boundary points uniform in arc length / surface area, LHS-stratified."""
        if count < 1:
            raise ValueError("sample_boundary needs count >= 1")
        rng = np.random.default_rng(seed)
        p = self.params
        if self.shape == "square":
            s = 4.0 * lhs(count, 1, rng)[:, 0]
            return _square_perimeter_point(s, np.asarray(p["origin"], float), p["side"])
        if self.shape == "circle":
            theta = 2 * np.pi * lhs(count, 1, rng)[:, 0]
            c = np.asarray(p["center"], float)
            return c + p["radius"] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        if self.shape.startswith("bspline"):
            sp = self._spline
            s = sp.length * lhs(count, 1, rng)[:, 0]
            return sp.point(sp.param_at_arclength(s))
        if self.shape == "cutcube":
            return _cutcube_boundary_point(lhs(count, 2, rng), p["cut"])
        return _ellipsoid_boundary(count, np.asarray(p["semi_axes"], float), rng)


# -- square helpers ----------------------------------------------------------
def _square_perimeter_point(s, origin, side):
    """Map perimeter coordinate ``s`` in ``[0, 4)`` counter-clockwise."""
    edge = np.minimum(np.floor(s).astype(int), 3)
    t = s - edge
    pts = np.empty((len(s), 2))
    pts[edge == 0] = np.stack([t[edge == 0], np.zeros((edge == 0).sum())], 1)
    pts[edge == 1] = np.stack([np.ones((edge == 1).sum()), t[edge == 1]], 1)
    pts[edge == 2] = np.stack([1 - t[edge == 2], np.ones((edge == 2).sum())], 1)
    pts[edge == 3] = np.stack([np.zeros((edge == 3).sum()), 1 - t[edge == 3]], 1)
    return origin + side * pts


# -- cut cube helpers --------------------------------------------------------
def cutcube_patches(cut: float = 0.5):
    """Rectangular boundary patches as ``(axis, level, lo, hi, normal_sign)``.

    ``lo``/``hi`` bound the two in-plane coordinates (remaining axes in
    increasing order).
    """
    patches = []
    for axis in range(3):
        # face at 0: whole unit square
        patches.append((axis, 0.0, (0.0, 0.0), (1.0, 1.0), -1.0))
        # face at 1: unit square minus the [cut,1]^2 corner (L shape)
        patches.append((axis, 1.0, (0.0, 0.0), (cut, 1.0), 1.0))
        patches.append((axis, 1.0, (cut, 0.0), (1.0, cut), 1.0))
        # inner face of the removed octant
        patches.append((axis, cut, (cut, cut), (1.0, 1.0), 1.0))
    return patches


def _cutcube_boundary_point(u, cut):
    patches = cutcube_patches(cut)
    areas = np.array([(hi[0] - lo[0]) * (hi[1] - lo[1]) for _, _, lo, hi, _ in patches])
    edges = np.concatenate([[0.0], np.cumsum(areas)]) / areas.sum()
    k = np.clip(np.searchsorted(edges, u[:, 0], side="right") - 1, 0, len(patches) - 1)
    t = (u[:, 0] - edges[k]) / (edges[k + 1] - edges[k])
    out = np.empty((len(u), 3))
    for i, (axis, level, lo, hi, _) in enumerate(patches):
        m = k == i
        if not np.any(m):
            continue
        others = [a for a in range(3) if a != axis]
        out[m, axis] = level
        out[m, others[0]] = lo[0] + (hi[0] - lo[0]) * t[m]
        out[m, others[1]] = lo[1] + (hi[1] - lo[1]) * u[m, 1]
    return out


def _cutcube_distance(x, cut):
    best = np.inf
    for axis, level, lo, hi, _ in cutcube_patches(cut):
        others = [a for a in range(3) if a != axis]
        q = np.array([x[others[0]], x[others[1]]])
        c = np.clip(q, lo, hi)
        d = np.sqrt((x[axis] - level) ** 2 + np.sum((q - c) ** 2))
        best = min(best, d)
    return best


def _cutcube_normal(x, cut):
    best, normal = np.inf, None
    for axis, level, lo, hi, sign in cutcube_patches(cut):
        others = [a for a in range(3) if a != axis]
        q = np.array([x[others[0]], x[others[1]]])
        c = np.clip(q, lo, hi)
        d = np.sqrt((x[axis] - level) ** 2 + np.sum((q - c) ** 2))
        if d < best - 1e-15:
            best = d
            normal = np.zeros(3)
            normal[axis] = sign
    return normal


# -- ellipsoid helpers -------------------------------------------------------
def _ellipsoid_boundary(count, a, rng):
    """Area-uniform ellipsoid points: sphere LHS, accepted with the area factor."""
    ab, ac, bc = a[0] * a[1], a[0] * a[2], a[1] * a[2]
    fmax = max(ab, ac, bc)
    out = []
    have = 0
    while have < count:
        n = int(np.ceil((count - have) * 2.2)) + 8
        u = lhs(n, 3, rng)
        z = 2 * u[:, 0] - 1
        phi = 2 * np.pi * u[:, 1]
        rho = np.sqrt(1 - z * z)
        x, y = rho * np.cos(phi), rho * np.sin(phi)
        factor = np.sqrt((bc * x) ** 2 + (ac * y) ** 2 + (ab * z) ** 2) / fmax
        ok = u[:, 2] < factor
        pts = np.stack([a[0] * x, a[1] * y, a[2] * z], axis=1)[ok][: count - have]
        out.append(pts)
        have += len(pts)
    return np.concatenate(out)
