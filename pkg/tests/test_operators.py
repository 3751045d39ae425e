import numpy as np
import pytest

from dggf.geometry import Domain
from dggf.mlp import DerivativeBundle
from dggf.operators import (
    PdeOperator,
    ProblemInstance,
    SingularityError,
    residual,
    t_singular,
    t_singular_boundary_trace,
)


def bundle(value, grad, hess):
    return DerivativeBundle(value, np.asarray(grad, float), np.asarray(hess, float))


class TestResidual:
    def test_poisson_paraboloid(self):
        # u = x^2 + y^2 at (0.3, 0.4)
        d = bundle(0.25, [0.6, 0.8], [2.0, 2.0])
        assert residual(PdeOperator("poisson", 2), d) == 4.0

    def test_helmholtz(self):
        assert residual(PdeOperator("helmholtz", 2, 2.0), bundle(1.0, [0, 0], [0, 0])) == 4.0

    def test_heat(self):
        # u = x^2 + t over coordinates (x, t)
        d = bundle(1.0, [1.0, 1.0], [2.0, 0.0])
        assert residual(PdeOperator("heat", 2), d) == 1.0

    def test_klein_gordon(self):
        d = bundle(0.5, [0, 0, 0], [1.0, 2.0, 3.0])
        assert residual(PdeOperator("klein_gordon", 3, 2.0), d) == pytest.approx(1 + 2 - 3 - 4 * 0.5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            residual(PdeOperator("poisson", 3), bundle(0.0, [0, 0], [0, 0]))

    @pytest.mark.parametrize("kind", ["poisson", "heat"])
    def test_linear_in_bundle(self, kind, rng):
        op = PdeOperator(kind, 2)
        d1 = bundle(rng.standard_normal(), rng.standard_normal(2), rng.standard_normal(2))
        d2 = bundle(rng.standard_normal(), rng.standard_normal(2), rng.standard_normal(2))
        a, b = 1.7, -0.3
        mix = bundle(a * d1.value + b * d2.value, a * d1.grad + b * d2.grad, a * d1.hess_diag + b * d2.hess_diag)
        assert residual(op, mix) == pytest.approx(a * residual(op, d1) + b * residual(op, d2))

    def test_batched(self):
        d = bundle(np.ones(4), np.zeros((2, 4)), np.ones((2, 4)))
        np.testing.assert_array_equal(residual(PdeOperator("helmholtz", 2, 1.0), d), np.full(4, 3.0))

    def test_operator_validation(self):
        with pytest.raises(ValueError):
            PdeOperator("wave", 2)
        with pytest.raises(ValueError):
            PdeOperator("helmholtz", 2, np.inf)
        assert PdeOperator("Klein-Gordon", 2).kind == "klein_gordon"


class TestSingular:
    def test_unit_distance(self):
        assert t_singular([1.0, 0.0], [0.0, 0.0], 2) == 0.0
        assert t_singular([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], 3) == pytest.approx(-0.0795774715, abs=1e-10)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_coincident(self, dim):
        with pytest.raises(SingularityError):
            t_singular(np.zeros(dim), np.zeros(dim), dim)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_harmonic_away_from_source(self, dim, rng):
        """Closed-form Laplacian of each fundamental solution, evaluated at 1000 pairs."""
        r, xi = rng.uniform(-1, 1, (1000, dim)), rng.uniform(-1, 1, (1000, dim))
        keep = np.linalg.norm(r - xi, axis=1) >= 0.05
        r, xi = r[keep], xi[keep]
        # Laplacian of phi(rho) is phi'' + (dim - 1) phi' / rho
        rho = np.linalg.norm(r - xi, axis=1)
        if dim == 2:
            d1, d2 = 1 / (2 * np.pi * rho), -1 / (2 * np.pi * rho**2)
        else:
            d1, d2 = 1 / (4 * np.pi * rho**2), -2 / (4 * np.pi * rho**3)
        lap = d2 + (dim - 1) * d1 / rho
        assert np.max(np.abs(lap)) <= 1e-8 * np.max(np.abs(d2))
        # and the radial derivatives match the implementation
        h = 1e-6
        e = (r - xi) / rho[:, None]
        fd = (t_singular(r + h * e, xi, dim) - t_singular(r - h * e, xi, dim)) / (2 * h)
        np.testing.assert_allclose(fd, d1, rtol=1e-6)

    def test_mean_value_property(self):
        xi = np.array([0.2, -0.1])
        rho = 0.3
        theta = 2 * np.pi * (np.arange(256) + 0.5) / 256
        circle = xi + rho * np.stack([np.cos(theta), np.sin(theta)], 1)
        assert np.mean(t_singular(circle, xi, 2)) == pytest.approx(np.log(rho) / (2 * np.pi), abs=1e-6)

    def test_boundary_trace(self):
        sq = Domain("square")
        assert t_singular_boundary_trace(sq, [0.0, 0.5], [0.5, 0.5]) == pytest.approx(0.110318, abs=1e-6)
        assert t_singular_boundary_trace(Domain("circle"), [1.0, 0.0], [0.0, 0.0]) == 0.0

    def test_boundary_trace_grows_near_boundary(self):
        sq = Domain("square")
        vals = [t_singular_boundary_trace(sq, [0.0, 0.5], [eps, 0.5]) for eps in (0.1, 0.01, 0.001)]
        assert vals[0] < vals[1] < vals[2]

    def test_boundary_trace_preconditions(self):
        with pytest.raises(ValueError):
            t_singular_boundary_trace(Domain("square"), [0.3, 0.5], [0.5, 0.5])


def test_problem_instance_dimension_check():
    with pytest.raises(ValueError):
        ProblemInstance(PdeOperator("poisson", 3), Domain("square"), lambda x: x[:, 0])
