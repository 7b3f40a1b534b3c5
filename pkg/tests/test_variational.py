import math

import numpy as np
import pytest

from pamlab.errors import ConfigError
from pamlab.lattice import Box, Field
from pamlab.variational import (
    MeasureOnBox,
    chi_d,
    chi_tilde_d,
    donsker_varadhan,
    entropy,
    optimal_shapes,
    rate_I,
    rate_IR_bounded,
)


def test_entropy_uniform_measure():
    box = Box(1, 2, "dirichlet")
    mu = MeasureOnBox(box, np.full(box.n_sites, 1.0 / box.n_sites))
    assert entropy(mu) == pytest.approx(math.log(box.n_sites))


def test_dirichlet_form_point_mass():
    # sqrt of a point mass pays one unit per incident edge, 2d at the origin
    box = Box(2, 2, "dirichlet")
    w = np.zeros(box.n_sites)
    w[box.index_of((0, 0))] = 1.0
    assert donsker_varadhan(MeasureOnBox(box, w)) == pytest.approx(4.0)


def test_measure_validation():
    box = Box(1, 1, "dirichlet")
    with pytest.raises(ConfigError):
        MeasureOnBox(box, np.array([0.5, 0.6, 0.2]))
    with pytest.raises(ConfigError):
        MeasureOnBox(box, np.array([1.2, -0.2, 0.0]))


def test_rate_I_trivial_cases():
    box = Box(1, 3, "dirichlet")
    single = np.full(box.n_sites, -math.inf)
    single[box.index_of((0,))] = 0.0
    assert rate_I(Field(box, single), rho=math.inf) == pytest.approx(1.0)

    flat = np.full(box.n_sites, -math.inf)
    for x in (-1, 0, 1):
        flat[box.index_of((x,))] = 0.0
    assert rate_I(Field(box, flat), rho=2.0) == pytest.approx(3.0)


def test_chi_duality_small_instance():
    val_m = chi_d(1.0, 4.0, 8, 1).value
    val_p = chi_tilde_d(1.0, 4.0, 8, 1).value
    assert val_m == pytest.approx(val_p, rel=0.02)


def test_chi_d2_tensorizes():
    one = chi_d(1.0, 4.0, 5, 1).value
    two = chi_d(1.0, 4.0, 5, 2).value
    assert two == pytest.approx(2 * one, abs=1e-4)


def test_chitilde_flat_limit_single_site():
    """rho = inf forces a single-site support and chi-tilde = 2dk exactly."""
    for d, kappa in ((1, 1.0), (2, 0.7)):
        sol = chi_tilde_d(kappa, math.inf, 3, d)
        assert sol.value == 2 * d * kappa
        assert sol.converged


def test_optimal_shapes_consistency():
    shapes = optimal_shapes(1.0, 8.0, 10, 1)
    V, w = shapes.V_star.values, shapes.w_star.values
    box = shapes.V_star.box
    assert w[box.index_of((0,))] == np.max(w) == 1.0  # centered, w*(0) = 1
    assert V[box.index_of((0,))] == np.max(V)
    # radii table shrinks with eps and never exceeds the box
    rs = [r for _, r in sorted(shapes.r_table.items(), reverse=True)]
    assert all(a <= b for a, b in zip(rs, rs[1:]))
    assert all(0 <= r <= box.radius for r in rs)


def test_rate_IR_gamma_zero_counts_support():
    # phi = -1 on [-1.5, 1.5] inside [-4, 4]: support measure 3
    def phi(pts):
        x = pts[:, 0]
        return np.where(np.abs(x) <= 1.5, -1.0, 0.0)

    out = rate_IR_bounded(phi, 0.0, 4.0, d=1)
    assert not out.divergent
    assert out.value == pytest.approx(3.0, abs=0.1)


def test_rate_IR_constant_profile():
    # phi == -1: integrand is 1 for every gamma, value = (2R)^d
    out = rate_IR_bounded(lambda p: -np.ones(len(p)), 0.5, 2.0, d=2)
    assert out.value == pytest.approx(16.0, rel=1e-9)


def test_rate_IR_refines_toward_quadrature():
    from scipy.integrate import quad

    def phi(pts):
        return -(1.0 + pts[:, 0] ** 2)

    gamma = 0.5
    out = rate_IR_bounded(phi, gamma, 3.0, d=1, levels=4)
    target = quad(lambda x: (1 + x * x) ** (-1.0), -3, 3)[0]
    assert out.value == pytest.approx(target, rel=1e-3)
