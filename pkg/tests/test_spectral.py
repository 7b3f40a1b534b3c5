import math

import numpy as np
import pytest

from pamlab.errors import ConfigError
from pamlab.lattice import Box, Field, constant_field, laplacian_matrix
from pamlab.spectral import (
    green_function_origin,
    mu_of_r,
    principal_eigen,
    rayleigh_quotient,
)


def test_dirichlet_chain_spectrum():
    """V = 0 on n sites, zero boundary: lambda_1 = -2k(1 - cos(pi/(n+1)))."""
    kappa = 0.7
    for radius in (0, 1, 4):
        n = 2 * radius + 1
        box = Box(1, radius, "dirichlet")
        res = principal_eigen(constant_field(box, 0.0), kappa)
        expect = -2 * kappa * (1 - math.cos(math.pi / (n + 1)))
        assert res.value == pytest.approx(expect, abs=1e-10)


def test_eigenvector_even_symmetry(dexp2):
    """An even potential has an eigenfunction even in every coordinate."""
    box = Box(2, 3, "dirichlet")
    rng = np.random.default_rng(3)
    half = rng.normal(size=box.n_sites)
    sym = np.empty(box.n_sites)
    for i in range(box.n_sites):
        x, y = box.site_of(i)
        sym[i] = half[box.index_of((abs(x), abs(y)))]
    res = principal_eigen(Field(box, sym), 1.0)
    v = res.vector.values
    for i in range(box.n_sites):
        x, y = box.site_of(i)
        assert v[i] == pytest.approx(v[box.index_of((-x, y))], abs=1e-8)
        assert v[i] == pytest.approx(v[box.index_of((x, -y))], abs=1e-8)


def test_eigen_on_restricted_domain():
    # single finite site: kappa*L + V acts as the scalar V(0) - 2dk
    box = Box(1, 3, "dirichlet")
    vals = np.full(box.n_sites, -math.inf)
    vals[box.index_of((0,))] = 1.25
    res = principal_eigen(Field(box, vals), kappa=0.5)
    assert res.value == pytest.approx(1.25 - 2 * 0.5, abs=1e-12)
    assert res.vector.values[box.index_of((0,))] == pytest.approx(1.0)


def test_all_trap_field_gives_minus_inf(box1d):
    res = principal_eigen(constant_field(box1d, -math.inf), 1.0)
    assert res.value == -math.inf and res.method == "empty"


def test_rayleigh_quotient_bounds(dexp2, box1d):
    xi = np.random.default_rng(11).normal(size=box1d.n_sites)
    V = Field(box1d, xi)
    res = principal_eigen(V, 1.0)
    # the eigenfunction attains the top; any other unit field stays below
    assert rayleigh_quotient(V, 1.0, res.vector) == pytest.approx(res.value,
                                                                  abs=1e-9)
    w = np.abs(xi) + 0.1
    other = Field(box1d, w / np.linalg.norm(w))
    assert rayleigh_quotient(V, 1.0, other) <= res.value + 1e-9


def test_power_iteration_matches_dense_oracle(dexp2):
    from scipy.linalg import eigh
    for seed in range(5):
        box = Box(2, 4, "dirichlet")
        xi = np.random.default_rng(seed).normal(size=box.n_sites) * 3
        res = principal_eigen(Field(box, xi), kappa=1.3)
        A = 1.3 * laplacian_matrix(box).toarray() + np.diag(xi)
        top = eigh(A, eigvals_only=True, subset_by_index=(box.n_sites - 1,) * 2)[0]
        assert res.value == pytest.approx(top, abs=1e-10)


def test_green_function_d3_value():
    out = green_function_origin(3)
    assert not out["divergent"]
    assert out["value"] == pytest.approx(0.252731, abs=5e-7)
    assert out["r_d"] == pytest.approx(3.956776, abs=1e-5)
    assert out["refinement_delta"] < 1e-7


def test_green_function_recurrent_dims_diverge():
    for d in (1, 2):
        out = green_function_origin(d)
        assert out["divergent"] and out["value"] == math.inf and out["r_d"] == 0.0


def test_threshold_increases_with_dimension():
    rs = [green_function_origin(d)["r_d"] for d in (3, 4, 5)]
    assert rs[0] < rs[1] < rs[2]


def test_mu_closed_form_d1():
    for r in (0.5, 1.0, 2.0):
        out = mu_of_r(r, 1)
        assert out.mu == pytest.approx(math.sqrt(4 + r * r) - 2, abs=1e-9)
    assert mu_of_r(0.0, 3).mu == 0.0


def test_mu_zero_below_threshold_d3():
    out = mu_of_r(2.0, 3, method="resolvent")
    assert out.mu == 0.0
    box = mu_of_r(2.0, 3, method="box")
    assert abs(box.mu) < 1e-3  # extrapolated box value collapses to 0


def test_mu_methods_agree_above_threshold():
    out = mu_of_r(5.0, 3, method="both")
    assert out.details["resolvent"]["residual"] < 1e-9
    assert abs(out.mu - out.details["box"]["extrapolated"]) < 1e-4
