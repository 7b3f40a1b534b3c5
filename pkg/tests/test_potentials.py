import math

import numpy as np
import pytest

from pamlab.errors import ConfigError
from pamlab.lattice import Box, Field, constant_field
from pamlab.potentials import (
    PotentialSpec,
    assumption_H_limit,
    field_rng,
    max_height,
    rescale_shift,
    sample_field,
    tail_functions,
)


def test_spec_validation():
    with pytest.raises(ConfigError):
        PotentialSpec.double_exponential(0.0)
    with pytest.raises(ConfigError):
        PotentialSpec.bounded_tail(1.0, 1.5)
    with pytest.raises(ConfigError):
        PotentialSpec.bernoulli_trap(1.5)
    with pytest.raises(ConfigError):
        PotentialSpec.from_json({"family": "weibull", "params": {}})


def test_sampling_is_seed_deterministic(dexp2, box1d):
    a = sample_field(dexp2, box1d, seed=9, index=3)
    b = sample_field(dexp2, box1d, seed=9, index=3)
    c = sample_field(dexp2, box1d, seed=9, index=4)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_substreams_do_not_depend_on_draw_order():
    """Stream (seed, i) is fixed by its index, not by which draws preceded it."""
    r1 = field_rng(5, 2).standard_normal(4)
    field_rng(5, 0).standard_normal(100)  # unrelated consumption
    r2 = field_rng(5, 2).standard_normal(4)
    assert np.array_equal(r1, r2)


def test_double_exponential_tail_matches_closed_form(dexp2):
    """Empirical P(xi > r) vs exp(-e^{r/rho}) within 3 binomial SE."""
    box = Box(1, 50_000 - 1, "dirichlet")  # ~1e5 iid draws in one field
    xi = sample_field(dexp2, box, seed=0).values
    n = xi.size
    F = tail_functions(dexp2).F
    for r in (-1.0, 0.0, 2.0, 5.0):
        p = 1.0 - F(r)
        assert p == pytest.approx(math.exp(-math.exp(r / 2.0)))
        se = math.sqrt(p * (1 - p) / n)
        assert abs(np.mean(xi > r) - p) <= 3 * se + 1e-12


def test_bernoulli_trap_support():
    spec = PotentialSpec.bernoulli_trap(0.25)
    box = Box(1, 5000, "dirichlet")
    xi = sample_field(spec, box, seed=1).values
    assert set(np.unique(xi)) <= {0.0, -math.inf}
    frac = np.mean(xi == 0.0)
    assert abs(frac - 0.75) < 3 * math.sqrt(0.25 * 0.75 / xi.size)


def test_cumulant_scale_limit_dexp():
    """(H(ct) - cH(t))/t extrapolates to rho * c log c for the dexp family."""
    spec = PotentialSpec.double_exponential(1.0)
    out = assumption_H_limit(spec, 0.5, np.geomspace(10.0, 1e6, 25))
    target = 0.5 * math.log(0.5)
    assert out["converged"]
    assert abs(out["extrapolated"] - target) <= 0.05 * abs(target)


def test_constant_spec_is_degenerate():
    spec = PotentialSpec.constant(1.5)
    box = Box(2, 2, "dirichlet")
    assert np.all(sample_field(spec, box, seed=3).values == 1.5)
    H = tail_functions(spec).H
    assert H(2.0) == pytest.approx(3.0)  # log E e^{tc} = tc


def test_max_height_reports_ties(box1d):
    vals = np.zeros(box1d.n_sites)
    vals[box1d.index_of((-2,))] = 3.0
    vals[box1d.index_of((5,))] = 3.0
    h, argmax = max_height(Field(box1d, vals))
    assert h == 3.0
    assert sorted(argmax) == [(-2,), (5,)]
    with pytest.raises(ValueError):
        max_height(constant_field(box1d, -math.inf))


def test_rescale_shift_identity_case(box1d):
    f = constant_field(box1d, 4.0)
    s = rescale_shift(f, shift=4.0, alpha=1.0, window=3.0)
    assert np.all(s.values == 0.0)
    assert s.grid_radius == 3


def test_rescale_shift_linear_ramp():
    """alpha = 2 on a d=1 ramp matches the hand-computed values."""
    b = Box(1, 6, "dirichlet")
    ramp = Field(b, np.array([float(x) for x, in b.offsets()]))
    s = rescale_shift(ramp, shift=0.0, alpha=2.0, window=1.0)
    # sample points j/2 for |j| <= 2 read site floor(j) = j after scaling
    expect = 4.0 * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    assert np.allclose(np.sort(s.values), np.sort(expect))
    assert np.allclose(np.sort(s.coords.ravel()), [-1.0, -0.5, 0.0, 0.5, 1.0])
