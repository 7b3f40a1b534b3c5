import math

import numpy as np
import pytest

from pamlab.errors import ConfigError
from pamlab.intermittency import (
    GapTrend,
    LyapunovTable,
    annealed_check,
    correlation_profile,
    extract_islands,
    lyapunov_table,
    p_intermittency_test,
    quenched_check,
)
from pamlab.lattice import Box, Field
from pamlab.potentials import PotentialSpec
from pamlab.variational import optimal_shapes


def _table(p_list, times, lam, width=1e-6):
    lam = np.asarray(lam, dtype=float)
    half = np.full_like(lam, width)
    return LyapunovTable(
        p_list=tuple(p_list), times=tuple(times), lambda_hat=lam,
        ci_low=lam - half, ci_high=lam + half,
        normalized=lam / np.asarray(p_list, dtype=float)[:, None],
        warnings=(),
    )


def test_gap_trend_on_synthetic_tables():
    times = (1.0, 2.0, 3.0, 4.0)
    t = np.asarray(times)
    # Lambda_p(t) = p^2 t: normalized gap is exactly t, slope 1
    quad = _table((1.0, 2.0), times, np.array([t, 4.0 * t]))
    trend = p_intermittency_test(quad, 2.0)
    assert trend.verdict == "intermittent trend"
    assert trend.slope == pytest.approx(1.0, abs=1e-9)
    # Lambda_p(t) = p c t: gap identically zero
    lin = _table((1.0, 2.0), times, np.array([0.7 * t, 1.4 * t]))
    trend = p_intermittency_test(lin, 2.0)
    assert trend.verdict == "no intermittent trend"
    assert trend.slope == pytest.approx(0.0, abs=1e-9)


def test_gap_trend_input_validation():
    times = (1.0, 2.0, 3.0, 4.0)
    t = np.asarray(times)
    table = _table((1.0, 2.0), times, np.array([t, 4 * t]))
    with pytest.raises(ConfigError):
        p_intermittency_test(table, 3.0)
    short = _table((1.0, 2.0), (1.0, 2.0), np.array([[1, 2], [4, 8.0]]))
    with pytest.raises(ConfigError):
        p_intermittency_test(short, 2.0)


def test_annealed_check_constant_potential_is_exact():
    """Point mass at c: Lambda_1 = H(t) = ct and chi = 0, so the predicted
    rate matches to solver accuracy and both sandwich sides hold."""
    spec = PotentialSpec.constant(0.8)
    rep = annealed_check(spec, kappa=1.0, p=1.0, t_grid=(0.5, 1.0, 2.0),
                         n=3, seed=0, box=Box(1, 10, "periodic"))
    assert np.allclose(rep.diff_rate, 0.0, atol=1e-8)
    assert all(rep.sandwich_lower_ok) and all(rep.sandwich_upper_ok)
    assert rep.chi == 0.0


def test_quenched_gap_bounds(dexp2):
    rep = quenched_check(dexp2, kappa=1.0, t_grid=(2.0, 4.0), seed=8)
    assert len(rep.times) == 2
    assert all(0.0 <= g <= 2.0 for g in rep.gap)  # 2dk = 2
    # the flat start is spread out at small t; localization drains the rim
    assert rep.boundary_fraction[-1] < rep.boundary_fraction[0]


def test_single_spike_is_one_island():
    box = Box(1, 12, "dirichlet")
    shapes = optimal_shapes(1.0, 8.0, 12, 1)
    xi = np.zeros(box.n_sites)
    xi[box.index_of((3,))] = 10.0
    u = np.full(box.n_sites, 1e-12)
    u[box.index_of((3,))] = 1.0
    rep = extract_islands(Field(box, xi), Field(box, u), shapes.V_star,
                          shapes.w_star, eps=0.1, R=3)
    assert rep.n_islands == 1
    assert rep.centers[0] == (3,)
    assert rep.captured_fraction > 0.99
    assert rep.target_met


def test_two_far_spikes_are_two_islands():
    box = Box(1, 20, "dirichlet")
    shapes = optimal_shapes(1.0, 8.0, 12, 1)
    xi = np.zeros(box.n_sites)
    u = np.full(box.n_sites, 1e-12)
    for x in (-10, 10):
        xi[box.index_of((x,))] = 10.0
        u[box.index_of((x,))] = 1.0
    rep = extract_islands(Field(box, xi), Field(box, u), shapes.V_star,
                          shapes.w_star, eps=0.1, R=3)
    assert rep.n_islands == 2
    assert sorted(rep.centers) == [(-10,), (10,)]
    assert rep.min_pairwise_distance == 20


def test_correlation_at_origin_is_one(dexp2):
    rep = correlation_profile(dexp2, kappa=1.0, t=0.5, x_list=(0, 1),
                              n=8, seed=1, box=Box(1, 8, "periodic"))
    assert rep.c_hat[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.ci_low[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.ci_high[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.limit_sqrt_measure[0] == 1.0 and rep.limit_measure[0] == 1.0
