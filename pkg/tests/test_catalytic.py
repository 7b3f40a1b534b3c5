import math

import numpy as np
import pytest

from pamlab.catalytic import (
    CatalystState,
    catalytic_moments,
    evolve_catalytic,
    fk_moment,
    lambda_limits,
    lambda_star_probe,
    simulate_catalysts,
    suggested_torus,
)
from pamlab.errors import ConfigError
from pamlab.lattice import Box


def _torus(radius=4, d=1):
    return Box(d, radius, "periodic")


def test_state_needs_a_torus():
    with pytest.raises(ConfigError):
        CatalystState(Box(1, 4, "dirichlet"), np.zeros((0, 1)), 1.0, 1.0, 1.0)


def test_equilibrium_counts_are_poisson_like():
    box = _torus(40)
    state = CatalystState.equilibrium(box, nu=2.0, rho=1.0, gamma=1.0, seed=0)
    counts = state.counts()
    assert counts.sum() == len(state.positions)
    assert np.mean(counts) == pytest.approx(2.0, abs=3 * math.sqrt(2.0 / box.n_sites))


def test_nu_zero_gives_empty_potential():
    box = _torus()
    state = CatalystState.equilibrium(box, nu=0.0, rho=1.0, gamma=1.0, seed=1)
    traj = simulate_catalysts(state, (1.0,), seed=1)
    assert traj.n_events == 0
    assert np.all(traj.fields[-1].values == 0.0)


def test_walker_count_is_conserved():
    box = _torus(6)
    state = CatalystState.equilibrium(box, nu=1.0, rho=2.0, gamma=0.5, seed=3)
    traj = simulate_catalysts(state, (0.5, 1.0, 2.0), seed=3)
    n0 = traj.initial_counts.sum()
    for t in (0.0, 0.7, 1.3, 2.0):
        assert traj.counts_at(t).sum() == n0


def test_kappa_zero_is_the_per_site_exponential():
    """With no diffusion each site integrates its own occupation history."""
    box = _torus(5)
    gamma, nu = 0.8, 1.0
    state = CatalystState.equilibrium(box, nu=nu, rho=1.5, gamma=gamma, seed=7)
    traj = simulate_catalysts(state, (1.5,), seed=7)
    t_end = 1.5
    snap = evolve_catalytic(traj, kappa=0.0, t_end=t_end)[-1]

    cuts = np.concatenate(([0.0], traj.event_times[traj.event_times < t_end],
                           [t_end]))
    integral = np.zeros(box.n_sites)
    for a, b in zip(cuts[:-1], cuts[1:]):
        integral += traj.counts_at(0.5 * (a + b)) * (b - a)
    expect = np.exp(gamma * integral - nu * gamma * t_end)
    assert np.allclose(snap.values(), expect, rtol=1e-8)


def test_gamma_zero_moments_are_exactly_one():
    box = _torus()
    out = fk_moment(box, nu=1.0, gamma=0.0, rho=1.0, kappa=1.0, p=1,
                    t_grid=(0.5, 1.0), n_paths=50, seed=0)
    assert np.all(out.estimate == 1.0) and np.all(out.se == 0.0)


def test_fk_estimates_grow_in_t():
    box = _torus()
    out = fk_moment(box, nu=1.0, gamma=1.0, rho=1.0, kappa=1.0, p=1,
                    t_grid=(0.5, 1.0, 1.5), n_paths=200, seed=4)
    assert np.all(np.diff(out.estimate) >= 0)
    assert np.all(out.estimate >= 1.0 - 3 * out.se)  # Jensen on centered exp


def test_direct_and_fk_routes_agree():
    box = suggested_torus(1, 1.0, 1.0, 1.0)
    est = catalytic_moments(box, nu=1.0, gamma=1.0, rho=1.0, kappa=1.0,
                            p=1, t_grid=(0.5, 1.0), n=60, seed=9)
    z = np.abs(est.direct - est.fk) / np.hypot(est.direct_se, est.fk_se)
    assert np.all(z <= 3.0)
    assert all(est.agree_3se)


def test_lambda_star_thresholds():
    # d=1, rho=gamma=p=1: mu(1) = sqrt(5) - 2 times rho
    probe = lambda_star_probe(1, 1.0, 1.0, 1)
    assert probe.value == pytest.approx(math.sqrt(5.0) - 2.0, abs=1e-9)
    assert probe.regime == "strongly p-catalytic"
    # d=3 below the transience threshold: mu = 0
    probe = lambda_star_probe(3, 1.0, 2.0, 1)
    assert probe.value == 0.0
    assert probe.regime == "weakly p-catalytic"
    assert probe.threshold == pytest.approx(3.956776, abs=1e-5)


def test_lambda_limits_closed_forms():
    r3 = 3.9567760226940054
    out = lambda_limits(3, 1.0, 1.0, 1.0, 1, polaron_constant=1.0)
    assert out.small_kappa == pytest.approx(1.0 / (r3 - 1.0), abs=1e-8)
    out4 = lambda_limits(4, 1.0, 1.0, 1.0, 1)
    assert out4.large_kappa_scaled == pytest.approx(0.154933, abs=1e-5)


def test_lambda_limits_guards():
    with pytest.raises(ConfigError):
        lambda_limits(2, 1.0, 1.0, 1.0, 1)  # transient dimensions only
    with pytest.raises(ConfigError):
        lambda_limits(3, 1.0, 8.0, 1.0, 1)  # strongly catalytic regime
    with pytest.raises(ConfigError):
        lambda_limits(3, 1.0, 1.0, 1.0, 1)  # d=3 needs the polaron constant
