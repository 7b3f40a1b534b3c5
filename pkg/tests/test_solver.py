import math

import numpy as np
import pytest

from pamlab.errors import ConfigError
from pamlab.lattice import Box, Field, constant_field, delta_field
from pamlab.potentials import PotentialSpec, sample_field
from pamlab.solver import (
    EvolutionConfig,
    WalkConfig,
    evolve,
    feynman_kac,
    moment_ensemble,
    suggested_radius,
    total_mass,
)


def _one_box(radius=4):
    return Box(1, radius, "dirichlet")


def test_total_mass_cases():
    box = Box(2, 2, "dirichlet")
    assert total_mass(delta_field(box)).mass == pytest.approx(1.0)
    assert total_mass(constant_field(box, 1.0)).mass == pytest.approx(25.0)
    with pytest.raises(ConfigError):
        total_mass(constant_field(box, -1.0))


def test_single_site_domain_is_a_scalar_ode():
    """xi(0) = a finite, -inf elsewhere: u(t, 0) = exp((a - 2dk)t)."""
    box = _one_box()
    vals = np.full(box.n_sites, -math.inf)
    vals[box.index_of((0,))] = 1.5
    kappa, t = 0.8, 2.0
    cfg = EvolutionConfig(kappa=kappa, t_end=t, snapshot_times=(t,))
    snap = evolve(Field(box, vals), delta_field(box), cfg)[-1]
    assert snap.value_at((0,)) == pytest.approx(math.exp((1.5 - 2 * kappa) * t),
                                                rel=1e-9)
    assert snap.mass().mass == pytest.approx(math.exp((1.5 - 2 * kappa) * t),
                                             rel=1e-9)


def test_zero_potential_conserves_mass_on_torus():
    box = Box(2, 3, "periodic")
    cfg = EvolutionConfig(kappa=1.0, t_end=1.0, snapshot_times=(0.5, 1.0))
    for snap in evolve(constant_field(box, 0.0), constant_field(box, 1.0), cfg):
        assert snap.mass().mass == pytest.approx(box.n_sites, rel=1e-12)


def test_steppers_agree(dexp2):
    box = _one_box()
    xi = sample_field(dexp2, box, seed=4)
    u0 = constant_field(box, 1.0)
    out = {}
    for stepper in ("split-exponential", "explicit"):
        cfg = EvolutionConfig(kappa=1.0, t_end=1.0, snapshot_times=(1.0,),
                              stepper=stepper, dt_max=0.001)
        out[stepper] = evolve(xi, u0, cfg)[-1]
    a, b = out["split-exponential"], out["explicit"]
    assert a.log_value_at((0,)) == pytest.approx(b.log_value_at((0,)), abs=2e-4)


def test_evolution_config_validation():
    with pytest.raises(ConfigError):
        EvolutionConfig(kappa=-1.0, t_end=1.0, snapshot_times=(1.0,))
    with pytest.raises(ConfigError):
        EvolutionConfig(kappa=1.0, t_end=1.0, snapshot_times=(2.0,))
    with pytest.raises(ConfigError):
        EvolutionConfig(kappa=1.0, t_end=1.0, snapshot_times=(1.0,),
                        stepper="midpoint")


def test_feynman_kac_free_zero_potential():
    """Every path weight is exactly 1 when xi = 0: estimate 1, SE 0."""
    box = Box(1, 30, "periodic")
    cfg = WalkConfig(kappa=1.0, n_paths=200, seed=7, mode="free")
    est, se = feynman_kac(constant_field(box, 0.0), 2.0, None, cfg)
    assert est == 1.0 and se == 0.0


def test_feynman_kac_matches_pde(dexp2):
    """Free-endpoint walks from 0 estimate E_0 exp(int xi), which equals the
    flat-start u(t,0) and the delta-start total mass by walk reversal."""
    box = _one_box()
    xi = sample_field(dexp2, box, seed=12)
    t = 1.0
    cfg = EvolutionConfig(kappa=1.0, t_end=t, snapshot_times=(t,),
                          dt_max=0.002)
    u_flat = evolve(xi, constant_field(box, 1.0), cfg)[-1].value_at((0,))
    U_delta = evolve(xi, delta_field(box), cfg)[-1].mass().mass
    # the two solves split the operator around different states, so they
    # agree only to the first-order step error, not to round-off
    assert u_flat == pytest.approx(U_delta, abs=1e-3)
    est, se = feynman_kac(xi, t, None, WalkConfig(kappa=1.0, n_paths=20_000,
                                                  seed=3, mode="free"))
    assert abs(est - u_flat) <= 3 * se


def test_walk_determinism(dexp2):
    box = _one_box()
    xi = sample_field(dexp2, box, seed=1)
    cfg = WalkConfig(kappa=1.0, n_paths=500, seed=42, mode="free")
    assert feynman_kac(xi, 1.0, None, cfg) == feynman_kac(xi, 1.0, None, cfg)


def test_suggested_radius_grows_like_reach():
    assert suggested_radius(1, 1.0, 32.0) >= 64
    assert suggested_radius(1, 1.0, 1.0) < suggested_radius(1, 1.0, 8.0)


def test_constant_potential_moments_exact():
    """Point mass at c: Lambda_p(t) = p c t exactly, zero-width intervals."""
    spec = PotentialSpec.constant(0.5)
    box = Box(1, 25, "periodic")  # torus keeps u = e^{ct} homogeneous
    cfg = EvolutionConfig(kappa=1.0, t_end=2.0, snapshot_times=(1.0, 2.0))
    mt = moment_ensemble(spec, box, cfg, p_list=(1.0, 2.0), n_realizations=4,
                         seed=0)
    for i, p in enumerate((1.0, 2.0)):
        for j, t in enumerate((1.0, 2.0)):
            assert mt.lambda_hat[i, j] == pytest.approx(p * 0.5 * t, abs=1e-9)
            assert mt.ci_high[i, j] - mt.ci_low[i, j] == pytest.approx(0.0,
                                                                       abs=1e-9)


def test_zero_potential_lambda1_vanishes():
    spec = PotentialSpec.constant(0.0)
    box = Box(1, 20, "periodic")
    cfg = EvolutionConfig(kappa=1.0, t_end=1.0, snapshot_times=(0.5, 1.0))
    mt = moment_ensemble(spec, box, cfg, p_list=(1.0,), n_realizations=3, seed=0)
    assert np.allclose(mt.lambda_hat[0], 0.0, atol=1e-9)


def test_moment_threads_do_not_change_results(dexp2):
    box = _one_box()
    cfg = EvolutionConfig(kappa=1.0, t_end=1.0, snapshot_times=(1.0,))
    kw = dict(p_list=(1.0, 2.0), n_realizations=16, seed=5, bootstrap=50)
    serial = moment_ensemble(dexp2, box, cfg, **kw, threads=1)
    pooled = moment_ensemble(dexp2, box, cfg, **kw, threads=4)
    assert np.array_equal(serial.log_u, pooled.log_u)
    assert np.array_equal(serial.lambda_hat, pooled.lambda_hat)
    assert np.array_equal(serial.ci_low, pooled.ci_low)


def test_trap_realizations_survive_in_the_ensemble():
    """A hard trap at the origin gives log u = -inf, not a crash."""
    spec = PotentialSpec.bernoulli_trap(0.6)
    box = _one_box(3)
    cfg = EvolutionConfig(kappa=1.0, t_end=0.5, snapshot_times=(0.5,))
    mt = moment_ensemble(spec, box, cfg, p_list=(1.0,), n_realizations=12,
                         seed=2)
    assert np.isfinite(mt.lambda_hat[0, 0])
    assert np.any(mt.log_u == -math.inf)
