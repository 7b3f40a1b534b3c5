import math

import pytest

from pamlab.errors import ConfigError
from pamlab.scaling import (
    ScalingProfile,
    alpha_annealed,
    alpha_quenched,
    class3_check,
    classify,
    hhat,
    radius_exponent,
)


def test_classify_covers_the_four_regimes():
    assert classify(2.0, math.inf) == 1      # single sites
    assert classify(1.0, 1.0) == 2           # bounded islands
    assert classify(1.0, 0.0) == 3           # slowly growing islands
    assert classify(0.5, 0.0) == 4           # rapidly growing islands
    with pytest.raises(ConfigError):
        classify(0.5, math.inf)              # gamma < 1 forces eta_star = 0


def test_hhat_zero_at_one_in_both_branches():
    p_a = ScalingProfile(gamma=0.5, rho=2.0, eta_star=0.0)
    p_b = ScalingProfile(gamma=1.0, rho=2.0, eta_star=1.0)
    assert hhat(1.0, p_a) == 0.0
    assert hhat(1.0, p_b) == 0.0
    assert hhat(0.0, p_a) == 0.0


def test_hhat_branch_limit():
    """The gamma -> 1 limit of the generic branch is the y log y branch."""
    near = ScalingProfile(gamma=0.999, rho=1.0, eta_star=0.0)
    at = ScalingProfile(gamma=1.0, rho=1.0, eta_star=1.0)
    assert abs(hhat(2.0, near) - hhat(2.0, at)) < 2e-3


def test_alpha_annealed_worked_case():
    # eta(t) = 1 (gamma = 0), d = 1: alpha(t) = t^{1/3}
    out = alpha_annealed(lambda s: 1.0, 1, 1e6)
    assert out["alpha"] == pytest.approx(100.0, rel=1e-6)
    assert out["residual"] < 1e-9


@pytest.mark.parametrize("gamma,d", [(0.0, 1), (0.5, 1), (0.5, 2)])
def test_alpha_annealed_power_law(gamma, d):
    nu = (1 - gamma) / (d + 2 - d * gamma)
    for t in (1e3, 1e4, 1e6):
        out = alpha_annealed(lambda s: s ** gamma, d, t)
        assert out["alpha"] == pytest.approx(t ** nu, rel=5e-3)


def test_alpha_quenched_worked_case():
    # alpha(s) = s^{1/3}, d = 1: alpha_tilde(t) = (log t)^3
    out = alpha_quenched(lambda s: s ** (1.0 / 3.0), 1, math.exp(10.0))
    assert out["alpha_tilde"] == pytest.approx(1000.0, rel=1e-6)


def test_alpha_quenched_constant_alpha():
    # alpha == 1 collapses the defining relation to alpha_tilde = d log t
    for d in (1, 3):
        out = alpha_quenched(lambda s: 1.0, d, 50.0)
        assert out["alpha_tilde"] == pytest.approx(d * math.log(50.0), rel=1e-9)
    with pytest.raises(ConfigError):
        alpha_quenched(lambda s: 1.0, 1, 1.0)  # needs t > 1


def test_radius_exponent_monotone_in_gamma():
    vals = [radius_exponent(g, 1) for g in (0.0, 0.25, 0.5, 0.75)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_class3_ground_state_is_gaussian():
    out = class3_check(rho=1.0, kappa=1.0, d=1, step=1.0 / 32)
    assert out["rel_l2_error"] < 1e-3
    # continuum oscillator exponent: sqrt(rho/kappa)/2
    assert out["gauss_exponent"] == pytest.approx(0.5, rel=5e-3)
