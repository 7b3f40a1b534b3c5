"""Growth classes and the radius scale functions alpha(t), alpha_tilde(t).

The classifier takes the pair (gamma, eta_star): gamma is the regular
variation index of the auxiliary scale eta, eta_star = lim eta(t)/t.  Four
regimes result: (1) eta_star = inf, single-site islands; (2) eta_star in
(0, inf), bounded islands (forces gamma = 1); (3) eta_star = 0 with
gamma = 1, slowly growing islands; (4) gamma < 1, rapidly growing islands
with radius exponent nu = (1-gamma)/(d+2-d*gamma).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import ConfigError, ConvergenceError

__all__ = [
    "ScalingProfile",
    "hhat",
    "classify",
    "alpha_annealed",
    "alpha_quenched",
    "class3_check",
    "radius_exponent",
]

_BISECT_CAP = 200
_REL_TOL = 1e-12


def classify(gamma: float, eta_star: float) -> int:
    """Growth class of the pair (gamma, eta_star); rejects inconsistent pairs."""
    gamma = float(gamma)
    eta_star = float(eta_star)
    if math.isnan(gamma) or math.isnan(eta_star) or eta_star < 0:
        raise ConfigError("gamma must be real and eta_star nonnegative")
    if eta_star == math.inf:
        if gamma < 1:
            raise ConfigError("eta_star = inf forces gamma >= 1")
        return 1
    if gamma < 1:
        if eta_star != 0.0:
            raise ConfigError("gamma < 1 forces eta_star = 0")
        return 4
    if gamma > 1:
        raise ConfigError("gamma > 1 with finite eta_star is inconsistent")
    return 2 if eta_star > 0 else 3


@dataclass(frozen=True)
class ScalingProfile:
    gamma: float
    rho: float
    eta_star: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        classify(self.gamma, self.eta_star)  # validates consistency

    @property
    def growth_class(self) -> int:
        return classify(self.gamma, self.eta_star)


def hhat(y: float, profile: ScalingProfile) -> float:
    """Limiting increment function: rho*(y - y^gamma)/(1-gamma), or
    rho*y*log(y) at gamma = 1."""
    y = float(y)
    if y < 0:
        raise ConfigError("hhat needs y >= 0")
    if y == 0.0:
        return 0.0
    g = profile.gamma
    if g == 1.0:
        return profile.rho * y * math.log(y)
    return profile.rho * (y - y ** g) / (1.0 - g)


def radius_exponent(gamma: float, d: int) -> float:
    """nu = (1-gamma)/(d+2-d*gamma); the island radius grows like t^nu for
    gamma < 1 (the gamma = 1 classes have subpolynomial radius growth)."""
    if not 0 <= gamma < 1:
        raise ConfigError("radius exponent is defined for gamma in [0,1)")
    return (1.0 - gamma) / (d + 2.0 - d * gamma)


def _bisect_root(g, lo: float, hi: float, what: str) -> float:
    """Root of a (weakly) increasing g by bisection, relative tol 1e-12."""
    glo, ghi = g(lo), g(hi)
    for _ in range(_BISECT_CAP):
        if glo <= 0:
            break
        lo *= 0.5
        glo = g(lo)
    for _ in range(_BISECT_CAP):
        if ghi >= 0:
            break
        hi *= 2.0
        ghi = g(hi)
    if glo > 0 or ghi < 0:
        raise ConvergenceError(
            f"no sign change while bracketing {what} on [{lo:.3g}, {hi:.3g}]"
        )
    for _ in range(_BISECT_CAP):
        mid = 0.5 * (lo + hi)
        if g(mid) <= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _REL_TOL * max(abs(lo), abs(hi)):
            break
    return 0.5 * (lo + hi)


def alpha_annealed(eta, d: int, t: float) -> dict:
    """Annealed radius scale: the root alpha of eta(s)/s = alpha^{-2} with
    s = t*alpha^{-d}.

    Returns the root, the companion scale s = t*alpha^{-d}, and the residual.
    """
    if t <= 0:
        raise ConfigError("t must be positive")

    def g(a):
        s = t * a ** (-d)
        return eta(s) / s - a ** (-2.0)

    alpha = _bisect_root(g, 1.0, 1.0, "alpha(t)")
    s = t * alpha ** (-d)
    residual = abs(eta(s) / s - alpha ** (-2.0))
    return {"alpha": alpha, "s": s, "residual": residual, "t": t}


def alpha_quenched(alpha_fn, d: int, t: float) -> dict:
    """Quenched radius scale: the root s of s / alpha_fn(s)^2 = d log t.

    alpha_fn must make s -> s/alpha_fn(s)^2 strictly increasing on the search
    range; violations are detected on the sampled bracket and rejected.
    """
    if t <= 1:
        raise ConfigError("t must exceed 1 (needs log t > 0)")
    target = d * math.log(t)

    def val(s):
        return s / alpha_fn(s) ** 2

    def g(s):
        return val(s) - target

    root = _bisect_root(g, 1.0, 1.0, "alpha_tilde(t)")
    probes = np.geomspace(max(root * 1e-3, 1e-9), root * 1e3, 25)
    vals = [val(s) for s in probes]
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("s / alpha(s)^2 is not strictly increasing on the search range")
    return {"alpha_tilde": root, "t": t, "residual": abs(val(root) - target)}


def _oscillator_matrix(rho: float, kappa: float, nodes: np.ndarray, step: float):
    """1-d operator kappa*D2 - rho*x^2 on interior nodes, zero at the walls."""
    n = nodes.size
    main = -2.0 * kappa / step ** 2 - rho * nodes ** 2
    off = kappa / step ** 2 * np.ones(n - 1)
    return main, off


def class3_check(rho: float, kappa: float, d: int = 1, step: float = 1.0 / 64,
                 domain_radius: float = None) -> dict:
    """Ground state of the continuum-discretized operator kappa*Lap - rho*|x|^2.

    Discretizes on a uniform grid over (-R, R)^d with zero boundary values,
    computes the principal eigenpair, and fits a Gaussian exp(-a|x|^2) to the
    eigenvector.  The quadratic profile is the slow-growth-class limit shape
    once centered at its maximum (the additive constant only shifts the
    eigenvalue), and a Gaussian ground state is the expected response.

    Returns the fit exponent, the relative L2 distance to the best-fit
    Gaussian, the eigenvalue, and the boundary mass.  Raises when the
    eigenvector carries more than 1e-6 relative mass on the boundary ring
    (domain too small for the requested accuracy).
    """
    if rho <= 0 or kappa <= 0:
        raise ConfigError("rho and kappa must be positive")
    if d not in (1, 2):
        raise ConfigError("profile check implemented for d in {1, 2}")
    if domain_radius is None:
        # ground state ~ exp(-sqrt(rho/kappa) x^2 / 2); walls where it is ~1e-8
        domain_radius = math.ceil(6.0 / (rho / kappa) ** 0.25)
    n1 = int(round(2 * domain_radius / step)) - 1
    nodes = (np.arange(n1) - (n1 - 1) / 2) * step
    main, off = _oscillator_matrix(rho, kappa, nodes, step)

    if d == 1:
        from scipy.linalg import eigh_tridiagonal

        w, v = eigh_tridiagonal(main, off, select="i", select_range=(n1 - 1, n1 - 1))
        lam, vec = float(w[0]), v[:, 0]
        coords2 = nodes ** 2
        ring = np.zeros(n1, dtype=bool)
        ring[[0, -1]] = True
    else:
        K = sparse.diags([off, main, off], [-1, 0, 1], format="csr")

        def matvec(x):
            X = x.reshape(n1, n1)
            return (K @ X + X @ K.T).reshape(-1)

        op = LinearOperator((n1 * n1, n1 * n1), matvec=matvec, dtype=float)
        start = np.exp(-0.5 * math.sqrt(rho / kappa)
                       * (nodes[:, None] ** 2 + nodes[None, :] ** 2)).reshape(-1)
        w, v = eigsh(op, k=1, which="LA", v0=start, maxiter=20000, tol=1e-10)
        lam, vec = float(w[0]), v[:, 0]
        coords2 = (nodes[:, None] ** 2 + nodes[None, :] ** 2).reshape(-1)
        ring2 = np.zeros((n1, n1), dtype=bool)
        ring2[0, :] = ring2[-1, :] = ring2[:, 0] = ring2[:, -1] = True
        ring = ring2.reshape(-1)

    vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
    vec = vec / np.linalg.norm(vec)
    boundary_mass = float(np.sum(vec[ring] ** 2))
    if boundary_mass > 1e-6:
        raise ConfigError(
            f"eigenvector boundary mass {boundary_mass:.2e} > 1e-6; enlarge the domain"
        )

    # weighted log-linear fit of log v = log c - a |x|^2, weights v^2
    pos = vec > 1e-12
    wgt = vec[pos] ** 2
    X = np.column_stack([np.ones(pos.sum()), -coords2[pos]])
    y = np.log(vec[pos])
    coef = np.linalg.lstsq(X * np.sqrt(wgt)[:, None], y * np.sqrt(wgt), rcond=None)[0]
    a_fit = float(coef[1])
    model = np.exp(-a_fit * coords2)
    scale = float(vec @ model) / float(model @ model)
    rel_l2 = float(np.linalg.norm(vec - scale * model))
    return {
        "eigenvalue": lam,
        "eigenvector": vec,
        "coords_sq": coords2,
        "gauss_exponent": a_fit,
        "rel_l2_error": rel_l2,
        "boundary_mass": boundary_mass,
        "step": step,
        "domain_radius": domain_radius,
        "nodes": nodes,
    }
