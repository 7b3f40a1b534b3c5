"""I.i.d. potential families: samplers and tail calculus.

Each family comes with its distribution function F, the tail scale
phi(r) = log 1/(1-F(r)), the left-continuous inverse psi of phi, and the
cumulant generating function H(t) = log <e^{t xi(0)}>.

Families
--------
double_exponential(rho)
    F(r) = 1 - exp(-e^{r/rho}) on all of R.  Sampling: xi = rho*log E with
    E standard exponential, so <e^{t xi}> = E[E^{rho t}] = Gamma(1 + rho t)
    and H(t) = lgamma(1 + rho t) exactly.
bernoulli_trap(p)
    xi = 0 with probability 1-p and -inf with probability p.
bounded_tail(D, gamma)
    xi = -T with P(T <= x) = exp(-D x^{-a}), a = gamma/(1-gamma), a
    Frechet-type law on (-inf, 0).  gamma = 0 degenerates to the two-point
    trap law with p = 1 - e^{-D}.
tabulated(values, cdf)
    Discrete law read off a step distribution function; the first value may
    be -inf.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import ConfigError, DivergentMomentError
from .lattice import Box, Field

__all__ = [
    "PotentialSpec",
    "TailFunctions",
    "ShapeSample",
    "sample_field",
    "field_rng",
    "tail_functions",
    "left_continuous_inverse",
    "assumption_H_limit",
    "max_height",
    "rescale_shift",
]

FAMILIES = ("double_exponential", "bernoulli_trap", "bounded_tail", "tabulated")


@dataclass(frozen=True)
class PotentialSpec:
    """A named i.i.d. potential family plus its parameters."""

    family: str
    params: dict

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        object.__setattr__(self, "params", dict(self.params))
        self._validate()

    def _validate(self):
        p = self.params
        if self.family == "double_exponential":
            if set(p) != {"rho"} or not (0 < float(p["rho"]) < math.inf):
                raise ConfigError("double_exponential needs params {'rho': positive}")
        elif self.family == "bernoulli_trap":
            if set(p) != {"p"} or not (0 <= float(p["p"]) <= 1):
                raise ConfigError("bernoulli_trap needs params {'p': in [0,1]}")
        elif self.family == "bounded_tail":
            if set(p) != {"D", "gamma"}:
                raise ConfigError("bounded_tail needs params {'D','gamma'}")
            if not float(p["D"]) > 0:
                raise ConfigError("bounded_tail: D must be positive")
            if not (0 <= float(p["gamma"]) < 1):
                raise ConfigError("bounded_tail: gamma must lie in [0,1)")
        elif self.family == "tabulated":
            if set(p) != {"values", "cdf"}:
                raise ConfigError("tabulated needs params {'values','cdf'}")
            vals = np.asarray(p["values"], dtype=float)
            cdf = np.asarray(p["cdf"], dtype=float)
            if vals.ndim != 1 or vals.shape != cdf.shape or vals.size == 0:
                raise ConfigError("tabulated: values and cdf must be equal-length 1-d lists")
            if np.any(np.diff(vals) <= 0):
                raise ConfigError("tabulated: values must be strictly increasing")
            if np.any(vals[1:] == np.inf) or np.any(np.isnan(vals)):
                raise ConfigError("tabulated: +inf/NaN values not allowed")
            if vals[0] == np.inf:
                raise ConfigError("tabulated: +inf values not allowed")
            if np.any(np.diff(cdf) < 0) or cdf[0] < 0 or abs(cdf[-1] - 1.0) > 1e-12:
                raise ConfigError("tabulated: cdf must be nondecreasing and end at 1")

    def to_json(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> "PotentialSpec":
        if not isinstance(obj, dict) or set(obj) != {"family", "params"}:
            raise ConfigError("potential spec must be a JSON object {family, params}")
        return cls(obj["family"], obj["params"])

    @classmethod
    def double_exponential(cls, rho: float) -> "PotentialSpec":
        return cls("double_exponential", {"rho": float(rho)})

    @classmethod
    def bernoulli_trap(cls, p: float) -> "PotentialSpec":
        return cls("bernoulli_trap", {"p": float(p)})

    @classmethod
    def bounded_tail(cls, D: float, gamma: float) -> "PotentialSpec":
        return cls("bounded_tail", {"D": float(D), "gamma": float(gamma)})

    @classmethod
    def tabulated(cls, values, cdf) -> "PotentialSpec":
        return cls("tabulated", {"values": list(map(float, values)), "cdf": list(map(float, cdf))})

    @classmethod
    def constant(cls, c: float) -> "PotentialSpec":
        """Point mass at c, as a one-step tabulated law."""
        return cls.tabulated([c], [1.0])


@dataclass(frozen=True)
class TailFunctions:
    """Callables F, phi, psi, H for one family.

    ``rho_limit`` is the coefficient rho in the large-t increment limit
    (H(ct) - c H(t))/t -> rho * c log c; it is the family's rho for the
    double-exponential law and 0 for bounded or two-valued families.
    """

    F: callable
    phi: callable
    psi: callable
    H: callable
    rho_limit: float
    ess_sup: float


def field_rng(seed, index: int = 0) -> np.random.Generator:
    """Counter-based substream for realization `index` of a seeded ensemble.

    Streams for distinct indices are independent, so ensembles are
    reproducible no matter how realizations are scheduled across workers.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _tabulated_atoms(params) -> tuple:
    vals = np.asarray(params["values"], dtype=float)
    cdf = np.asarray(params["cdf"], dtype=float)
    probs = np.diff(np.concatenate(([0.0], cdf)))
    keep = probs > 0
    return vals[keep], probs[keep]


def sample_field(spec: PotentialSpec, box: Box, seed, index: int = 0) -> Field:
    """Draw an i.i.d. field on the box; deterministic in (seed, index, box, spec)."""
    rng = field_rng(seed, index)
    n = box.n_sites
    fam, p = spec.family, spec.params
    if fam == "bounded_tail" and p["gamma"] == 0.0:
        fam, p = "bernoulli_trap", {"p": 1.0 - math.exp(-p["D"])}
    if fam == "double_exponential":
        vals = p["rho"] * np.log(rng.standard_exponential(n))
    elif fam == "bernoulli_trap":
        vals = np.where(rng.random(n) < p["p"], -np.inf, 0.0)
    elif fam == "bounded_tail":
        a = p["gamma"] / (1.0 - p["gamma"])
        vals = -((p["D"] / rng.standard_exponential(n)) ** (1.0 / a))
    else:
        vals_atoms, probs = _tabulated_atoms(p)
        idx = np.searchsorted(np.cumsum(probs), rng.random(n), side="right")
        vals = vals_atoms[np.minimum(idx, len(vals_atoms) - 1)]
    return Field(box, vals)


def left_continuous_inverse(phi, s: float, lo: float = -1.0, hi: float = 1.0,
                            tol: float = 1e-12, max_expand: int = 2100) -> float:
    """Minimal r with phi(r) >= s, by monotone bisection with bracket growth.

    Handles plateaus and jump discontinuities of a nondecreasing phi; returns
    -inf when phi >= s already at arbitrarily small arguments.
    """
    for _ in range(max_expand):
        if phi(lo) < s:
            break
        lo *= 2.0
        if lo < -1e300:
            return -math.inf
    else:
        raise ConfigError("no lower bracket for the inverse")
    for _ in range(max_expand):
        if phi(hi) >= s:
            break
        hi *= 2.0
        if hi > 1e300:
            return math.inf
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if phi(mid) >= s:
            hi = mid
        else:
            lo = mid
    return hi


def _dexp_tails(rho: float) -> TailFunctions:
    def F(r):
        return -np.expm1(-np.exp(np.asarray(r, dtype=float) / rho))

    def phi(r):
        return np.exp(np.asarray(r, dtype=float) / rho)

    def psi(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            out = rho * np.log(s)
        return out if out.ndim else float(out)

    def H(t):
        t = float(t)
        if t <= -1.0 / rho:
            raise DivergentMomentError(f"H(t) diverges for t <= {-1.0/rho}")
        return float(special.gammaln(1.0 + rho * t))

    return TailFunctions(F, phi, psi, H, rho_limit=rho, ess_sup=math.inf)


def _trap_tails(p: float) -> TailFunctions:
    lg = -math.log1p(-p) if p < 1 else math.inf  # phi value on r < 0

    def F(r):
        return np.where(np.asarray(r, dtype=float) >= 0, 1.0, p)

    def phi(r):
        return np.where(np.asarray(r, dtype=float) >= 0, np.inf, lg)

    def psi(s):
        s = np.asarray(s, dtype=float)
        out = np.where(s > lg, 0.0, -np.inf)
        return out if out.ndim else float(out)

    def H(t):
        t = float(t)
        if t < 0 and p > 0:
            raise DivergentMomentError("H(t) diverges for t < 0 on trap fields")
        if t == 0:
            return 0.0
        return -math.inf if p >= 1 else math.log1p(-p)

    return TailFunctions(F, phi, psi, H, rho_limit=0.0, ess_sup=0.0)


def _bounded_tails(D: float, gamma: float) -> TailFunctions:
    if gamma == 0.0:
        return _trap_tails(1.0 - math.exp(-D))
    a = gamma / (1.0 - gamma)

    def F(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r >= 0, 1.0, -np.expm1(-D * np.abs(r) ** (-a)))
        return out

    def phi(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(r >= 0, np.inf, D * np.abs(r) ** (-a))

    def psi(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            out = -((D / s) ** (1.0 / a))
        return out if out.ndim else float(out)

    def H(t):
        t = float(t)
        if t < 0:
            raise DivergentMomentError("H(t) diverges for t < 0 (xi unbounded below)")
        if t == 0:
            return 0.0
        # xi = -D^{1/a} u^{-1/a} with u standard exponential
        scale = D ** (1.0 / a)

        def integrand(u):
            with np.errstate(over="ignore", divide="ignore"):
                return float(np.exp(-u - t * scale * np.float_power(u, -1.0 / a)))

        val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-10, limit=200)
        return math.log(val)

    return TailFunctions(F, phi, psi, H, rho_limit=0.0, ess_sup=0.0)


def _tabulated_tails(params) -> TailFunctions:
    vals, probs = _tabulated_atoms(params)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    with np.errstate(divide="ignore"):
        levels = -np.log1p(-np.minimum(cdf, 1.0))  # phi at each atom, last is +inf

    def F(r):
        r = np.asarray(r, dtype=float)
        k = np.searchsorted(vals, r, side="right")
        return np.concatenate(([0.0], cdf))[k]

    def phi(r):
        r = np.asarray(r, dtype=float)
        k = np.searchsorted(vals, r, side="right")
        return np.concatenate(([0.0], levels))[k]

    def psi(s):
        s = np.asarray(s, dtype=float)
        k = np.searchsorted(levels, s, side="left")
        padded = np.concatenate((vals, [vals[-1]]))
        out = np.where(s <= 0, -np.inf, padded[np.minimum(k, len(vals))])
        # levels below s never occur past the last finite one
        return out if out.ndim else float(out)

    finite = np.isfinite(vals)

    def H(t):
        t = float(t)
        if t == 0:
            return 0.0
        if not np.all(finite) and t < 0:
            raise DivergentMomentError("H(t) diverges for t < 0 with a -inf atom")
        terms = t * vals[finite] + np.log(probs[finite])
        return float(special.logsumexp(terms))

    return TailFunctions(F, phi, psi, H, rho_limit=0.0, ess_sup=float(vals[-1]))


def tail_functions(spec: PotentialSpec) -> TailFunctions:
    """Analytic descriptors (F, phi, psi, H) of the family."""
    if spec.family == "double_exponential":
        return _dexp_tails(spec.params["rho"])
    if spec.family == "bernoulli_trap":
        return _trap_tails(spec.params["p"])
    if spec.family == "bounded_tail":
        return _bounded_tails(spec.params["D"], spec.params["gamma"])
    return _tabulated_tails(spec.params)


def assumption_H_limit(spec: PotentialSpec, c: float, t_grid) -> dict:
    """Finite-t ratios (H(ct) - c H(t))/t with an extrapolated large-t limit.

    Returns a dict with the ratio sequence, the least-squares extrapolation
    against the 1/t and log(t)/t correction basis, and a convergence flag.
    No silent extrapolation: the flag is False whenever the sequence has not
    settled.
    """
    if not (0 < c <= 1):
        raise ConfigError("c must lie in (0, 1]")
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    if t_grid.size < 3 or t_grid[0] <= 0:
        raise ConfigError("t_grid must hold at least 3 positive times")
    tf = tail_functions(spec)
    ratios = np.array([(tf.H(c * t) - c * tf.H(t)) / t for t in t_grid])
    basis = np.column_stack([np.ones_like(t_grid), np.log(t_grid) / t_grid, 1.0 / t_grid])
    coef, *_ = np.linalg.lstsq(basis, ratios, rcond=None)
    extrapolated = float(coef[0])
    resid = ratios - basis @ coef
    tail_gap = abs(ratios[-1] - extrapolated)
    scale = max(abs(extrapolated), 1e-3)
    converged = bool(
        tail_gap <= 0.05 * scale and np.max(np.abs(resid)) <= 0.05 * scale
    )
    return {
        "t": t_grid.tolist(),
        "ratios": ratios.tolist(),
        "extrapolated": extrapolated,
        "converged": converged,
    }


def max_height(f: Field) -> tuple:
    """Largest finite value of f and every site attaining it.

    Raises on all -inf fields: the height of an empty domain is undefined.
    """
    finite = np.isfinite(f.values)
    if not finite.any():
        raise ValueError("max_height of an all -inf field")
    h = float(np.max(f.values[finite]))
    argmax = [f.box.site_of(int(i)) for i in np.where(f.values == h)[0]]
    return h, argmax


@dataclass(frozen=True)
class ShapeSample:
    """A shape sampled on the grid (1/alpha) Z^d inside the open cube (-R, R)^d."""

    coords: np.ndarray    # (n, d) float sample points
    values: np.ndarray    # (n,) shape values, -inf allowed
    alpha: float
    shift: float
    grid_radius: int      # integer index radius: coords = index / alpha


def rescale_shift(f: Field, shift: float, alpha: float, window: float) -> ShapeSample:
    """Centered, shifted, alpha-rescaled reading of the field on a window.

    Produces xi_bar(x) = alpha^2 (f(floor(x*alpha)) - shift) on the sample
    grid x = j/alpha, |j|_inf <= floor(window*alpha).  With alpha = 1 this is
    just f - shift on the sub-box of radius floor(window), read relative to
    the field box's center.
    """
    if alpha < 1:
        raise ConfigError("alpha must be >= 1")
    if window <= 0:
        raise ConfigError("window must be positive")
    m = int(math.floor(window * alpha))
    if m > f.box.radius:
        raise ConfigError(
            f"window radius {m} (lattice units) exceeds the field box radius {f.box.radius}"
        )
    side = 2 * m + 1
    j = np.indices((side,) * f.box.d).reshape(f.box.d, -1).T - m
    # floor(x * alpha) at x = j/alpha is exactly j; evaluating it that way
    # avoids the float round-off that (j/alpha)*alpha can introduce
    flat = np.ravel_multi_index(tuple((j + f.box.radius).T), f.box.shape)
    vals = alpha ** 2 * (f.values[flat] - shift)
    return ShapeSample(
        coords=j / alpha, values=vals, alpha=float(alpha), shift=float(shift), grid_radius=m
    )
