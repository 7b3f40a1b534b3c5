"""Characteristic variational problems on boxes.

Two independent optimizers live here: the measure-side problem

    chi = inf over probability measures of  kappa*S(mu) + rho*I(mu),

with S the Dirichlet form of sqrt(mu) (zero extension) and I the entropy,
and the potential-side problem

    chi~ = -sup { lambda(kappa*Delta + V) : V <= 0, sum_x e^{V(x)/rho} <= 1 }.

They are kept algorithmically unrelated on purpose: agreement between the
two values is one of the package's cross-checks and must stay meaningful.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError, NonMonotoneError
from .lattice import Box, Field, laplacian_matrix
from .spectral import principal_eigen

__all__ = [
    "MeasureOnBox",
    "VarSolution",
    "ShapeResult",
    "RateIRResult",
    "donsker_varadhan",
    "entropy",
    "chi_d",
    "logistic_equation_1d",
    "rate_I",
    "chi_tilde_d",
    "optimal_shapes",
    "rate_IR_bounded",
]


@dataclass(frozen=True)
class MeasureOnBox:
    """Probability measure supported on the sites of a box."""

    box: Box
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.box.n_sites,):
            raise ConfigError(f"expected {self.box.n_sites} weights, got {w.shape}")
        if np.min(w) < -1e-12:
            raise ConfigError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ConfigError(f"weights must sum to 1, got {w.sum()!r}")
        w = np.maximum(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def donsker_varadhan(mu: MeasureOnBox) -> float:
    """Dirichlet form of sqrt(mu), edges to the zero-mass exterior included."""
    v = np.sqrt(mu.weights)
    L = laplacian_matrix(mu.box)
    return float(-v @ (L @ v))


def entropy(mu: MeasureOnBox) -> float:
    """-sum mu log mu with the 0 log 0 = 0 convention."""
    w = mu.weights[mu.weights > 0.0]
    return float(-np.sum(w * np.log(w)))


@dataclass(frozen=True)
class VarSolution:
    """Optimal value and profile of one of the box variational problems."""

    value: float
    profile: Field
    radius: int
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)


def _gaussian_start(box: Box, width: float) -> np.ndarray:
    g = box.offsets().astype(float)
    return np.exp(-np.sum(g * g, axis=1) / (2.0 * width * width))


def _boundary_ring_mass(box: Box, mu: np.ndarray) -> float:
    ring = np.max(np.abs(box.offsets()), axis=1) == box.radius
    return float(np.sum(mu[ring]))


# mass floor for the exponentiated-gradient iteration: keeps every gradient
# coordinate finite while costing the objective only O(n * floor * log floor)
_MU_FLOOR = 1e-40


def _chi_objective_and_grad(mu, L, kappa, rho):
    v = np.sqrt(mu)
    Lv = L @ v
    S = float(-v @ Lv)
    I = float(-np.sum(mu * np.log(mu)))
    F = kappa * S + rho * I
    # d/dmu of S is -(Lv)/v; of I is -(log mu + 1)
    grad = -kappa * (Lv / v) - rho * (np.log(mu) + 1.0)
    return F, grad


def chi_d(kappa: float, rho: float, R: int, d: int = 1, tol: float = 1e-13,
          maxiter: int = 50_000, boundary_tol: float = 1e-8) -> VarSolution:
    """Minimize kappa*S(mu) + rho*I(mu) over probability measures on the box
    of radius R, by exponentiated-gradient descent with backtracking.

    For d > 1 the one-dimensional problem is solved as well and its product
    measure evaluated on the d-dimensional box; both values land in the
    diagnostics (`direct_value`, `tensorized_value`).  rho may be +inf, in
    which case the point mass at the origin is optimal and returned exactly.
    """
    if kappa <= 0 or rho < 0:
        raise ConfigError("need kappa > 0 and rho >= 0")
    box = Box(d, R)
    if math.isinf(rho):
        mu = np.zeros(box.n_sites)
        mu[box.index_of(box.center)] = 1.0
        return VarSolution(2.0 * d * kappa, Field(box, mu), R, 0, True,
                           {"note": "entropy term forces a point mass"})

    L = laplacian_matrix(box)
    mu = np.maximum(_gaussian_start(box, max(1.0, R / 3.0)), _MU_FLOOR)
    mu /= mu.sum()

    def eg_step(mu, grad, eta):
        center = float(mu @ grad)
        cand = mu * np.exp(np.clip(-eta * (grad - center), -40.0, 40.0))
        cand /= cand.sum()
        cand = np.maximum(cand, _MU_FLOOR)
        return cand / cand.sum()

    F, grad = _chi_objective_and_grad(mu, L, kappa, rho)
    eta = 0.25 / (kappa + rho + 1.0)
    trace = [F]
    it = 0
    flat = 0
    for it in range(1, maxiter + 1):
        cand = eg_step(mu, grad, eta)
        Fc, gc = _chi_objective_and_grad(cand, L, kappa, rho)
        while Fc > F and eta > 1e-15:
            eta *= 0.5
            cand = eg_step(mu, grad, eta)
            Fc, gc = _chi_objective_and_grad(cand, L, kappa, rho)
        if Fc > F:
            if Fc - F < 1e-10 * (1.0 + abs(F)):
                break
            raise NonMonotoneError(
                f"descent stalled uphill at iteration {it}", trace=trace[-50:])
        drop = F - Fc
        mu, F, grad = cand, Fc, gc
        if it % 64 == 0:
            trace.append(F)
        eta = min(eta * 1.6, 1.0)
        if drop <= tol * (1.0 + abs(F)):
            flat += 1
            if flat >= 10:
                break
        else:
            flat = 0
    converged = flat >= 10
    ring = _boundary_ring_mass(box, mu)
    if ring > boundary_tol:
        raise ConfigError(
            f"boundary ring holds mass {ring:.2e} > {boundary_tol:.0e}; "
            f"enlarge the box beyond R={R}")
    diagnostics = {"objective_trace": trace, "boundary_mass": ring,
                   "direct_value": F}
    if d > 1:
        sub = chi_d(kappa, rho, R, d=1, tol=tol, maxiter=maxiter,
                    boundary_tol=boundary_tol)
        m1 = sub.profile.values
        prod = m1
        for _ in range(d - 1):
            prod = np.multiply.outer(prod, m1)
        prod = prod.reshape(-1)
        prod /= prod.sum()
        Ft, _ = _chi_objective_and_grad(prod, L, kappa, rho)
        diagnostics["tensorized_value"] = Ft
        diagnostics["value_1d"] = sub.value
    return VarSolution(F, Field(box, mu), R, it, converged, diagnostics)


def logistic_equation_1d(kappa: float, rho: float, R: int,
                         tol: float = 1e-8, maxiter: int = 20_000) -> VarSolution:
    """Positive solution of kappa*Delta(v) + 2 rho v log v = 0 on [-R, R]
    with minimal l2 norm.

    Two routes run from each start in a family of Gaussian and geometric
    profiles: the damped fixed-point map v <- exp(-kappa*Delta(v) /
    (2 rho v)), and a damped Newton iteration on the same equation.  The
    fixed-point map alone cannot reach the decaying solution: its Jacobian
    there has eigenvalues above 1 coming from the steep tail ratios, so
    that solution repels for every damping factor, while Newton is locally
    stable at any nondegenerate root.  All converged solutions are pooled
    and the minimal-norm one returned; the distinct ones stay visible in
    the diagnostics.

    Any genuine positive solution has max v >= 1 (at the argmax the
    Laplacian is nonpositive, forcing log v >= 0 there), while uniformly
    tiny profiles meet the residual tolerance vacuously; candidates with
    max v < 1/2 are therefore discarded.
    """
    if kappa <= 0 or not (0 < rho < math.inf):
        raise ConfigError("need kappa > 0 and rho in (0, inf)")
    box = Box(1, R)
    L = laplacian_matrix(box)
    Ld = L.toarray()

    def G(v):
        return kappa * (L @ v) + 2.0 * rho * v * np.log(v)

    def residual(v):
        return float(np.max(np.abs(G(v))))

    solutions = []
    traces = {}

    def fixed_point(v):
        w = np.log(v)
        tau = 0.5
        res = residual(v)
        trail = [res]
        for it in range(1, maxiter + 1):
            target = -kappa * (L @ v) / (2.0 * rho * v)
            w_new = (1.0 - tau) * w + tau * target
            v_new = np.exp(np.clip(w_new, -700.0, 50.0))
            res_new = residual(v_new)
            if not math.isfinite(res_new) or res_new > 4.0 * res + 1.0:
                tau *= 0.5
                if tau < 1e-6:
                    return None, trail
                continue
            w, v, res = w_new, v_new, res_new
            if it % 512 == 0:
                trail.append(res)
            if res < tol:
                return v, trail
        return None, trail

    def newton(v):
        res = residual(v)
        for _ in range(200):
            if res < tol:
                return v
            J = kappa * Ld + np.diag(2.0 * rho * (np.log(v) + 1.0))
            try:
                delta = np.linalg.solve(J, -G(v))
            except np.linalg.LinAlgError:
                return None
            s = 1.0
            while s > 1e-8:
                cand = v + s * delta
                if np.all(cand > 0) and residual(cand) < res:
                    break
                s *= 0.5
            else:
                return None
            v = v + s * delta
            res = residual(v)
        return None

    dist = np.abs(box.offsets()[:, 0]).astype(float)
    starts = [(w, np.maximum(_gaussian_start(box, w), 1e-12))
              for w in (0.5, 1.0, 2.0, R / 4.0, R / 2.0)]
    # the decaying solution falls by a near-constant factor per site, so
    # geometric profiles over a spread of rates are the starts that land in
    # its Newton basin; Gaussian starts cover the wide solutions
    starts += [(("exp", a), np.maximum(np.exp(-a * dist), 1e-12))
               for a in (1.5, 3.0, 4.6, 7.0)]
    for key, start in starts:
        v, trail = fixed_point(start.copy())
        traces[key] = trail[-20:]
        if v is not None and np.max(v) >= 0.5:
            solutions.append((float(np.linalg.norm(v)), v))
        v = newton(start.copy())
        if v is not None and np.max(v) >= 0.5:
            solutions.append((float(np.linalg.norm(v)), v))
    if not solutions:
        raise ConvergenceError("no logistic solution converged from any "
                               "start", trace=traces)
    solutions.sort(key=lambda s: s[0])
    distinct = [solutions[0]]
    for s in solutions[1:]:
        if all(np.linalg.norm(s[1] - t[1]) > 1e-6 for t in distinct):
            distinct.append(s)
    nrm, v = solutions[0]
    return VarSolution(nrm, Field(box, v), R, len(distinct), True,
                       {"residual": residual(v),
                        "n_distinct_fixed_points": len(distinct),
                        "l2_norms": [s[0] for s in distinct]})


def rate_I(V: Field, rho: float) -> float:
    """sum_x e^{V(x)/rho} for finite rho; the support count for rho = inf.

    V is a potential profile: finite entries must be <= 0, and the field's
    exterior counts as -inf (contributing nothing).
    """
    vals = V.values
    finite = np.isfinite(vals)
    if np.any(vals[finite] > 1e-12):
        raise ConfigError("potential profile must be <= 0")
    if math.isinf(rho):
        return float(np.count_nonzero(finite))
    if rho <= 0:
        raise ConfigError("rho must be positive or +inf")
    return float(np.sum(np.exp(vals[finite] / rho)))


def _project_feasible(V: np.ndarray, rho: float) -> np.ndarray:
    """Shift-and-cap V <= 0 until sum e^{V/rho} = 1 to machine accuracy."""
    for _ in range(200):
        finite = np.isfinite(V)
        s = float(np.sum(np.exp(V[finite] / rho)))
        if abs(s - 1.0) <= 1e-13:
            return V
        V = np.where(finite, np.minimum(0.0, V - rho * math.log(s)), V)
    return V


def _kkt_cut(box: Box, rho: float) -> float:
    """Level below which e^{V/rho} is dead weight for the constraint sum."""
    return -rho * (math.log(box.n_sites) + 21.0)


def _kkt_potential(w2: np.ndarray, rho: float, cut: float | None) -> np.ndarray:
    """First-order optimal potential for eigenfunction mass w2: the capped
    profile min(0, rho*log(w2/z)) with z fixed by bisection so the constraint
    sum e^{V/rho} = 1 is tight.  Sites below `cut` drop to -inf (they carry
    no constraint weight but would slow the iterative eigensolves down);
    cut=None keeps every positive-mass site."""
    z_lo, z_hi = 1e-300, float(np.max(w2)) + 1.0
    for _ in range(200):
        z = 0.5 * (z_lo + z_hi)
        s = float(np.sum(np.minimum(1.0, w2 / z)))
        if s > 1.0:
            z_lo = z
        else:
            z_hi = z
    z = z_hi
    with np.errstate(divide="ignore"):
        V = np.minimum(0.0, rho * np.log(w2 / z))
    if cut is not None:
        V[V < cut] = -math.inf
    return _project_feasible(V, rho)


def _connected_supports(box: Box, k_max: int):
    """All connected site subsets of size <= k_max, without symmetry
    reduction (enumeration stays cheap at the k_max in use)."""
    center = np.asarray(box.center)
    sites = [tuple(s) for s in box.offsets() + center]
    found = set()
    frontier = {frozenset([s]): None for s in sites}
    for size in range(1, k_max + 1):
        for supp in list(frontier):
            found.add(supp)
        if size == k_max:
            break
        nxt = {}
        for supp in frontier:
            for s in supp:
                for axis in range(box.d):
                    for sign in (-1, 1):
                        nb = list(s)
                        nb[axis] += sign
                        nb = tuple(nb)
                        if box.contains(nb) and nb not in supp:
                            nxt.setdefault(supp | {nb}, None)
        frontier = nxt
    return sorted(found, key=lambda f: (len(f), sorted(f)))


def chi_tilde_d(kappa: float, rho: float, R: int, d: int = 1,
                tol: float = 1e-11, maxiter: int = 600,
                k_max: int = 3) -> VarSolution:
    """-sup of the principal eigenvalue of kappa*Delta + V over potentials
    V <= 0 with sum e^{V/rho} <= 1, on the box of radius R.

    Finite rho runs an alternating ascent: eigenpair of the current V, then
    the first-order update V = min(0, rho*log(w^2/z)) with z fixed by
    bisection so the constraint is tight, with damping on the way back down.
    rho = inf enumerates connected supports of size <= k_max (only singletons
    are feasible; the rest are reported for comparison).
    """
    if kappa <= 0:
        raise ConfigError("kappa must be positive")
    box = Box(d, R)
    if math.isinf(rho):
        best = None
        comparison = []
        for supp in _connected_supports(Box(d, min(R, 3)), k_max):
            V = np.full(box.n_sites, -math.inf)
            for s in supp:
                V[box.index_of(s)] = 0.0
            lam = principal_eigen(Field(box, V), kappa).value
            comparison.append({"support_size": len(supp), "lambda": lam})
            feasible = len(supp) <= 1
            if feasible and (best is None or lam > best[0]):
                best = (lam, V)
        lam, V = best
        return VarSolution(-lam, Field(box, V), R, 0, True,
                           {"support_comparison": comparison[:40],
                            "note": "only singleton supports satisfy I <= 1"})

    if rho <= 0:
        raise ConfigError("rho must be positive or +inf")
    cut = _kkt_cut(box, rho)
    w0 = _gaussian_start(box, max(1.0, R / 4.0))
    V = _kkt_potential(w0 * w0 / float(np.sum(w0 * w0)), rho, cut)
    lam = principal_eigen(Field(box, V), kappa).value
    tau = 1.0
    trace = [lam]
    feas = []
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        pair = principal_eigen(Field(box, V), kappa)
        w2 = pair.vector.values ** 2
        V_new = _kkt_potential(w2, rho, cut)
        mixed = (1.0 - tau) * np.where(np.isfinite(V), V, cut * 2.0) \
            + tau * np.where(np.isfinite(V_new), V_new, cut * 2.0)
        mixed[mixed < cut] = -math.inf
        V_cand = _project_feasible(np.minimum(0.0, mixed), rho)
        lam_new = principal_eigen(Field(box, V_cand), kappa).value
        feas.append(abs(rate_I(Field(box, V_cand), rho) - 1.0))
        if lam_new < lam - 1e-12 * (1.0 + abs(lam)):
            tau *= 0.5
            if tau < 1e-3:
                raise ConvergenceError(
                    "alternating ascent oscillates despite damping",
                    trace=trace[-50:])
            continue
        gain = lam_new - lam
        V, lam = V_cand, lam_new
        trace.append(lam)
        tau = min(1.0, tau * 1.5)
        if gain <= tol * (1.0 + abs(lam)):
            converged = True
            break
    value = -lam
    if not (-1e-9 <= value <= 2 * d * kappa + 1e-9):
        raise ConvergenceError(f"chi~ estimate {value} escaped [0, 2dk]",
                               trace=trace[-50:])
    return VarSolution(value, Field(box, V), R, it, converged,
                       {"lambda": lam, "ascent_trace": trace[-25:],
                        "max_feasibility_gap": max(feas) if feas else 0.0})


@dataclass(frozen=True)
class ShapeResult:
    """Centered optimal potential and eigenfunction, with the mass radius."""

    V_star: Field
    w_star: Field
    r_table: dict
    chi_tilde: float
    max_multiplicity: int


def _center_profile(values: np.ndarray, box: Box, fill: float):
    """Translate so the argmax sits at the origin; exterior gets `fill`."""
    flat_max = int(np.argmax(values))
    shift = np.array(box.site_of(flat_max)) - np.array(box.center)
    if not np.any(shift):
        return values, 0
    out = np.full_like(values, fill)
    src = box.offsets() + shift[None, :]
    ok = np.max(np.abs(src), axis=1) <= box.radius
    src_idx = np.ravel_multi_index((src[ok] + box.radius).T, box.shape)
    out[ok] = values[src_idx]
    return out, int(np.max(np.abs(shift)))


def optimal_shapes(kappa: float, rho: float, R: int, d: int = 1,
                   eps_grid=(0.5, 0.2, 0.1, 0.05, 0.01, 0.001)) -> ShapeResult:
    """Optimal potential V* (centered, unique max at 0) and eigenfunction w*
    normalized to w*(0) = 1, plus the table

        r(eps) = min { r >= 0 : ||w*||_2^2 * sum_{|x|_inf > r} w*(x) < eps }.

    A non-unique maximum of V* (beyond a shift) raises the multiplicity
    count rather than an error; callers treat it as a uniqueness warning.
    """
    sol = chi_tilde_d(kappa, rho, R, d=d)
    box = sol.profile.box
    if math.isinf(rho):
        w = np.zeros(box.n_sites)
        w[box.index_of(box.center)] = 1.0
        table = {float(e): 0 for e in eps_grid}
        return ShapeResult(sol.profile, Field(box, w), table, sol.value, 1)

    # polish with dense eigensolves and no interior cut: the ascent's
    # iterative eigenvectors are accurate in norm but not in their
    # exponentially small tails, and V is a log of those tails.  Dropping
    # deep sites to -inf would remove their neighbor terms from the
    # eigenproblem and shift the profile near the support edge by
    # O(rho*exp(-step/2rho)/depth), visible at 1e-3; keeping the whole box
    # costs nothing once the solves are dense and makes the d-dimensional
    # problem the exact tensor of the one-dimensional one.  The start is
    # lifted to a finite floor because the ascent's own profile carries
    # -inf sites that the KKT map could never regrow.
    floor = -26.0 * box.d * rho
    V = np.maximum(np.nan_to_num(sol.profile.values, neginf=floor), floor)
    pair = principal_eigen(Field(box, V), kappa, prefer_dense=True)
    lam = pair.value
    for _ in range(120):
        V_new = _kkt_potential(pair.vector.values ** 2, rho, cut=None)
        pair = principal_eigen(Field(box, V_new), kappa, prefer_dense=True)
        both = np.isfinite(V) & np.isfinite(V_new)
        gap = float(np.max(np.abs(V_new[both] - V[both])))
        V, lam = V_new, pair.value
        if gap < 1e-10 * (1.0 + rho):
            break

    V, _ = _center_profile(V, box, -math.inf)
    pair = principal_eigen(Field(box, V), kappa, prefer_dense=True)
    w = pair.vector.values
    origin = box.index_of(box.center)
    if w[origin] <= 0:
        raise ConvergenceError("eigenfunction vanished at the centered max")
    w = w / w[origin]
    vmax = np.max(V)
    multiplicity = int(np.count_nonzero(V >= vmax - 1e-9))

    norm2 = float(np.sum(w * w))
    dist = np.max(np.abs(box.offsets()), axis=1)
    table = {}
    for eps in eps_grid:
        r_val = None
        for r in range(0, box.radius + 1):
            tail = float(np.sum(w[dist > r]))
            if norm2 * tail < eps:
                r_val = r
                break
        table[float(eps)] = r_val if r_val is not None else box.radius
    return ShapeResult(Field(box, V), Field(box, w), table, -lam,
                       multiplicity)


@dataclass(frozen=True)
class RateIRResult:
    value: float
    divergent: bool
    levels: list


def rate_IR_bounded(phi, gamma: float, R: float, d: int = 1,
                    base_cells: int = 64, levels: int = 3) -> RateIRResult:
    """Riemann-sum rate integral of a bounded nonpositive profile on the cube
    [-R, R]^d: the integral of |phi|^(-gamma/(1-gamma)), with the gamma = 0
    branch returning the measure of the support of phi.

    phi is a callable taking an (n, d) array of points.  The sum is evaluated
    on `levels` dyadically refined center-point grids; a sequence that keeps
    growing by more than a factor 2 per refinement is reported divergent
    (value +inf), matching a non-integrable singularity.
    """
    if not (0.0 <= gamma < 1.0):
        raise ConfigError("gamma must lie in [0, 1)")
    if R <= 0:
        raise ConfigError("R must be positive")
    power = gamma / (1.0 - gamma)
    vals = []
    for lev in range(levels):
        cells = base_cells * 2 ** lev
        edges = np.linspace(-R, R, cells + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        grids = np.meshgrid(*([centers] * d), indexing="ij")
        pts = np.stack([g.reshape(-1) for g in grids], axis=1)
        f = np.asarray(phi(pts), dtype=float)
        if f.shape != (pts.shape[0],):
            raise ConfigError("phi must return one value per point")
        if np.any(f > 1e-12):
            raise ConfigError("phi must be <= 0")
        h_d = (2.0 * R / cells) ** d
        if gamma == 0.0:
            vals.append(h_d * float(np.count_nonzero(f != 0.0)))
            continue
        with np.errstate(divide="ignore"):
            integrand = np.where(f != 0.0, np.abs(f) ** (-power), 0.0)
        vals.append(h_d * float(np.sum(integrand)))
    growing = all(b > 2.0 * a for a, b in zip(vals, vals[1:]) if a > 0)
    if gamma > 0.0 and growing and len(vals) >= 2 and vals[-1] > vals[0]:
        return RateIRResult(math.inf, True, vals)
    return RateIRResult(vals[-1], False, vals)
