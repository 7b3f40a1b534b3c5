"""Time-dependent potential driven by a Poisson cloud of independent walks.

The potential is gamma times the walker occupation numbers, centered by its
mean nu*gamma, and the solution starts from the flat state.  Moments of
u(t,0) admit two independent routes: a direct ensemble over catalyst
realizations, and the path representation in which p walks from the origin
drag an auxiliary field w behind them and are rewarded for sitting where w
has grown.  The closed-form probes (the double-exponential scale lambda_p*
and the small/large diffusion limits of lambda_p) come from the rank-one
spectral problem and need no simulation.

Everything here lives on a torus: the Poisson field of independent walks is
exactly stationary there, so equilibrium claims are testable rather than
approximate.  Callers pick the torus large enough that wrap-around stays
below their tolerance; suggested_torus encodes the reach bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericFailure
from .lattice import Box, Field
from .potentials import field_rng
from .solver import Snapshot, _diffusion_step, suggested_radius
from .spectral import green_function_origin, mu_of_r

__all__ = [
    "CatalystState",
    "CatalystTrajectory",
    "FKMoment",
    "MomentEstimate",
    "LambdaStar",
    "LambdaLimits",
    "suggested_torus",
    "simulate_catalysts",
    "evolve_catalytic",
    "fk_moment",
    "catalytic_moments",
    "lambda_star_probe",
    "lambda_limits",
]

_RESCALE_HI = 1e150
_RESCALE_LO = 1e-150
_EVENT_CHUNK = 1 << 16


def suggested_torus(d: int, kappa: float, rho: float, t: float) -> Box:
    """Periodic box whose side is at least twice the larger of the reactant
    and catalyst reach bounds at time t."""
    r = max(suggested_radius(d, kappa, t), suggested_radius(d, rho, t))
    return Box(d, r, "periodic")


@dataclass(frozen=True)
class CatalystState:
    """A marked torus: walker positions plus the model constants.

    positions holds one row per walker (offsets in [-R, R]^d); occupation
    numbers are whatever multiset the rows form.  equilibrium() draws them
    i.i.d. Poisson(nu) per site, which the independent-walk dynamics on the
    torus preserves exactly.
    """

    box: Box
    positions: np.ndarray
    nu: float
    rho: float
    gamma: float

    def __post_init__(self):
        if self.box.boundary != "periodic":
            raise ConfigError("catalysts live on a torus (periodic box)")
        if self.nu < 0 or self.rho < 0 or self.gamma < 0:
            raise ConfigError("nu, rho, gamma must be nonnegative")
        pos = np.asarray(self.positions, dtype=np.int64)
        if pos.size == 0:
            pos = pos.reshape(0, self.box.d)
        if pos.ndim != 2 or pos.shape[1] != self.box.d:
            raise ConfigError("positions must be an (n, d) integer array")
        if pos.size and np.max(np.abs(pos)) > self.box.radius:
            raise ConfigError("walker outside the torus")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def equilibrium(cls, box: Box, nu: float, rho: float, gamma: float,
                    seed: int, index: int = 0) -> "CatalystState":
        rng = field_rng(seed, index).spawn(2)[0]
        counts = rng.poisson(nu, size=box.n_sites)
        pos = np.repeat(box.offsets(), counts, axis=0)
        return cls(box, pos, nu, rho, gamma)

    def counts(self) -> np.ndarray:
        flat = np.ravel_multi_index(
            tuple((self.positions + self.box.radius).T), self.box.shape)
        return np.bincount(flat, minlength=self.box.n_sites).astype(float)


@dataclass(frozen=True)
class CatalystTrajectory:
    """One realization of the walker dynamics up to max(t_grid).

    fields carries gamma * occupation at each requested time; the event
    arrays record every jump (time, vacated flat site, entered flat site)
    so the evolution can freeze the potential exactly between jumps.
    """

    state: CatalystState
    t_grid: tuple
    fields: tuple
    event_times: np.ndarray
    event_from: np.ndarray
    event_to: np.ndarray
    initial_counts: np.ndarray

    @property
    def n_events(self) -> int:
        return len(self.event_times)

    def counts_at(self, t: float) -> np.ndarray:
        """Occupation numbers at time t, replayed from the event log."""
        if t < 0 or t > self.t_grid[-1] + 1e-12:
            raise ConfigError("t outside the simulated horizon")
        k = int(np.searchsorted(self.event_times, t, side="right"))
        c = self.initial_counts.copy()
        np.subtract.at(c, self.event_from[:k], 1.0)
        np.add.at(c, self.event_to[:k], 1.0)
        return c


def simulate_catalysts(state: CatalystState, t_grid, seed: int,
                       index: int = 0) -> CatalystTrajectory:
    """Exact-event simulation of the independent walks.

    Each walker jumps at rate 2*d*rho to a uniform neighbor, so the
    superposition is a Poisson stream of rate 2*d*rho*n thinned uniformly
    over walkers.  Event times are drawn in bounded chunks, never all at
    once, and the walker count is conserved by construction.
    """
    times = tuple(sorted(float(t) for t in t_grid))
    if not times or times[0] < 0:
        raise ConfigError("t_grid must hold nonnegative times")
    t_end = times[-1]
    box = state.box
    d = box.d
    rng = field_rng(seed, index).spawn(2)[1]
    n_walk = len(state.positions)
    rate = 2.0 * d * state.rho * n_walk

    ev_t, ev_from, ev_to = [], [], []
    counts = state.counts()
    initial_counts = counts.copy()
    fields = []
    grid_idx = 0
    pos = state.positions.copy()
    side = box.side
    radius = box.radius

    def snap_until(t_now):
        nonlocal grid_idx
        while grid_idx < len(times) and times[grid_idx] <= t_now + 1e-15:
            fields.append(Field(box, state.gamma * counts.copy()))
            grid_idx += 1

    t_cur = 0.0
    while rate > 0.0 and t_cur < t_end:
        waits = rng.exponential(1.0 / rate, size=_EVENT_CHUNK)
        stamps = t_cur + np.cumsum(waits)
        keep = int(np.searchsorted(stamps, t_end, side="right"))
        stamps = stamps[:keep]
        walkers = rng.integers(0, n_walk, size=keep)
        moves = rng.integers(0, 2 * d, size=keep)
        for j in range(keep):
            snap_until(stamps[j])
            k = walkers[j]
            old = np.ravel_multi_index(tuple(pos[k] + radius), box.shape)
            axis, sign = divmod(moves[j], 2)
            pos[k, axis] = (pos[k, axis] + (1 if sign else -1)
                            + radius) % side - radius
            new = np.ravel_multi_index(tuple(pos[k] + radius), box.shape)
            counts[old] -= 1.0
            counts[new] += 1.0
            ev_t.append(stamps[j])
            ev_from.append(old)
            ev_to.append(new)
        if keep < _EVENT_CHUNK:
            break
        t_cur = stamps[-1]
    snap_until(t_end)

    return CatalystTrajectory(
        state=state,
        t_grid=times,
        fields=tuple(fields),
        event_times=np.asarray(ev_t, dtype=float),
        event_from=np.asarray(ev_from, dtype=np.int64),
        event_to=np.asarray(ev_to, dtype=np.int64),
        initial_counts=initial_counts,
    )


def evolve_catalytic(traj: CatalystTrajectory, kappa: float, t_end: float,
                     dt_max: float = 0.05, snapshot_times=None) -> list:
    """Flat-start solution of the centered equation along one trajectory.

    Between consecutive jumps the potential gamma*counts - nu*gamma is
    frozen, so each interval is handled by exponential splitting with the
    frozen diagonal; kappa = 0 reduces to the exact per-site exponential
    of the integrated occupation.
    """
    if kappa < 0:
        raise ConfigError("kappa must be nonnegative")
    if t_end <= 0 or t_end > traj.t_grid[-1] + 1e-12:
        raise ConfigError("t_end must lie inside the simulated horizon")
    snaps = (tuple(sorted(float(s) for s in snapshot_times))
             if snapshot_times else (float(t_end),))
    if snaps[0] <= 0 or snaps[-1] > t_end + 1e-12:
        raise ConfigError("snapshot times must lie in (0, t_end]")
    box = traj.state.box
    n = box.n_sites
    center = nu_gamma = traj.state.nu * traj.state.gamma

    if kappa > 0:
        apply_step = _diffusion_step(kappa, np.ones(n, dtype=bool), box, n)
    else:
        def apply_step(h, u):
            return u

    cuts = np.unique(np.concatenate((
        traj.event_times[traj.event_times < t_end],
        np.asarray(snaps, dtype=float),
        [0.0, t_end],
    )))
    counts = traj.initial_counts.copy()
    ev_idx = 0
    u = np.ones(n)
    log_scale = 0.0
    out = []
    snap_set = set(snaps)
    for a, b in zip(cuts[:-1], cuts[1:]):
        while ev_idx < traj.n_events and traj.event_times[ev_idx] <= a + 1e-15:
            counts[traj.event_from[ev_idx]] -= 1.0
            counts[traj.event_to[ev_idx]] += 1.0
            ev_idx += 1
        v = traj.state.gamma * counts - center
        span = b - a
        steps = max(1, int(math.ceil(span / dt_max)))
        h = span / steps
        vmax = float(np.max(v))
        for _ in range(steps):
            shift = max(0.0, vmax * h)
            u = apply_step(h, np.exp(v * h - shift) * u)
            log_scale += shift
            m = float(np.max(u))
            if not math.isfinite(m):
                raise NumericFailure(
                    f"overflow/NaN inside interval [{a}, {b}]")
            if m > _RESCALE_HI or 0.0 < m < _RESCALE_LO:
                u /= m
                log_scale += math.log(m)
        for s in snaps:
            if s in snap_set and abs(s - b) <= 1e-12:
                out.append(Snapshot(s, Field(box, u.copy()), log_scale))
                snap_set.discard(s)
    return out


def _torus_modes(box: Box, rho: float) -> np.ndarray:
    """Eigenvalues of rho*Delta on the torus, laid out for rfftn."""
    freqs = []
    for a in range(box.d):
        m = box.side
        k = (np.fft.rfftfreq(m) if a == box.d - 1 else np.fft.fftfreq(m))
        freqs.append(2.0 * (np.cos(2.0 * math.pi * k * 1.0) - 1.0))
    grids = np.meshgrid(*freqs, indexing="ij")
    return rho * sum(grids)


def _walk_paths(rng, d: int, kappa: float, p: int, t_end: float, side: int):
    """Jump times and positions of p rate-2*d*kappa walks from the origin.

    Returns (times, walker, axis_moves) with times sorted; positions are
    replayed by the caller so the torus wrap stays in one place.
    """
    all_t, all_w, all_m = [], [], []
    jump = 2.0 * d * kappa
    for i in range(p):
        if jump == 0.0:
            continue
        t = 0.0
        while True:
            t += rng.exponential(1.0 / jump)
            if t >= t_end:
                break
            all_t.append(t)
            all_w.append(i)
            all_m.append(rng.integers(0, 2 * d))
    order = np.argsort(all_t, kind="stable")
    return (np.asarray(all_t, dtype=float)[order],
            np.asarray(all_w, dtype=np.int64)[order],
            np.asarray(all_m, dtype=np.int64)[order])


@dataclass(frozen=True)
class FKMoment:
    """Path-representation estimate of <u(t,0)^p> on a time grid.

    integrals holds the raw per-bundle values of int sum_i w(s, X_i(s)) ds
    at each grid time, so callers can re-weight or bootstrap without
    re-simulating.
    """

    p: int
    times: tuple
    estimate: np.ndarray
    se: np.ndarray
    lambda_hat: float
    lambda_hat_ci: tuple
    lambda_star_hat: float
    n_paths: int
    integrals: np.ndarray


def _fit_lambda(times: np.ndarray, est: np.ndarray):
    """Slope of log-moment over the latter half of the horizon."""
    mask = times >= times[-1] / 2.0 - 1e-12
    if int(np.sum(mask)) < 2 or np.any(est[mask] <= 0):
        return math.nan
    return float(np.polyfit(times[mask], np.log(est[mask]), 1)[0])


def _fit_lambda_star(times: np.ndarray, est: np.ndarray):
    """Slope of log log moment, defined only where the moment tops e^e."""
    mask = est > math.e ** math.e
    if int(np.sum(mask)) < 2:
        return None
    return float(np.polyfit(times[mask], np.log(np.log(est[mask])), 1)[0])


def fk_moment(box: Box, nu: float, gamma: float, rho: float, kappa: float,
              p: int, t_grid, n_paths: int, seed: int, dt_w: float = 0.01,
              bootstrap: int = 200, index_offset: int = 0) -> FKMoment:
    """Monte Carlo over p-walk bundles of the auxiliary-field functional.

    For each bundle the w-equation (diffusion rho, source gamma at the
    current walk positions feeding on 1 + w) is advanced by Strang steps:
    exact torus diffusion in Fourier space, exact diagonal affine update at
    the sources.  The reward integral is accumulated by the trapezoid rule
    on the substep grid and the bundle contributes exp(nu*gamma*integral).
    Determinism is per (seed, index_offset + bundle).
    """
    if box.boundary != "periodic":
        raise ConfigError("the w-field lives on a torus (periodic box)")
    if min(nu, gamma, rho, kappa) < 0:
        raise ConfigError("rates must be nonnegative")
    if p < 1 or p != int(p):
        raise ConfigError("p must be a positive integer")
    times = tuple(sorted(float(t) for t in t_grid))
    if not times or times[0] <= 0:
        raise ConfigError("t_grid must hold positive times")
    n_paths = int(n_paths)
    if n_paths < 2:
        raise ConfigError("need at least 2 path bundles")
    t_end = times[-1]
    d = box.d
    side = box.side
    radius = box.radius
    shape = box.shape
    modes = _torus_modes(box, rho)
    grid_arr = np.asarray(times)

    integrals = np.empty((n_paths, len(times)))
    for b in range(n_paths):
        rng = field_rng(seed, index_offset + b)
        jt, jw, jm = _walk_paths(rng, d, kappa, int(p), t_end, side)
        cuts = np.unique(np.concatenate((jt, grid_arr, [0.0, t_end])))
        pos = np.zeros((int(p), d), dtype=np.int64)
        w = np.zeros(shape)
        acc = 0.0
        out_idx = 0
        ev = 0
        for a, bnd in zip(cuts[:-1], cuts[1:]):
            while ev < len(jt) and jt[ev] <= a + 1e-15:
                k = jw[ev]
                axis, sign = divmod(int(jm[ev]), 2)
                pos[k, axis] = (pos[k, axis] + (1 if sign else -1)
                                + radius) % side - radius
                ev += 1
            src = tuple((pos + radius).T)
            uniq, mult = np.unique(np.ravel_multi_index(src, shape),
                                   return_counts=True)
            span = bnd - a
            steps = max(1, int(math.ceil(span / dt_w)))
            h = span / steps
            half = np.exp(0.5 * h * modes)
            # source sites with m walkers obey w' = gamma*m*(1 + w), whose
            # exact step is w -> (1 + w) e^{gamma m h} - 1
            fac = np.expm1(gamma * mult * h)
            axes = tuple(range(d))
            for _ in range(steps):
                g0 = float(np.sum(w[src]))
                w = np.fft.irfftn(half * np.fft.rfftn(w), s=shape, axes=axes)
                flat = w.reshape(-1)
                flat[uniq] = flat[uniq] * (1.0 + fac) + fac
                w = np.fft.irfftn(half * np.fft.rfftn(w), s=shape, axes=axes)
                acc += 0.5 * h * (g0 + float(np.sum(w[src])))
            if not math.isfinite(acc):
                raise NumericFailure(
                    f"w-solver failure in bundle seed ({seed}, "
                    f"{index_offset + b})")
            while out_idx < len(times) and abs(times[out_idx] - bnd) <= 1e-12:
                integrals[b, out_idx] = acc
                out_idx += 1
        if out_idx != len(times):
            raise NumericFailure(
                f"grid time missed in bundle seed ({seed}, "
                f"{index_offset + b})")

    vals = np.exp(nu * gamma * integrals)
    est = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(n_paths)

    lam = _fit_lambda(grid_arr, est)
    brng = np.random.default_rng(seed + 0x51ED270)
    idx = brng.integers(0, n_paths, size=(int(bootstrap), n_paths))
    slopes = np.array([_fit_lambda(grid_arr, vals[rows].mean(axis=0))
                       for rows in idx])
    slopes = slopes[np.isfinite(slopes)]
    ci = ((float(np.percentile(slopes, 2.5)),
           float(np.percentile(slopes, 97.5)))
          if len(slopes) else (math.nan, math.nan))
    return FKMoment(int(p), times, est, se, lam, ci,
                    _fit_lambda_star(grid_arr, est), n_paths, integrals)


@dataclass(frozen=True)
class MomentEstimate:
    """Two independent routes to <u(t,0)^p> with their growth fits."""

    p: int
    times: tuple
    direct: np.ndarray
    direct_se: np.ndarray
    fk: np.ndarray
    fk_se: np.ndarray
    agree_3se: tuple
    lambda_hat: float
    lambda_hat_ci: tuple
    lambda_star_hat: float


def catalytic_moments(box: Box, nu: float, gamma: float, rho: float,
                      kappa: float, p: int, t_grid, n: int, seed: int,
                      dt_max: float = 0.02, dt_w: float = 0.01,
                      ) -> MomentEstimate:
    """Direct ensemble vs path representation on a shared time grid.

    The direct route averages u(t,0)^p over n catalyst realizations
    (substreams 0..n-1); the path route runs fk_moment on substreams
    n..2n-1, so the two estimators are independent.  agree_3se records the
    per-time |difference| <= 3 * combined-SE comparison.
    """
    times = tuple(sorted(float(t) for t in t_grid))
    n = int(n)
    if n < 2:
        raise ConfigError("need at least 2 realizations")
    origin = box.index_of(box.center)
    raw = np.empty((n, len(times)))
    for i in range(n):
        state = CatalystState.equilibrium(box, nu, rho, gamma, seed, index=i)
        traj = simulate_catalysts(state, times, seed, index=i)
        snaps = evolve_catalytic(traj, kappa, times[-1], dt_max=dt_max,
                                 snapshot_times=times)
        for j, sn in enumerate(snaps):
            raw[i, j] = sn.values()[origin] ** p
    direct = raw.mean(axis=0)
    direct_se = raw.std(axis=0, ddof=1) / math.sqrt(n)

    fk = fk_moment(box, nu, gamma, rho, kappa, p, times, n, seed,
                   dt_w=dt_w, index_offset=n)
    agree = tuple(
        bool(abs(direct[j] - fk.estimate[j])
             <= 3.0 * math.hypot(direct_se[j], fk.se[j]))
        for j in range(len(times)))
    return MomentEstimate(int(p), times, direct, direct_se, fk.estimate,
                          fk.se, agree, fk.lambda_hat, fk.lambda_hat_ci,
                          fk.lambda_star_hat)


@dataclass(frozen=True)
class LambdaStar:
    """Predicted double-exponential growth scale and the regime it implies."""

    d: int
    rho: float
    gamma: float
    p: int
    value: float
    regime: str
    threshold: float


def lambda_star_probe(d: int, rho: float, gamma: float, p: int) -> LambdaStar:
    """lambda_p* = rho * mu(p*gamma/rho): positive means the p-th moment
    grows double-exponentially (strong catalysis).  Neither kappa nor nu
    enters; in d <= 2 any positive coupling is strong."""
    if rho <= 0:
        raise ConfigError("rho must be positive")
    if gamma < 0:
        raise ConfigError("gamma must be nonnegative")
    if p < 1 or p != int(p):
        raise ConfigError("p must be a positive integer")
    value = rho * mu_of_r(p * gamma / rho, d).mu
    g = green_function_origin(d)
    regime = ("strongly p-catalytic" if value > 0 else "weakly p-catalytic")
    return LambdaStar(d, rho, gamma, int(p), value, regime, g["r_d"])


@dataclass(frozen=True)
class LambdaLimits:
    """Closed-form ends of lambda_p(kappa)/p in the weakly catalytic regime.

    small_kappa is the kappa -> 0 limit of lambda_p(kappa)/p; the large end
    is stated multiplied by kappa.  lambda1_shift carries the death-rate
    generalization: replacing the nu*gamma death rate by delta shifts
    lambda_1 by nu*gamma - delta.
    """

    d: int
    nu: float
    gamma: float
    rho: float
    p: int
    small_kappa: float
    large_kappa_scaled: float
    polaron_constant: float
    verdicts: tuple
    death_rate: float
    lambda1_shift: float
    r_d: float


def lambda_limits(d: int, nu: float, gamma: float, rho: float, p: int,
                  polaron_constant: float = None,
                  death_rate: float = None) -> LambdaLimits:
    """Theorem-level limits of the moment growth rate in kappa.

    Requires the weakly catalytic window 0 < p*gamma/rho < r_d (so d >= 3);
    outside it the regime error cites the positive lambda_p*.  The d = 3
    large-kappa value needs the polaron constant, which is an external
    input here, not something this package computes.
    """
    if d < 3:
        raise ConfigError("kappa-limits need a transient dimension (d >= 3)")
    if rho <= 0 or gamma <= 0:
        raise ConfigError("rho and gamma must be positive")
    if p < 1 or p != int(p):
        raise ConfigError("p must be a positive integer")
    r_d = green_function_origin(d)["r_d"]
    ratio = p * gamma / rho
    if not ratio < r_d:
        star = rho * mu_of_r(ratio, d).mu
        raise ConfigError(
            f"outside the weakly catalytic regime: p*gamma/rho = {ratio:.6g}"
            f" >= r_{d} = {r_d:.6g}, lambda_p* = {star:.6g} > 0")
    small = nu * gamma * ratio / (r_d - ratio)
    if d >= 4:
        large = nu * gamma ** 2 / r_d
        verdicts = ("p-intermittent for small kappa",
                    "large-kappa leading term identical for all p")
    else:
        if polaron_constant is None:
            raise ConfigError("d = 3 large-kappa limit needs the polaron "
                              "constant (external input)")
        large = (nu * gamma ** 2 / r_d
                 + math.sqrt(p) * math.sqrt(nu * gamma ** 2 / rho)
                 * polaron_constant)
        verdicts = ("p-intermittent for small kappa",
                    "p-intermittent for large kappa (sqrt(p) term)")
    shift = nu * gamma - death_rate if death_rate is not None else None
    return LambdaLimits(d, nu, gamma, rho, int(p), small, large,
                        polaron_constant, verdicts, death_rate, shift, r_d)
