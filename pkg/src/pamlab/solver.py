"""Time evolution of the lattice Cauchy problem du/dt = kappa*Delta(u) + xi*u
and Monte Carlo evaluation of its Feynman-Kac representation.

The default stepper is a Lie splitting alternating the exact diagonal growth
e^{xi*dt} with an exact diffusion substep e^{kappa*L*dt} on the live domain
{xi > -inf}.  Splitting is then the only source of time error: halving dt
exhibits first order on noncommuting data and the scheme is exact for
constant potentials and for single-site domains.  Solutions grow like
e^{t*max(xi)}, so the evolution carries a running log scale instead of
risking overflow; snapshots expose both the scaled field and the scale.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, NumericFailure, StabilityError
from .lattice import Box, Field, laplacian_matrix
from .potentials import PotentialSpec, field_rng, sample_field

__all__ = [
    "EvolutionConfig",
    "WalkConfig",
    "Snapshot",
    "MassResult",
    "MomentTable",
    "evolve",
    "total_mass",
    "feynman_kac",
    "moment_ensemble",
    "suggested_radius",
]

STEPPERS = ("split-exponential", "explicit")

_RESCALE_HI = 1e150
_RESCALE_LO = 1e-150
_DENSE_LIMIT = 1500


@dataclass(frozen=True)
class EvolutionConfig:
    """Settings of one forward run.

    Parameters
    ----------
    kappa : float
        Positive diffusion constant.
    t_end : float
        Positive final time.
    snapshot_times : tuple of float
        Strictly increasing, positive, bounded by t_end.  Empty means a
        single snapshot at t_end.
    stepper : {"split-exponential", "explicit"}
    dt_max : float
        Upper bound on the time step.  The split stepper additionally caps
        dt at 0.25/(2d*kappa + max xi_+); the explicit stepper takes dt_max
        literally and fails if it violates its stability bound.
    """

    kappa: float
    t_end: float
    snapshot_times: tuple = ()
    stepper: str = "split-exponential"
    dt_max: float = 0.05

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if self.stepper not in STEPPERS:
            raise ConfigError(f"stepper must be one of {STEPPERS}")
        if not self.dt_max > 0:
            raise ConfigError("dt_max must be positive")
        times = tuple(float(t) for t in self.snapshot_times)
        if not times:
            times = (float(self.t_end),)
        if any(t <= 0 for t in times) or any(
            b <= a for a, b in zip(times, times[1:])
        ):
            raise ConfigError("snapshot times must be positive and increasing")
        if times[-1] > self.t_end * (1 + 1e-12):
            raise ConfigError("snapshot times must not exceed t_end")
        object.__setattr__(self, "snapshot_times", times)


@dataclass(frozen=True)
class WalkConfig:
    """Monte Carlo walk settings: path count, seed, and endpoint handling.

    Mode "free" estimates the total mass E_0 exp{int xi}; mode "pinned"
    additionally requires X_t = target and estimates u(t, target) for the
    delta initial condition.
    """

    kappa: float
    n_paths: int
    seed: int
    mode: str = "free"
    target: tuple = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if int(self.n_paths) < 1:
            raise ConfigError("n_paths must be at least 1")
        if self.mode not in ("free", "pinned"):
            raise ConfigError("mode must be 'free' or 'pinned'")
        if self.mode == "pinned" and self.target is None:
            raise ConfigError("pinned mode needs a target site")
        object.__setattr__(self, "n_paths", int(self.n_paths))
        if self.target is not None:
            object.__setattr__(self, "target", tuple(int(c) for c in self.target))


class MassResult(NamedTuple):
    mass: float
    log_mass: float


@dataclass(frozen=True)
class Snapshot:
    """The solution at one time, stored as scaled * e^{log_scale}.

    The scaled field stays within floating range; reconstruct raw values
    only when they are representable, and prefer log_values otherwise.
    """

    time: float
    scaled: Field
    log_scale: float

    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.scaled.values * math.exp(self.log_scale)

    def log_values(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.scaled.values) + self.log_scale

    def value_at(self, site) -> float:
        return float(self.values()[self.scaled.box.index_of(site)])

    def log_value_at(self, site) -> float:
        return float(self.log_values()[self.scaled.box.index_of(site)])

    def mass(self) -> MassResult:
        s = float(np.sum(self.scaled.values))
        log_mass = -math.inf if s <= 0 else math.log(s) + self.log_scale
        with np.errstate(over="ignore"):
            return MassResult(float(np.exp(log_mass)), log_mass)


def total_mass(u) -> MassResult:
    """Total mass U = sum_x u(x) with its log, for a Field or a Snapshot."""
    if isinstance(u, Snapshot):
        return u.mass()
    if np.any(u.values < 0):
        raise ConfigError("total_mass expects a nonnegative field")
    s = float(np.sum(u.values))
    return MassResult(s, math.log(s) if s > 0 else -math.inf)


def suggested_radius(d: int, kappa: float, t: float) -> int:
    """Box radius capturing the walk's reach up to time t: the drift bound
    2d*kappa*t plus six standard deviations."""
    reach = 2 * d * kappa * t
    return int(math.ceil(reach + 6.0 * math.sqrt(max(reach, 1e-12))))


@lru_cache(maxsize=8)
def _lap_eigh(d: int, radius: int, boundary: str):
    L = laplacian_matrix(Box(d, radius, boundary)).toarray()
    lam, Q = np.linalg.eigh(L)
    return lam, Q


def _diffusion_step(kappa, live, box, n_live):
    """Return apply(h, u): the action of e^{kappa*L*h} on the live domain.

    Full small boxes reuse a cached eigendecomposition of L; restricted or
    large domains fall back to a per-call factorization or to Krylov-free
    expm action.
    """
    full = n_live == box.n_sites
    if full and box.n_sites <= _DENSE_LIMIT:
        lam, Q = _lap_eigh(box.d, box.radius, box.boundary)

        def apply(h, u):
            return Q @ (np.exp(kappa * h * lam) * (Q.T @ u))

        return apply
    Lsub = laplacian_matrix(box)[live][:, live]
    if n_live <= _DENSE_LIMIT:
        lam, Q = np.linalg.eigh(Lsub.toarray())

        def apply(h, u):
            return Q @ (np.exp(kappa * h * lam) * (Q.T @ u))

        return apply
    from scipy.sparse.linalg import expm_multiply

    A = (kappa * Lsub).tocsc()

    def apply(h, u):
        return expm_multiply(A * h, u)

    return apply


def evolve(xi: Field, u0: Field, cfg: EvolutionConfig) -> list:
    """Solve du/dt = kappa*Delta(u) + xi*u from u0; snapshots at cfg times.

    Sites with xi = -inf are absorbing: u drops to zero there immediately
    (initial mass on them is discarded) and the diffusion substep runs on
    the complementary live domain with zero boundary condition, so a single
    live site evolves exactly.  The scaled solution is renormalized
    whenever its maximum leaves [1e-150, 1e150] and the accumulated factor
    moves into the snapshot's log scale.
    """
    box = xi.box
    if u0.box != box:
        raise ConfigError("xi and u0 must live on the same box")
    if np.any(u0.values < 0) or not np.all(np.isfinite(u0.values)):
        raise ConfigError("u0 must be nonnegative and finite")
    live = np.isfinite(xi.values)
    n_live = int(np.count_nonzero(live))
    if n_live == 0:
        return [Snapshot(t, Field(box, np.zeros(box.n_sites)), 0.0)
                for t in cfg.snapshot_times]

    v = xi.values[live]
    u = u0.values[live].copy()
    vmax_pos = max(0.0, float(np.max(v)))
    d = box.d
    if cfg.stepper == "explicit":
        bound = 1.0 / (2 * d * cfg.kappa + vmax_pos)
        if cfg.dt_max > bound * (1 + 1e-12):
            raise StabilityError(
                f"explicit step {cfg.dt_max} exceeds the stability bound "
                f"{bound:.6g} = 1/(2d*kappa + max xi_+)"
            )
        dt = cfg.dt_max
        Lsub = (cfg.kappa * laplacian_matrix(box)[live][:, live]).tocsr()
        apply_step = None
    else:
        dt = min(cfg.dt_max, 0.25 / (2 * d * cfg.kappa + vmax_pos))
        apply_step = _diffusion_step(cfg.kappa, live, box, n_live)

    snaps = []
    log_scale = 0.0
    t_now = 0.0
    step_no = 0
    for t_snap in cfg.snapshot_times:
        span = t_snap - t_now
        n_steps = max(1, int(math.ceil(span / dt - 1e-12)))
        h = span / n_steps
        if cfg.stepper != "explicit":
            # shift the diagonal growth by its peak so the multiplier never
            # overflows; the shift rides on the log scale exactly
            shift = max(0.0, float(np.max(v)) * h)
            growth = np.exp(v * h - shift)
        for _ in range(n_steps):
            step_no += 1
            if cfg.stepper == "explicit":
                u = u + h * (Lsub @ u + v * u)
            else:
                u = apply_step(h, growth * u)
                log_scale += shift
                # the exponential action is exact up to round-off; tiny
                # negative entries would leak sign into later log scales
                np.maximum(u, 0.0, out=u)
            m = float(np.max(u)) if u.size else 0.0
            if not math.isfinite(m):
                raise NumericFailure(
                    f"overflow/NaN at step {step_no} (t = {t_now:.6g})"
                )
            if m > _RESCALE_HI or (0.0 < m < _RESCALE_LO):
                u /= m
                log_scale += math.log(m)
            t_now += h
        vals = np.zeros(box.n_sites)
        vals[live] = u
        snaps.append(Snapshot(float(t_snap), Field(box, vals), log_scale))
        t_now = t_snap
    return snaps


def feynman_kac(xi: Field, t: float, x_target, cfg: WalkConfig) -> tuple:
    """Monte Carlo of the path representation; returns (estimate, std error).

    Walks start at the origin with jump rate 2d*kappa and uniform neighbor
    choice.  Free mode averages exp{int_0^t xi(X_s) ds}; pinned mode keeps
    only paths with X_t = x_target.  Paths that touch a -inf site, or leave
    a zero-boundary box, contribute 0.
    """
    if not (0 <= t < math.inf):
        raise ConfigError("t must be finite and nonnegative")
    box = xi.box
    origin = np.zeros(box.d, dtype=np.int64)
    if not box.contains(origin):
        raise ConfigError("the walk starts at the origin, which is outside the box")
    if cfg.mode == "pinned":
        target = np.asarray(x_target if x_target is not None else cfg.target,
                            dtype=np.int64)
        if target.shape != (box.d,):
            raise ConfigError("target site has the wrong dimension")
    rng = field_rng(cfg.seed)
    n = cfg.n_paths
    d, R = box.d, box.radius
    rate = 2.0 * d * cfg.kappa
    side = box.side
    center = np.asarray(box.center, dtype=np.int64)

    pos = np.tile(origin - center, (n, 1))  # center-relative coordinates
    t_el = np.zeros(n)
    S = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    running = np.ones(n, dtype=bool)

    xi_flat = xi.values

    def flat_of(rel):
        return np.ravel_multi_index(tuple((rel + R).T), box.shape)

    while np.any(running):
        idx = np.where(running)[0]
        waits = rng.exponential(1.0 / rate, size=idx.size)
        t_next = t_el[idx] + waits
        seg = np.minimum(t_next, t) - t_el[idx]
        S[idx] += xi_flat[flat_of(pos[idx])] * seg

        finish = t_next >= t
        running[idx[finish]] = False
        movers = idx[~finish]
        t_el[movers] = t_next[~finish]
        if movers.size == 0:
            continue
        axes = rng.integers(0, d, size=movers.size)
        signs = rng.integers(0, 2, size=movers.size) * 2 - 1
        pos[movers, axes] += signs
        if box.boundary == "periodic":
            pos[movers] = (pos[movers] + R) % side - R
            landed = flat_of(pos[movers])
            dead = ~np.isfinite(xi_flat[landed])
        else:
            out = np.any(np.abs(pos[movers]) > R, axis=1)
            landed = flat_of(np.where(out[:, None], 0, pos[movers]))
            dead = out | ~np.isfinite(xi_flat[landed])
        killed = movers[dead]
        alive[killed] = False
        running[killed] = False

    with np.errstate(over="ignore"):
        w = np.where(alive, np.exp(S), 0.0)
    if cfg.mode == "pinned":
        w = np.where(np.all(pos == (target - center), axis=1), w, 0.0)
    est = float(np.mean(w))
    se = float(np.std(w, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return est, se


@dataclass(frozen=True)
class MomentTable:
    """Empirical annealed moments of the homogeneous solution at the origin.

    lambda_hat[i, j] = log of the p_list[i]-th sample moment of u(t_j, 0),
    with bootstrap percentile bounds and the effective sample size of each
    weighted average.  log_u holds the raw per-realization log values so
    downstream checks can reweight without re-solving.
    """

    p_list: tuple
    times: tuple
    lambda_hat: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    ess: np.ndarray
    warnings: tuple
    log_u: np.ndarray


def moment_ensemble(spec: PotentialSpec, box: Box, cfg: EvolutionConfig,
                    p_list, n_realizations: int, seed: int,
                    bootstrap: int = 200, threads: int = 1) -> MomentTable:
    """Estimate Lambda_p(t) = log <u(t,0)^p> over an i.i.d. ensemble.

    Every realization evolves the flat initial condition u0 = 1 and records
    log u(t, 0) at each snapshot time; realization i draws its field from
    the (seed, i) substream, so the ensemble is reproducible under any
    scheduling.  threads sizes a worker pool over realizations and cannot
    change the result: rows are assigned by index.  Moments come from
    log-sum-exp averages; a bootstrap over realizations gives percentile
    intervals, and any (p, t) cell whose effective sample size drops below
    10 carries a warning.
    """
    p_arr = np.asarray(sorted(float(p) for p in p_list))
    if p_arr.size == 0 or np.any(p_arr <= 0):
        raise ConfigError("p_list must hold positive exponents")
    n = int(n_realizations)
    if n < 2:
        raise ConfigError("need at least 2 realizations")
    if not box.contains(np.zeros(box.d, dtype=int)):
        raise ConfigError("the box must contain the origin")

    u0 = Field(box, np.ones(box.n_sites))
    origin = box.index_of((0,) * box.d)
    times = cfg.snapshot_times

    def _one(i):
        xi = sample_field(spec, box, seed, index=i)
        if not math.isfinite(xi.values[origin]):
            return np.full(len(times), -math.inf)
        snaps = evolve(xi, u0, cfg)
        return np.array([s.log_value_at((0,) * box.d) for s in snaps])

    log_u = np.empty((n, len(times)))
    workers = max(1, int(threads))
    if workers == 1:
        for i in range(n):
            log_u[i] = _one(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, row in enumerate(pool.map(_one, range(n))):
                log_u[i] = row

    n_p, n_t = p_arr.size, len(times)
    lam = np.empty((n_p, n_t))
    lo = np.empty((n_p, n_t))
    hi = np.empty((n_p, n_t))
    ess = np.empty((n_p, n_t))
    warnings = []
    brng = field_rng(seed, n)  # substream disjoint from the realizations
    boot_idx = brng.integers(0, n, size=(int(bootstrap), n))
    for i, p in enumerate(p_arr):
        a = p * log_u
        lam[i] = logsumexp(a, axis=0) - math.log(n)
        boots = logsumexp(a[boot_idx], axis=1) - math.log(n)
        lo[i] = np.percentile(boots, 2.5, axis=0)
        hi[i] = np.percentile(boots, 97.5, axis=0)
        shift = np.max(a, axis=0, keepdims=True)
        shift = np.where(np.isfinite(shift), shift, 0.0)
        w = np.exp(a - shift)
        with np.errstate(invalid="ignore"):
            ess[i] = np.sum(w, axis=0) ** 2 / np.sum(w * w, axis=0)
        for j in range(n_t):
            if not ess[i, j] >= 10.0:
                warnings.append(
                    f"p={p:g} t={times[j]:g}: effective sample size "
                    f"{ess[i, j]:.1f} < 10"
                )
    return MomentTable(tuple(p_arr.tolist()), times, lam, lo, hi, ess,
                       tuple(warnings), log_u)
