"""Spectral machinery: principal eigenpairs of kappa*Delta + V, the lattice
Green function at the origin, and the top of the spectrum of Delta + r*delta_0.

The d-dimensional Brillouin-zone integrals behind the Green function and the
resolvent factorize exactly into a one-dimensional Laplace-type integral,

    R_mu(0,0) = int_0^inf e^{-mu s} [e^{-2s} I_0(2s)]^d ds,

because the angular integrals tensorize into a Bessel factor per axis.  All
quadratures below run on that representation with fixed composite
Gauss-Legendre meshes, so refinement behaviour is observable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import integrate, special
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, ConvergenceError, MethodDisagreement
from .lattice import Box, Field, laplacian_matrix, restrict_domain

__all__ = [
    "SpectralResult",
    "RankOneResult",
    "principal_eigen",
    "rayleigh_quotient",
    "green_function_origin",
    "mu_of_r",
]


@dataclass(frozen=True)
class SpectralResult:
    """Top eigenpair of kappa*Delta + V on the finite domain of V."""

    value: float
    vector: Field
    residual: float
    iterations: int
    method: str
    multiplicity: int = 1


def _power_top(A: sp.csr_matrix, sigma: float, tol: float, maxiter: int):
    """Power iteration on the PSD shift A + sigma*I; returns (lam, vec, res, it).

    Convergence target: ||A x - lam x|| <= tol * (|lam| + 1).  Returns None in
    the first slot when the budget is exhausted (caller decides the fallback).
    """
    n = A.shape[0]
    if n == 1:
        lam = float(A[0, 0])
        return lam, np.ones(1), 0.0, 0
    x = np.full(n, 1.0 / math.sqrt(n))
    history = []
    for it in range(1, maxiter + 1):
        y = A @ x + sigma * x
        rho = float(x @ y)
        res = float(np.linalg.norm(y - rho * x))
        lam = rho - sigma
        if res <= tol * (abs(lam) + 1.0):
            return lam, x, res, it
        ny = float(np.linalg.norm(y))
        if ny == 0.0 or not math.isfinite(ny):
            break
        x = y / ny
        if it % 256 == 0:
            history.append(res)
    return None, x, res, maxiter, history


def _invert_polish(A: sp.csr_matrix, lam: float, x: np.ndarray) -> np.ndarray:
    """Inverse iteration at a shift just above lam, reusing one LU factor.

    A dense symmetric solve is accurate in norm, but eigenvector entries
    below ~1e-16 of the largest are rounding noise.  shift*I - A is a
    strictly diagonally dominant M-matrix, so the shifted solves regenerate
    the small entries from their neighbors at relative precision; callers
    taking logs of the eigenvector rely on that.  Each step damps the noise
    component by the shift offset over the spectral gap; five steps push it
    below the deepest genuine tail a double can hold.
    """
    from scipy.sparse.linalg import splu

    shift = lam + 1e-9 * (abs(lam) + 1.0)
    try:
        lu = splu((A - shift * sp.identity(A.shape[0], format="csr")).tocsc())
    except RuntimeError:
        return x
    for _ in range(5):
        y = lu.solve(x)
        ny = float(np.linalg.norm(y))
        if ny == 0.0 or not np.all(np.isfinite(y)):
            return x
        x = y / ny
    return x * math.copysign(1.0, x[int(np.argmax(np.abs(x)))])


def principal_eigen(V: Field, kappa: float, tol: float = 1e-10,
                    maxiter: int = 100_000, dense_limit: int = 4000,
                    prefer_dense: bool = False) -> SpectralResult:
    """Principal (largest) eigenvalue and nonnegative eigenfunction of
    kappa*Delta + V on {V > -inf} with zero condition outside.

    Shifted power iteration is the primary path; a dense symmetric solve is
    the fallback when it stalls (only possible below `dense_limit` sites).
    Disconnected domains are solved per component; equal top values across
    components are flagged through `multiplicity` and the component holding
    the smallest site index wins.

    `prefer_dense` skips the iteration on components small enough for a
    dense solve.  Callers needing machine-accurate eigenvector tails ask for
    it explicitly; the iterative residual bounds only the norm, so small
    components carry a much larger relative error.
    """
    if kappa <= 0:
        raise ConfigError("kappa must be positive")
    box = V.box
    dom = restrict_domain(V)
    if dom.is_empty:
        return SpectralResult(
            value=-math.inf,
            vector=Field(box, np.zeros(box.n_sites)),
            residual=0.0,
            iterations=0,
            method="empty",
            multiplicity=0,
        )
    idx = dom.indices
    L = laplacian_matrix(box)
    Lsub = L[idx][:, idx].tocsr()
    A = (kappa * Lsub + sp.diags(dom.values)).tocsr()

    n_comp, labels = connected_components(Lsub, directed=False)
    best = []
    total_iters = 0
    for comp in range(n_comp):
        mask = labels == comp
        Ac = A[mask][:, mask].tocsr()
        if prefer_dense and Ac.shape[0] <= dense_limit:
            w, Q = np.linalg.eigh(Ac.toarray())
            lam, x = float(w[-1]), Q[:, -1]
            if Ac.shape[0] > 1:
                x = _invert_polish(Ac, lam, x)
            res = float(np.linalg.norm(Ac @ x - lam * x))
            best.append((lam, mask, x, res, 0, "dense"))
            continue
        vmin = float(np.min(dom.values[mask]))
        sigma = 4.0 * box.d * kappa + max(0.0, -vmin) + 1.0
        out = _power_top(Ac, sigma, tol, maxiter)
        if out[0] is None:
            _, x, res, its, history = out
            if Ac.shape[0] <= dense_limit:
                w, Q = np.linalg.eigh(Ac.toarray())
                lam, x = float(w[-1]), Q[:, -1]
                res = float(np.linalg.norm(Ac @ x - lam * x))
                best.append((lam, mask, x, res, its, "dense"))
                total_iters += its
                continue
            raise ConvergenceError(
                f"power iteration stalled at residual {res:.3e} on a "
                f"{Ac.shape[0]}-site component", trace=history,
            )
        lam, x, res, its = out
        best.append((lam, mask, x, res, its, "power"))
        total_iters += its

    lam_top = max(b[0] for b in best)
    tied = [b for b in best if b[0] >= lam_top - 1e-9 * (abs(lam_top) + 1.0)]
    # deterministic tie-break: component containing the smallest site index
    winner = min(tied, key=lambda b: int(idx[b[1]][0]))
    lam, mask, x, res, its, method = winner

    # Perron vector of the component: fix the sign, zero-extend, normalize
    x = x * math.copysign(1.0, x[int(np.argmax(np.abs(x)))])
    x = np.maximum(x, 0.0) if np.min(x) > -1e-12 else x
    full = np.zeros(box.n_sites)
    full[idx[mask]] = x
    full /= np.linalg.norm(full)
    return SpectralResult(
        value=lam,
        vector=Field(box, full),
        residual=res,
        iterations=total_iters,
        method=method,
        multiplicity=len(tied),
    )


def rayleigh_quotient(V: Field, kappa: float, f: Field, tol: float = 1e-8) -> float:
    """<(kappa*Delta + V) f, f> for an l2-normalized f supported in {V > -inf}."""
    if f.box != V.box:
        raise ConfigError("f and V must live on the same box")
    nrm = float(np.linalg.norm(f.values))
    if abs(nrm - 1.0) > tol:
        raise ConfigError(f"f must be l2-normalized, got ||f|| = {nrm}")
    singular = ~np.isfinite(V.values)
    if np.any(f.values[singular] != 0.0):
        raise ConfigError("f must vanish on the -inf set of V")
    L = laplacian_matrix(V.box)
    quad = kappa * float(f.values @ (L @ f.values))
    pot = float(np.sum(V.values[~singular] * f.values[~singular] ** 2))
    return quad + pot


def _gauss_panels(f, a: float, b: float, panels: int, order: int = 16) -> float:
    """Composite Gauss-Legendre quadrature of a vectorized integrand."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1] - edges[0])
    nodes = (mid[:, None] + half * x[None, :]).reshape(-1)
    weights = (half * np.broadcast_to(w, (panels, x.size))).reshape(-1)
    return float(f(nodes) @ weights)


def _bessel_kernel(s: np.ndarray, d: int) -> np.ndarray:
    return special.ive(0, 2.0 * s) ** d


def _green_value(d: int, panels: int) -> float:
    # head on [0,1]; tail via s = u^{-beta}, beta = 2/(d-2), which flattens
    # the s^{-d/2} decay into a smooth integrand on (0,1]
    beta = 2.0 / (d - 2.0)

    def head(s):
        return _bessel_kernel(s, d)

    def tail(u):
        s = u ** (-beta)
        return _bessel_kernel(s, d) * beta * u ** (-beta - 1.0)

    return _gauss_panels(head, 0.0, 1.0, panels) + _gauss_panels(tail, 0.0, 1.0, panels)


def green_function_origin(d: int, panels: int = 48) -> dict:
    """Green function G_d(0) of the discrete Laplacian, and r_d = 1/G_d(0).

    Computed at the given mesh and at twice the mesh; the relative difference
    is reported so refinement stability is part of the result.  Recurrent
    dimensions d <= 2 return +inf with a flag.
    """
    if d < 1:
        raise ConfigError("d must be >= 1")
    if d <= 2:
        return {"d": d, "value": math.inf, "r_d": 0.0, "divergent": True,
                "refinement_delta": 0.0}
    coarse = _green_value(d, panels)
    fine = _green_value(d, 2 * panels)
    return {
        "d": d,
        "value": fine,
        "coarse": coarse,
        "refinement_delta": abs(fine - coarse) / abs(fine),
        "r_d": 1.0 / fine,
        "divergent": False,
    }


def _resolvent_origin(mu: float, d: int) -> float:
    """R_mu(0,0) for mu > 0, via the Bessel representation."""
    val, _ = integrate.quad(
        lambda s: math.exp(-mu * s) * float(special.ive(0, 2.0 * s)) ** d,
        0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=400,
    )
    return val


@dataclass(frozen=True)
class RankOneResult:
    """Top of the spectrum of Delta + r*delta_0."""

    r: float
    d: int
    mu: float
    method: str
    details: dict


_BOX_RADII = {1: (16, 24, 36, 54), 2: (10, 15, 23, 35), 3: (8, 12, 18, 27)}


def _box_eigenvalue(r: float, d: int, radius: int) -> float:
    box = Box(d, radius, "dirichlet")
    A = laplacian_matrix(box).tolil()
    origin = box.index_of(box.center)
    A[origin, origin] += r
    A = A.tocsr()
    n = box.n_sites
    if d == 1:
        from scipy.linalg import eigh_tridiagonal

        w = eigh_tridiagonal(A.diagonal(), np.ones(n - 1),
                             select="i", select_range=(n - 1, n - 1),
                             eigvals_only=True)
        return float(w[0])
    from scipy.sparse.linalg import eigsh

    w = eigsh(A, k=1, which="LA", tol=1e-10, maxiter=5000,
              return_eigenvectors=False)
    return float(w[0])


def _aitken(seq):
    """One pass of Aitken delta-squared over a sequence."""
    out = []
    for x0, x1, x2 in zip(seq, seq[1:], seq[2:]):
        denom = (x2 - x1) - (x1 - x0)
        out.append(x2 if denom == 0 else x2 - (x2 - x1) ** 2 / denom)
    return out


def mu_of_r(r: float, d: int, method: str = "resolvent",
                 box_radii=None, tol: float = 1e-10,
                 agree_tol: float = 1e-4) -> RankOneResult:
    """mu(r): largest spectral value of Delta + r*delta_0 on Z^d.

    method "resolvent" solves r * R_mu(0,0) = 1 by bisection (exact zero
    below the coupling threshold r_d in transient dimensions); method "box"
    extrapolates top eigenvalues on growing zero-Dirichlet boxes and serves
    as the oracle; "both" runs the two and insists they agree.
    """
    if r < 0:
        raise ConfigError("r must be nonnegative")
    if method not in ("resolvent", "box", "both"):
        raise ConfigError("method must be resolvent, box, or both")
    if method == "both":
        res = mu_of_r(r, d, "resolvent", tol=tol)
        boxed = mu_of_r(r, d, "box", box_radii=box_radii, tol=tol)
        if abs(res.mu - boxed.mu) > agree_tol:
            raise MethodDisagreement(
                f"mu({r}) methods disagree beyond {agree_tol}",
                {"resolvent": res.mu, "box": boxed.mu},
            )
        return RankOneResult(r, d, res.mu, "both",
                             {"resolvent": res.details, "box": boxed.details})

    if method == "box":
        radii = tuple(box_radii) if box_radii is not None else _BOX_RADII.get(d)
        if radii is None or len(radii) < 3:
            raise ConfigError("box method needs at least 3 radii")
        seq = [_box_eigenvalue(r, d, R) for R in radii]
        acc = _aitken(seq)
        while len(acc) >= 3:
            acc = _aitken(acc)
        extrapolated = acc[-1] if acc else seq[-1]
        return RankOneResult(r, d, max(0.0, extrapolated), "box",
                             {"radii": list(radii), "eigenvalues": seq,
                              "extrapolated": extrapolated})

    if r == 0.0:
        return RankOneResult(r, d, 0.0, "resolvent", {"note": "mu(0) = 0"})
    details = {}
    if d >= 3:
        g = green_function_origin(d)
        details["r_d"] = g["r_d"]
        if r <= g["r_d"]:
            details["note"] = "below threshold, bound state absent"
            return RankOneResult(r, d, 0.0, "resolvent", details)
    # h(mu) = r * R_mu - 1 is strictly decreasing with h(r) <= 0 (R_mu <= 1/mu);
    # the lower end is a Rayleigh bound, h > 0 there (or diverges as mu -> 0)
    lo, hi = max(0.0, r - 2.0 * d), float(r)
    if lo > 0 and r * _resolvent_origin(lo, d) - 1.0 < 0:
        lo = 0.0
    it = 0
    while hi - lo > tol and it < 400:
        mid = 0.5 * (lo + hi)
        if r * _resolvent_origin(mid, d) - 1.0 > 0:
            lo = mid
        else:
            hi = mid
        it += 1
    mu = 0.5 * (lo + hi)
    details.update({"iterations": it, "bracket": [lo, hi],
                    "residual": r * _resolvent_origin(mu, d) - 1.0})
    return RankOneResult(r, d, mu, "resolvent", details)
