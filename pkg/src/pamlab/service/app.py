"""HTTP face of the laboratory: one POST endpoint per experiment kind.

Endpoints route straight into the library and format the results; nothing
numerical is decided here.  Configuration problems surface as 400 (or 422
when the request body itself fails validation), numerical failures as 500
with the exception class named, and diagnostics that ran but cannot decide
set "inconclusive" in an otherwise normal response.
"""
from __future__ import annotations

import math
import os

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..catalytic import (catalytic_moments, fk_moment, lambda_limits,
                         lambda_star_probe, suggested_torus)
from ..errors import ConfigError, PamError
from ..intermittency import (annealed_check, correlation_profile,
                             extract_islands, quenched_check)
from ..lattice import Box, Field, constant_field, delta_field
from ..potentials import sample_field
from ..scaling import alpha_annealed, alpha_quenched, classify
from ..solver import (EvolutionConfig, Snapshot, evolve, moment_ensemble,
                      suggested_radius)
from ..spectral import mu_of_r, principal_eigen
from ..variational import chi_d, chi_tilde_d, optimal_shapes
from . import schemas as sc
from .schemas import json_float

__all__ = ["create_app", "app"]


def _threads(requested) -> int:
    env = os.environ.get("PAM_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"PAM_THREADS must be an integer, got {env!r}") from exc
    if requested is not None:
        return max(1, int(requested))
    return os.cpu_count() or 1


def _box(d: int, R, boundary: str, kappa: float, t_end: float) -> Box:
    radius = R if R is not None else suggested_radius(d, kappa, t_end)
    return Box(d, radius, boundary)


def _clean(diag: dict) -> dict:
    """Keep only plain scalars of a diagnostics dict."""
    out = {}
    for k, v in diag.items():
        if isinstance(v, (np.generic,)):
            v = v.item()
        if isinstance(v, (bool, int, float, str)):
            out[k] = json_float(v) if isinstance(v, float) else v
    return out


def _opt_list(a) -> list:
    return [json_float(v) for v in np.asarray(a, dtype=float).ravel()]


def create_app() -> FastAPI:
    app = FastAPI(title="pamlab", version=__version__)

    @app.exception_handler(ConfigError)
    def _config_error(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": "config", "detail": str(exc)})

    @app.exception_handler(PamError)
    def _numeric_error(request, exc):
        return JSONResponse(status_code=500,
                            content={"error": type(exc).__name__,
                                     "detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/solve", response_model=sc.SolveResponse)
    def solve(req: sc.SolveRequest):
        spec = req.potential.to_spec()
        t_end = max(req.t_grid)
        box = _box(req.d, req.R, req.boundary_mode, req.kappa, t_end)
        xi = sample_field(spec, box, req.seed)
        u0 = constant_field(box, 1.0) if req.u0 == "one" else delta_field(box)
        cfg = EvolutionConfig(req.kappa, t_end, tuple(req.t_grid),
                              req.stepper, req.dt_max)
        snaps = evolve(xi, u0, cfg)
        table = []
        for s in snaps:
            m = s.mass()
            table.append(sc.SolveRow(t=s.time, U=json_float(m.mass),
                                     logU=json_float(m.log_mass)))
        return sc.SolveResponse(
            xi=sc.FieldModel.from_field(xi),
            snapshots=[sc.SnapshotModel(
                time=s.time,
                log_u=sc.FieldModel.from_field(Field(box, s.log_values())))
                for s in snaps],
            table=table,
            seed=req.seed,
        )

    @app.post("/moments", response_model=sc.MomentsResponse)
    def moments(req: sc.MomentsRequest):
        spec = req.potential.to_spec()
        t_end = max(req.t_grid)
        box = _box(req.d, req.R, req.boundary_mode, req.kappa, t_end)
        cfg = EvolutionConfig(req.kappa, t_end, tuple(req.t_grid),
                              dt_max=req.dt_max)
        mt = moment_ensemble(spec, box, cfg, req.p_list, req.n, req.seed,
                             bootstrap=req.bootstrap,
                             threads=_threads(req.threads))
        return sc.MomentsResponse(
            p_list=list(mt.p_list),
            times=list(mt.times),
            lambda_hat=[_opt_list(row) for row in mt.lambda_hat],
            ci_low=[_opt_list(row) for row in mt.ci_low],
            ci_high=[_opt_list(row) for row in mt.ci_high],
            ess=[_opt_list(row) for row in mt.ess],
            warnings=list(mt.warnings),
            inconclusive=bool(mt.warnings),
        )

    @app.post("/eigen", response_model=sc.EigenResponse)
    def eigen(req: sc.EigenRequest):
        V = req.field.to_field()
        res = principal_eigen(V, req.kappa, tol=req.tol)
        return sc.EigenResponse(
            value=res.value, residual=res.residual,
            iterations=res.iterations, method=res.method,
            multiplicity=res.multiplicity,
            vector=sc.FieldModel.from_field(res.vector),
        )

    @app.post("/mu", response_model=sc.MuResponse)
    def mu(req: sc.MuRequest):
        rows = []
        for r in req.r_list:
            res = mu_of_r(r, req.d, method=req.method)
            det = res.details
            if res.method == "box":
                residual = abs(det["extrapolated"] - det["eigenvalues"][-1])
            elif res.method == "both":
                residual = abs(res.mu - det["box"]["extrapolated"])
            else:
                residual = abs(det.get("residual", 0.0))
            rows.append(sc.MuRow(r=res.r, mu=res.mu, method=res.method,
                                 residual=residual))
        return sc.MuResponse(d=req.d, rows=rows)

    @app.post("/variational", response_model=sc.VariationalResponse)
    def variational(req: sc.VariationalRequest):
        rho = math.inf if req.rho is None else req.rho
        if req.which != "chitilde" and not math.isfinite(rho):
            raise ConfigError("rho = inf is supported for which=chitilde only")
        if req.which == "shapes":
            kw = {}
            if req.eps_grid is not None:
                kw["eps_grid"] = tuple(req.eps_grid)
            shapes = optimal_shapes(req.kappa, rho, req.R, req.d, **kw)
            return sc.VariationalResponse(
                which="shapes", value=shapes.chi_tilde,
                diagnostics={"max_multiplicity": shapes.max_multiplicity,
                             "radius": req.R},
                V_star=sc.FieldModel.from_field(shapes.V_star),
                w_star=sc.FieldModel.from_field(shapes.w_star),
                r_table=[[float(e), float(r)]
                         for e, r in sorted(shapes.r_table.items(),
                                            reverse=True)],
            )
        fn = chi_d if req.which == "chi" else chi_tilde_d
        sol = fn(req.kappa, rho, req.R, req.d)
        diag = {"radius": sol.radius, "iterations": sol.iterations,
                "converged": sol.converged}
        diag.update(_clean(sol.diagnostics))
        return sc.VariationalResponse(
            which=req.which, value=sol.value, diagnostics=diag,
            profile=sc.FieldModel.from_field(sol.profile),
        )

    @app.post("/scaling", response_model=sc.ScalingResponse)
    def scaling(req: sc.ScalingRequest):
        g = req.eta.gamma
        eta = lambda s: s ** g
        eta_star = 0.0 if g < 1 else (1.0 if g == 1 else math.inf)
        growth_class = classify(g, eta_star)

        def alpha_fn(s):
            return alpha_annealed(eta, req.d, s)["alpha"]

        rows = []
        for t in req.t_grid:
            a = alpha_annealed(eta, req.d, t)["alpha"]
            at = (alpha_quenched(alpha_fn, req.d, t)["alpha_tilde"]
                  if t > 1 else None)
            rows.append(sc.ScalingRow(t=t, alpha=a, alpha_tilde=at))
        return sc.ScalingResponse(gamma=g, eta_star=json_float(eta_star),
                                  growth_class=growth_class, rows=rows)

    @app.post("/islands", response_model=sc.IslandsResponse)
    def islands(req: sc.IslandsRequest):
        xi = req.xi.to_field()
        lu = req.log_u.to_field()
        finite = np.isfinite(lu.values)
        if not finite.any():
            raise ConfigError("log_u carries no mass")
        top = float(lu.values[finite].max())
        snap = Snapshot(req.t, Field(lu.box, np.exp(lu.values - top)), top)
        shapes = optimal_shapes(req.kappa, req.rho, req.var_radius, xi.box.d)
        rep = extract_islands(xi, snap, shapes.V_star, shapes.w_star,
                              req.eps, req.window_R, delta_min=req.delta_min,
                              k_max=req.k_max, t=req.t)
        return sc.IslandsResponse(
            centers=[list(c) for c in rep.centers],
            local_max_log_u=[float(v) for v in rep.local_max_log_u],
            captured_in_ball=[float(v) for v in rep.captured_in_ball],
            potential_shape_dist=[json_float(v)
                                  for v in rep.potential_shape_dist],
            solution_shape_dist=[json_float(v)
                                 for v in rep.solution_shape_dist],
            captured_fraction=rep.captured_fraction,
            min_pairwise_distance=json_float(rep.min_pairwise_distance),
            n_islands=rep.n_islands,
            capture_radius=rep.capture_radius,
            window_radius=rep.window_radius,
            target_met=rep.target_met,
        )

    @app.post("/check/annealed", response_model=sc.AnnealedResponse)
    def check_annealed(req: sc.AnnealedRequest):
        spec = req.potential.to_spec()
        box = None
        if req.R is not None:
            box = Box(req.d, req.R, "dirichlet")
        rep = annealed_check(spec, req.kappa, req.p, tuple(req.t_grid),
                             req.n, seed=req.seed, d=req.d, box=box,
                             chi=req.chi, var_radius=req.var_radius,
                             dt_max=req.dt_max)
        return sc.AnnealedResponse(
            p=rep.p, times=list(rep.times),
            lambda_hat=_opt_list(rep.lambda_hat),
            ci_low=_opt_list(rep.ci_low), ci_high=_opt_list(rep.ci_high),
            predicted=_opt_list(rep.predicted),
            diff_rate=_opt_list(rep.diff_rate),
            trend_to_zero=rep.trend_to_zero, chi=rep.chi,
            sandwich_lower_ok=[bool(b) for b in rep.sandwich_lower_ok],
            sandwich_upper_ok=[bool(b) for b in rep.sandwich_upper_ok],
            warnings=list(rep.warnings),
            inconclusive=bool(rep.warnings),
        )

    @app.post("/check/quenched", response_model=sc.QuenchedResponse)
    def check_quenched(req: sc.QuenchedRequest):
        spec = req.potential.to_spec()
        rep = quenched_check(spec, req.kappa, tuple(req.t_grid), req.seed,
                             d=req.d, chi_tilde=req.chi_tilde,
                             var_radius=req.var_radius, dt_max=req.dt_max)
        return sc.QuenchedResponse(
            seed=rep.seed, times=list(rep.times),
            h=[float(v) for v in rep.h],
            log_u_rate=[float(v) for v in rep.log_u_rate],
            gap=[float(v) for v in rep.gap],
            diff=[float(v) for v in rep.diff],
            trend_to_zero=rep.trend_to_zero, chi_tilde=rep.chi_tilde,
            boundary_fraction=[float(v) for v in rep.boundary_fraction],
            inconclusive=False,
        )

    @app.post("/check/correlation", response_model=sc.CorrelationResponse)
    def check_correlation(req: sc.CorrelationRequest):
        spec = req.potential.to_spec()
        box = None
        if req.R is not None:
            box = Box(req.d, req.R, "periodic")
        rep = correlation_profile(spec, req.kappa, req.t, req.x_list, req.n,
                                  seed=req.seed, d=req.d, box=box,
                                  var_radius=req.var_radius, rho=req.rho,
                                  bootstrap=req.bootstrap, dt_max=req.dt_max)
        return sc.CorrelationResponse(
            t=rep.t, x_list=[list(x) for x in rep.x_list],
            c_hat=_opt_list(rep.c_hat),
            ci_low=_opt_list(rep.ci_low), ci_high=_opt_list(rep.ci_high),
            limit_sqrt_measure=[float(v) for v in rep.limit_sqrt_measure],
            limit_measure=[float(v) for v in rep.limit_measure],
            inconclusive=rep.inconclusive,
        )

    @app.post("/catalytic", response_model=sc.CatalyticResponse)
    def catalytic(req: sc.CatalyticRequest):
        rows: list[sc.CatalyticRow] = []
        agree: dict[str, list[bool]] = {}
        lam: dict = {}
        lam_ci: dict = {}
        lam_star: dict = {}
        side = None
        if req.mode != "limits":
            if req.L is not None:
                torus = Box(req.d, (req.L - 1) // 2, "periodic")
            else:
                torus = suggested_torus(req.d, req.kappa, req.rho,
                                        max(req.t_grid))
            side = torus.side
            for p in req.p_list:
                key = str(p)
                if req.mode == "moments":
                    me = catalytic_moments(torus, req.nu, req.gamma, req.rho,
                                           req.kappa, p, tuple(req.t_grid),
                                           req.n, req.seed,
                                           dt_max=req.dt_max, dt_w=req.dt_w)
                    for j, t in enumerate(me.times):
                        rows.append(sc.CatalyticRow(
                            p=p, t=t, route="direct",
                            estimate=json_float(me.direct[j]),
                            se=json_float(me.direct_se[j])))
                    for j, t in enumerate(me.times):
                        rows.append(sc.CatalyticRow(
                            p=p, t=t, route="fk",
                            estimate=json_float(me.fk[j]),
                            se=json_float(me.fk_se[j])))
                    agree[key] = [bool(b) for b in me.agree_3se]
                    lam[key] = json_float(me.lambda_hat)
                    ci = me.lambda_hat_ci
                    lam_ci[key] = None if ci is None else [json_float(c)
                                                           for c in ci]
                    ls = me.lambda_star_hat
                    lam_star[key] = None if ls is None else json_float(ls)
                else:
                    fm = fk_moment(torus, req.nu, req.gamma, req.rho,
                                   req.kappa, p, tuple(req.t_grid), req.n,
                                   req.seed, dt_w=req.dt_w)
                    for j, t in enumerate(fm.times):
                        rows.append(sc.CatalyticRow(
                            p=p, t=t, route="fk",
                            estimate=json_float(fm.estimate[j]),
                            se=json_float(fm.se[j])))
                    lam[key] = json_float(fm.lambda_hat)
                    ci = fm.lambda_hat_ci
                    lam_ci[key] = None if ci is None else [json_float(c)
                                                           for c in ci]
                    ls = fm.lambda_star_hat
                    lam_star[key] = None if ls is None else json_float(ls)

        prediction = []
        for p in req.p_list:
            probe = lambda_star_probe(req.d, req.rho, req.gamma, p)
            limits = note = None
            if req.d >= 3:
                try:
                    lim = lambda_limits(req.d, req.nu, req.gamma, req.rho, p,
                                        polaron_constant=req.polaron_constant,
                                        death_rate=req.death_rate)
                    limits = {
                        "small_kappa": lim.small_kappa,
                        "large_kappa_scaled": lim.large_kappa_scaled,
                        "verdicts": list(lim.verdicts),
                        "r_d": lim.r_d,
                        "lambda1_shift": lim.lambda1_shift,
                    }
                except ConfigError as exc:
                    note = str(exc)
            else:
                note = "closed-form kappa limits need d >= 3"
            prediction.append(sc.CatalyticPrediction(
                p=p, lambda_star=probe.value, regime=probe.regime,
                threshold=json_float(probe.threshold),
                limits=limits, limits_note=note))

        return sc.CatalyticResponse(
            mode=req.mode, L=side, rows=rows, agree_3se=agree,
            lambda_hat=lam, lambda_hat_ci=lam_ci, lambda_star_hat=lam_star,
            prediction=prediction)

    return app


app = create_app()
