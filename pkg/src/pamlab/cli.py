"""Experiment orchestration from the command line.

Every compute subcommand is a thin client of the HTTP service: it assembles
a request from flags (optionally seeded from a JSON config file), posts it,
and writes the response out as diff-able artifacts.  By default the service
runs in process; --server points the same client at a remote instance.  No
number is produced here, so a run through the CLI and a direct library call
agree exactly.

Each run directory holds config.json (the effective configuration), a
results.csv with a fixed column order, result.json, any snapshot files, and
manifest.json recording the config hash, tool version, wall time, and file
list.  Identical config hash and seed reproduce the numeric artifacts byte
for byte.

Exit codes: 0 success, 2 configuration error, 3 numeric failure (or an
unreachable server), 4 diagnostic ran but was inconclusive.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings

import httpx

from . import __version__

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INCONCLUSIVE = 4

_HASH_EXCLUDED = ("out", "threads")  # results must not depend on these


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------- parsing

def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _sites(text: str) -> list:
    """Comma-separated sites; multi-coordinate sites join with semicolons."""
    out = []
    for part in text.split(","):
        if part == "":
            continue
        coords = [int(c) for c in part.split(";")]
        out.append(coords[0] if len(coords) == 1 else coords)
    return out


def _json_obj(text: str) -> dict:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return obj


def _eta_spec(text: str) -> dict:
    # a bare number is shorthand for the power family
    try:
        return {"form": "power", "gamma": float(text)}
    except ValueError:
        return _json_obj(text)


# ---------------------------------------------------------------- artifacts

def _canonical(cfg: dict) -> str:
    trimmed = {k: v for k, v in cfg.items() if k not in _HASH_EXCLUDED}
    return json.dumps(trimmed, sort_keys=True, separators=(",", ":"))


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode("utf-8")).hexdigest()


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _cell(v, none_as: str):
    return none_as if v is None else v


def _save_snap(model: dict, path: str, time_val=None, seed=None) -> None:
    from .lattice import save_field
    from .service.schemas import FieldModel
    save_field(FieldModel(**model).to_field(), path, time=time_val, seed=seed)


# ---------------------------------------------------------------- client

def _make_client(server):
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    with warnings.catch_warnings():
        # the in-process bridge lives in starlette.testclient; its pending
        # httpx major-version warning is irrelevant to this use
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient
    from .service import create_app
    return TestClient(create_app())


# ------------------------------------------------- subcommand definitions

DEFAULTS = {
    "solve": {
        "potential": None, "kappa": 1.0, "d": 1, "R": None, "L": None,
        "boundary_mode": "dirichlet", "t_grid": [1.0], "u0": "one",
        "seed": 0, "dt_max": 0.05, "stepper": "split-exponential",
        "out": None,
    },
    "moments": {
        "potential": None, "kappa": 1.0, "d": 1, "R": None, "L": None,
        "boundary_mode": "dirichlet", "t_grid": [1.0], "p_list": [1.0],
        "n": 100, "seed": 0, "dt_max": 0.05, "bootstrap": 200,
        "threads": None, "out": None,
    },
    "eigen": {"field": None, "kappa": 1.0, "tol": 1e-10, "out": None},
    "mu": {"r_list": None, "d": 1, "method": "resolvent", "out": None},
    "variational": {
        "kappa": 1.0, "rho": None, "R": 12, "d": 1, "which": "chitilde",
        "eps_grid": None, "out": None,
    },
    "scaling": {"eta": None, "d": 1, "t_grid": None, "out": None},
    "islands": {
        "run": None, "time": None, "eps": 0.05, "R": 3, "delta_min": None,
        "var_radius": 12, "k_max": 100, "out": None,
    },
    "check-annealed": {
        "potential": None, "kappa": 1.0, "p": 1.0, "t_grid": None,
        "n": 100, "seed": 0, "d": 1, "R": None, "L": None, "chi": None,
        "var_radius": 12, "dt_max": 0.05, "out": None,
    },
    "check-quenched": {
        "potential": None, "kappa": 1.0, "t_grid": None, "seed": 0, "d": 1,
        "chi_tilde": None, "var_radius": 12, "dt_max": 0.05, "out": None,
    },
    "check-correlation": {
        "potential": None, "kappa": 1.0, "t": 1.0, "x_list": None,
        "n": 100, "seed": 0, "d": 1, "R": None, "L": None, "var_radius": 12,
        "rho": None, "bootstrap": 200, "dt_max": 0.05, "out": None,
    },
    "catalytic": {
        "mode": "moments", "d": 1, "nu": 1.0, "gamma": 1.0, "rho": 1.0,
        "kappa": 1.0, "p_list": [1], "t_grid": [1.0], "L": None, "n": 100,
        "seed": 0, "dt_max": 0.02, "dt_w": 0.01, "polaron_constant": None,
        "death_rate": None, "out": None,
    },
}


def _radius(cfg: dict):
    if cfg.get("R") is not None and cfg.get("L") is not None:
        raise _UsageError("give either --R (radius) or --L (side), not both")
    if cfg.get("L") is not None:
        L = int(cfg["L"])
        if L < 1 or L % 2 == 0:
            raise _UsageError("L must be a positive odd side length")
        return (L - 1) // 2
    return cfg.get("R")


def _need(cfg: dict, key: str, flag: str):
    if cfg.get(key) is None:
        raise _UsageError(f"missing required field {key!r} (flag {flag})")
    return cfg[key]


def _prep_solve(cfg):
    return "/solve", {
        "potential": _need(cfg, "potential", "--potential"),
        "kappa": cfg["kappa"], "d": cfg["d"], "R": _radius(cfg),
        "boundary_mode": cfg["boundary_mode"], "t_grid": cfg["t_grid"],
        "u0": cfg["u0"], "seed": cfg["seed"], "dt_max": cfg["dt_max"],
        "stepper": cfg["stepper"],
    }


def _prep_moments(cfg):
    return "/moments", {
        "potential": _need(cfg, "potential", "--potential"),
        "kappa": cfg["kappa"], "d": cfg["d"], "R": _radius(cfg),
        "boundary_mode": cfg["boundary_mode"], "t_grid": cfg["t_grid"],
        "p_list": cfg["p_list"], "n": cfg["n"], "seed": cfg["seed"],
        "dt_max": cfg["dt_max"], "bootstrap": cfg["bootstrap"],
        "threads": cfg["threads"],
    }


def _load_snap(path):
    from .errors import SnapshotFormatError
    from .lattice import load_field
    try:
        return load_field(path)
    except (OSError, SnapshotFormatError) as exc:
        raise _UsageError(f"cannot read snapshot {path!r}: {exc}")


def _prep_eigen(cfg):
    from .service.schemas import FieldModel
    field, _header = _load_snap(_need(cfg, "field", "--field"))
    return "/eigen", {
        "field": FieldModel.from_field(field).model_dump(),
        "kappa": cfg["kappa"], "tol": cfg["tol"],
    }


def _prep_mu(cfg):
    return "/mu", {"r_list": _need(cfg, "r_list", "--r"), "d": cfg["d"],
                   "method": cfg["method"]}


def _prep_variational(cfg):
    rho = cfg["rho"]
    if rho is not None and math.isinf(rho):
        rho = None
    return "/variational", {
        "kappa": cfg["kappa"], "rho": rho, "R": cfg["R"], "d": cfg["d"],
        "which": cfg["which"], "eps_grid": cfg["eps_grid"],
    }


def _prep_scaling(cfg):
    return "/scaling", {"eta": _need(cfg, "eta", "--eta"), "d": cfg["d"],
                        "t_grid": _need(cfg, "t_grid", "--t")}


def _prep_islands(cfg):
    from .service.schemas import FieldModel
    run = _need(cfg, "run", "--run")
    try:
        with open(os.path.join(run, "config.json"), encoding="utf-8") as fh:
            src = json.load(fh)
    except OSError as exc:
        raise _UsageError(f"cannot read the solve run: {exc}")
    if src.get("subcommand") != "solve":
        raise _UsageError("--run must point at a solve run directory")
    pot = src.get("potential") or {}
    if pot.get("family") != "double_exponential":
        raise _UsageError("islands needs a double_exponential solve run "
                          "(the comparison shapes are that family's)")
    xi, _ = _load_snap(os.path.join(run, "xi.snap"))
    snaps = []
    for name in sorted(os.listdir(run)):
        if name.startswith("log_u_") and name.endswith(".snap"):
            f, header = _load_snap(os.path.join(run, name))
            snaps.append((float(header["time"]), f))
    if not snaps:
        raise _UsageError("the solve run holds no log_u snapshots")
    want = cfg["time"]
    if want is None:
        t, log_u = max(snaps, key=lambda p: p[0])
    else:
        match = [p for p in snaps if abs(p[0] - want) <= 1e-9 * max(1, abs(want))]
        if not match:
            raise _UsageError(f"no snapshot at t = {want:g}; have "
                              f"{sorted(p[0] for p in snaps)}")
        t, log_u = match[0]
    payload = {
        "xi": FieldModel.from_field(xi).model_dump(),
        "log_u": FieldModel.from_field(log_u).model_dump(),
        "t": t, "kappa": src["kappa"], "rho": pot["params"]["rho"],
        "eps": cfg["eps"], "window_R": cfg["R"],
        "delta_min": cfg["delta_min"], "var_radius": cfg["var_radius"],
        "k_max": cfg["k_max"],
    }
    return "/islands", payload, {"seed": src.get("seed")}


def _prep_check_annealed(cfg):
    return "/check/annealed", {
        "potential": _need(cfg, "potential", "--potential"),
        "kappa": cfg["kappa"], "p": cfg["p"],
        "t_grid": _need(cfg, "t_grid", "--t"), "n": cfg["n"],
        "seed": cfg["seed"], "d": cfg["d"], "R": _radius(cfg),
        "chi": cfg["chi"], "var_radius": cfg["var_radius"],
        "dt_max": cfg["dt_max"],
    }


def _prep_check_quenched(cfg):
    return "/check/quenched", {
        "potential": _need(cfg, "potential", "--potential"),
        "kappa": cfg["kappa"], "t_grid": _need(cfg, "t_grid", "--t"),
        "seed": cfg["seed"], "d": cfg["d"], "chi_tilde": cfg["chi_tilde"],
        "var_radius": cfg["var_radius"], "dt_max": cfg["dt_max"],
    }


def _prep_check_correlation(cfg):
    return "/check/correlation", {
        "potential": _need(cfg, "potential", "--potential"),
        "kappa": cfg["kappa"], "t": cfg["t"],
        "x_list": _need(cfg, "x_list", "--x"), "n": cfg["n"],
        "seed": cfg["seed"], "d": cfg["d"], "R": _radius(cfg),
        "var_radius": cfg["var_radius"], "rho": cfg["rho"],
        "bootstrap": cfg["bootstrap"], "dt_max": cfg["dt_max"],
    }


def _prep_catalytic(cfg):
    return "/catalytic", {
        "mode": cfg["mode"], "d": cfg["d"], "nu": cfg["nu"],
        "gamma": cfg["gamma"], "rho": cfg["rho"], "kappa": cfg["kappa"],
        "p_list": cfg["p_list"], "t_grid": cfg["t_grid"], "L": cfg["L"],
        "n": cfg["n"], "seed": cfg["seed"], "dt_max": cfg["dt_max"],
        "dt_w": cfg["dt_w"], "polaron_constant": cfg["polaron_constant"],
        "death_rate": cfg["death_rate"],
    }


# ------------------------------------------------------- CSV formatting

def _csv_solve(body):
    rows = [[r["t"], _cell(r["U"], "inf"), _cell(r["logU"], "-inf")]
            for r in body["table"]]
    return ["t", "U", "logU"], rows


def _csv_moments(body):
    rows = []
    for i, p in enumerate(body["p_list"]):
        for j, t in enumerate(body["times"]):
            rows.append([p, t,
                         _cell(body["lambda_hat"][i][j], "-inf"),
                         _cell(body["ci_low"][i][j], "-inf"),
                         _cell(body["ci_high"][i][j], "-inf"),
                         _cell(body["ess"][i][j], "nan")])
    return ["p", "t", "lambda_hat", "ci_low", "ci_high", "ess"], rows


def _csv_eigen(body):
    return (["value", "residual", "iterations", "method", "multiplicity"],
            [[body["value"], body["residual"], body["iterations"],
              body["method"], body["multiplicity"]]])


def _csv_mu(body):
    return (["r", "mu", "method", "residual"],
            [[r["r"], r["mu"], r["method"], r["residual"]]
             for r in body["rows"]])


def _csv_variational(body):
    if body["which"] == "shapes":
        return ["eps", "r"], [[e, r] for e, r in body["r_table"]]
    d = body["diagnostics"]
    return (["which", "value", "radius", "iterations", "converged"],
            [[body["which"], body["value"], d.get("radius"),
              d.get("iterations"), d.get("converged")]])


def _csv_scaling(body):
    rows = [[r["t"], r["alpha"], _cell(r["alpha_tilde"], "nan"),
             body["growth_class"]] for r in body["rows"]]
    return ["t", "alpha", "alpha_tilde", "class"], rows


def _csv_islands(body):
    rows = []
    for i in range(body["n_islands"]):
        rows.append([i, ";".join(str(c) for c in body["centers"][i]),
                     body["local_max_log_u"][i],
                     body["captured_in_ball"][i],
                     _cell(body["potential_shape_dist"][i], "inf"),
                     _cell(body["solution_shape_dist"][i], "inf")])
    return (["island", "center", "local_max_log_u", "captured_in_ball",
             "potential_shape_dist", "solution_shape_dist"], rows)


def _csv_check_annealed(body):
    rows = []
    for j, t in enumerate(body["times"]):
        rows.append([t, _cell(body["lambda_hat"][j], "-inf"),
                     _cell(body["ci_low"][j], "-inf"),
                     _cell(body["ci_high"][j], "-inf"),
                     _cell(body["predicted"][j], "-inf"),
                     _cell(body["diff_rate"][j], "-inf"),
                     body["sandwich_lower_ok"][j],
                     body["sandwich_upper_ok"][j]])
    return (["t", "lambda_hat", "ci_low", "ci_high", "predicted",
             "diff_rate", "lower_ok", "upper_ok"], rows)


def _csv_check_quenched(body):
    rows = []
    for j, t in enumerate(body["times"]):
        rows.append([t, body["h"][j], body["log_u_rate"][j], body["gap"][j],
                     body["diff"][j], body["boundary_fraction"][j]])
    return (["t", "h", "log_u_rate", "gap", "diff", "boundary_fraction"],
            rows)


def _csv_check_correlation(body):
    rows = []
    for j, x in enumerate(body["x_list"]):
        rows.append([";".join(str(c) for c in x),
                     _cell(body["c_hat"][j], "nan"),
                     _cell(body["ci_low"][j], "nan"),
                     _cell(body["ci_high"][j], "nan"),
                     body["limit_sqrt_measure"][j],
                     body["limit_measure"][j]])
    return (["x", "c_hat", "ci_low", "ci_high", "limit_sqrt_measure",
             "limit_measure"], rows)


def _csv_catalytic(body):
    rows = [[r["p"], r["t"], r["route"], _cell(r["estimate"], "inf"),
             _cell(r["se"], "inf")] for r in body["rows"]]
    return ["p", "t", "route", "estimate", "se"], rows


# ---------------------------------------------------------- run pipeline

_PREP = {
    "solve": _prep_solve,
    "moments": _prep_moments,
    "eigen": _prep_eigen,
    "mu": _prep_mu,
    "variational": _prep_variational,
    "scaling": _prep_scaling,
    "islands": _prep_islands,
    "check-annealed": _prep_check_annealed,
    "check-quenched": _prep_check_quenched,
    "check-correlation": _prep_check_correlation,
    "catalytic": _prep_catalytic,
}

_CSV = {
    "solve": _csv_solve,
    "moments": _csv_moments,
    "eigen": _csv_eigen,
    "mu": _csv_mu,
    "variational": _csv_variational,
    "scaling": _csv_scaling,
    "islands": _csv_islands,
    "check-annealed": _csv_check_annealed,
    "check-quenched": _csv_check_quenched,
    "check-correlation": _csv_check_correlation,
    "catalytic": _csv_catalytic,
}


def _extras(sub: str, cfg: dict, body: dict, outdir: str):
    """Write snapshot artifacts; return (file names, trimmed result json)."""
    files = []
    result = dict(body)
    if sub == "solve":
        _save_snap(body["xi"], os.path.join(outdir, "xi.snap"),
                   seed=body["seed"])
        files.append("xi.snap")
        for s in body["snapshots"]:
            tag = ("%g" % s["time"]).replace(".", "p").replace("-", "m")
            name = f"log_u_t{tag}.snap"
            _save_snap(s["log_u"], os.path.join(outdir, name),
                       time_val=s["time"], seed=body["seed"])
            files.append(name)
        result.pop("xi")
        result.pop("snapshots")
    elif sub == "eigen":
        _save_snap(body["vector"], os.path.join(outdir, "vector.snap"))
        files.append("vector.snap")
        result.pop("vector")
    elif sub == "variational":
        for key, name in (("profile", "profile.snap"),
                          ("V_star", "V_star.snap"),
                          ("w_star", "w_star.snap")):
            if body.get(key) is not None:
                _save_snap(body[key], os.path.join(outdir, name))
                files.append(name)
                result[key] = name
            else:
                result.pop(key, None)
        # the documented shape: value, profile path, diagnostics
        if "V_star" in result:
            result["profile"] = result.pop("V_star")
    return files, result


def _print_rows(header, rows, limit=12):
    print(",".join(str(h) for h in header))
    for row in rows[:limit]:
        print(",".join(str(c) for c in row))
    if len(rows) > limit:
        print(f"... {len(rows) - limit} more rows in results.csv")


def _run(sub: str, cfg: dict, server) -> int:
    prep = _PREP[sub](cfg)
    path, payload = prep[0], prep[1]
    manifest_extra = prep[2] if len(prep) > 2 else {}

    t0 = time.perf_counter()
    with _make_client(server) as client:
        try:
            resp = client.post(path, json=payload)
        except httpx.HTTPError as exc:
            print(f"server unreachable: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    wall = time.perf_counter() - t0

    if resp.status_code in (400, 422):
        print(_validation_message(resp), file=sys.stderr)
        return EXIT_CONFIG
    if resp.status_code != 200:
        try:
            err = resp.json()
            msg = f"{err.get('error', 'error')}: {err.get('detail', '')}"
        except ValueError:
            msg = resp.text[:500]
        print(f"numeric failure: {msg}", file=sys.stderr)
        return EXIT_NUMERIC
    body = resp.json()

    outdir = cfg.get("out")
    if not outdir:
        seed = cfg.get("seed")
        outdir = f"pam-{sub}" if seed is None else f"pam-{sub}-s{seed}"
    os.makedirs(outdir, exist_ok=True)
    echo = {"subcommand": sub, **{k: v for k, v in cfg.items()}}
    _write_json(os.path.join(outdir, "config.json"), echo)
    header, rows = _CSV[sub](body)
    _write_csv(os.path.join(outdir, "results.csv"), header, rows)
    snap_files, result = _extras(sub, cfg, body, outdir)
    _write_json(os.path.join(outdir, "result.json"), result)
    manifest = {
        "subcommand": sub,
        "config_hash": _config_hash(echo),
        "version": __version__,
        "wall_time_s": round(wall, 3),
        "seed": manifest_extra.get("seed", cfg.get("seed")),
        "files": {"config": "config.json", "csv": "results.csv",
                  "json": "result.json", "snapshots": snap_files},
    }
    _write_json(os.path.join(outdir, "manifest.json"), manifest)

    _print_rows(header, rows)
    print(f"wrote {outdir}/ (hash {manifest['config_hash'][:12]})")
    if body.get("inconclusive"):
        print("diagnostic inconclusive; see result.json warnings",
              file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _validation_message(resp) -> str:
    try:
        detail = resp.json()["detail"]
    except (ValueError, KeyError):
        return f"config error: {resp.text[:500]}"
    if isinstance(detail, str):
        return f"config error: {detail}"
    parts = []
    for item in detail:
        loc = ".".join(str(x) for x in item.get("loc", []) if x != "body")
        parts.append(f"{loc}: {item.get('msg', '')}")
    return "config error: " + "; ".join(parts)


# ------------------------------------------------------------- report

def _cmd_report(dirs: list, out) -> int:
    outdir = out or "pam-report"
    runs = []
    for dpath in dirs:
        try:
            with open(os.path.join(dpath, "manifest.json"),
                      encoding="utf-8") as fh:
                manifest = json.load(fh)
            with open(os.path.join(dpath, "results.csv"), newline="",
                      encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            print(f"config error: cannot read run {dpath!r}: {exc}",
                  file=sys.stderr)
            return EXIT_CONFIG
        if not rows:
            print(f"config error: {dpath!r} has an empty results.csv",
                  file=sys.stderr)
            return EXIT_CONFIG
        runs.append((dpath, manifest, rows[0], rows[1:]))

    os.makedirs(outdir, exist_ok=True)
    if not runs:
        _write_csv(os.path.join(outdir, "merged.csv"),
                   ["seed", "config_hash"], [])
        _write_json(os.path.join(outdir, "merged.json"),
                    {"subcommand": None, "runs": [], "n_rows": 0})
        print(f"wrote {outdir}/ (0 runs)")
        return EXIT_OK

    subs = sorted({m["subcommand"] for _, m, _, _ in runs})
    if len(subs) > 1:
        print(f"config error: cannot merge mixed subcommands {subs}",
              file=sys.stderr)
        return EXIT_CONFIG
    base = runs[0][2]
    for dpath, _m, header, _r in runs[1:]:
        if header != base:
            extra = sorted(set(header) ^ set(base))
            print(f"config error: column mismatch against {runs[0][0]!r} in "
                  f"{dpath!r}; divergent columns: {extra}", file=sys.stderr)
            return EXIT_CONFIG

    merged = []
    for _dpath, manifest, _header, rows in runs:
        for row in rows:
            merged.append(row + [manifest.get("seed"),
                                 manifest["config_hash"]])
    _write_csv(os.path.join(outdir, "merged.csv"),
               base + ["seed", "config_hash"], merged)
    _write_json(os.path.join(outdir, "merged.json"), {
        "subcommand": subs[0],
        "runs": [{"dir": dpath, "config_hash": m["config_hash"],
                  "seed": m.get("seed"), "version": m.get("version")}
                 for dpath, m, _, _ in runs],
        "n_rows": len(merged),
    })
    print(f"wrote {outdir}/ ({len(runs)} runs, {len(merged)} rows)")
    return EXIT_OK


def _cmd_serve(host: str, port: int) -> int:
    try:
        import uvicorn
    except ImportError:
        print("config error: serving needs uvicorn "
              "(pip install 'pamlab[serve]')", file=sys.stderr)
        return EXIT_CONFIG
    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)
    return EXIT_OK


# ------------------------------------------------------------- parser

def _add_common(sp):
    sp.add_argument("--config", help="JSON file with config fields; "
                    "explicit flags override it")
    sp.add_argument("--server", help="base URL of a running service "
                    "(default: in process)")
    sp.add_argument("--out", default=argparse.SUPPRESS,
                    help="output directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pam", description="lattice Anderson model laboratory")
    parser.add_argument("--version", action="version",
                        version=f"pam {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    sp = subs.add_parser("solve", help="evolve one sampled potential")
    _add_common(sp)
    sp.add_argument("--potential", type=_json_obj, default=S)
    sp.add_argument("--kappa", type=float, default=S)
    sp.add_argument("--d", type=int, default=S)
    sp.add_argument("--R", type=int, default=S, help="box radius")
    sp.add_argument("--L", type=int, default=S, help="box side (odd)")
    sp.add_argument("--boundary", dest="boundary_mode",
                    choices=["dirichlet", "periodic"], default=S)
    sp.add_argument("--t", dest="t_grid", type=_floats, default=S,
                    help="snapshot times, comma separated")
    sp.add_argument("--u0", choices=["one", "delta"], default=S)
    sp.add_argument("--seed", type=int, default=S)
    sp.add_argument("--dt-max", dest="dt_max", type=float, default=S)
    sp.add_argument("--stepper", choices=["split-exponential", "explicit"],
                    default=S)

    sp = subs.add_parser("moments", help="annealed moment table")
    _add_common(sp)
    sp.add_argument("--potential", type=_json_obj, default=S)
    sp.add_argument("--kappa", type=float, default=S)
    sp.add_argument("--d", type=int, default=S)
    sp.add_argument("--R", type=int, default=S)
    sp.add_argument("--L", type=int, default=S)
    sp.add_argument("--boundary", dest="boundary_mode",
                    choices=["dirichlet", "periodic"], default=S)
    sp.add_argument("--t", dest="t_grid", type=_floats, default=S)
    sp.add_argument("--p", dest="p_list", type=_floats, default=S)
    sp.add_argument("--n", type=int, default=S)
    sp.add_argument("--seed", type=int, default=S)
    sp.add_argument("--dt-max", dest="dt_max", type=float, default=S)
    sp.add_argument("--bootstrap", type=int, default=S)
    sp.add_argument("--threads", type=int, default=S,
                    help="worker pool size (PAM_THREADS overrides)")

    sp = subs.add_parser("eigen", help="principal eigenpair of a snapshot")
    _add_common(sp)
    sp.add_argument("--field", default=S, help="snapshot file (.snap)")
    sp.add_argument("--kappa", type=float, default=S)
    sp.add_argument("--tol", type=float, default=S)

    sp = subs.add_parser("mu", help="rank-one spectral curve mu(r)")
    _add_common(sp)
    sp.add_argument("--r", dest="r_list", type=_floats, default=S)
    sp.add_argument("--d", type=int, default=S)
    sp.add_argument("--method", choices=["resolvent", "box", "both"],
                    default=S)

    sp = subs.add_parser("variational", help="box variational constants")
    _add_common(sp)
    sp.add_argument("--kappa", type=float, default=S)
    sp.add_argument("--rho", type=float, default=S,
                    help="increment scale; inf for the flat limit")
    sp.add_argument("--R", type=int, default=S)
    sp.add_argument("--d", type=int, default=S)
    sp.add_argument("--which", choices=["chi", "chitilde", "shapes"],
                    default=S)
    sp.add_argument("--eps", dest="eps_grid", type=_floats, default=S,
                    help="mass thresholds of the shapes radius table")

    sp = subs.add_parser("scaling", help="annealed and quenched scales")
    _add_common(sp)
    sp.add_argument("--eta", type=_eta_spec, default=S,
                    help='growth spec: a power, e.g. 0.5, or JSON '
                         '{"form":"power","gamma":0.5}')
    sp.add_argument("--d", type=int, default=S)
    sp.add_argument("--t", dest="t_grid", type=_floats, default=S)

    sp = subs.add_parser("islands", help="island decomposition of a solve run")
    _add_common(sp)
    sp.add_argument("--run", default=S, help="solve output directory")
    sp.add_argument("--time", type=float, default=S,
                    help="snapshot time (default: largest)")
    sp.add_argument("--eps", type=float, default=S)
    sp.add_argument("--R", type=int, default=S, help="comparison window")
    sp.add_argument("--delta-min", dest="delta_min", type=float, default=S)
    sp.add_argument("--var-radius", dest="var_radius", type=int, default=S)
    sp.add_argument("--k-max", dest="k_max", type=int, default=S)

    sp = subs.add_parser("check", help="asymptotic trend diagnostics")
    checks = sp.add_subparsers(dest="check_kind", required=True)

    cp = checks.add_parser("annealed", help="moment rate vs prediction")
    _add_common(cp)
    cp.add_argument("--potential", type=_json_obj, default=S)
    cp.add_argument("--kappa", type=float, default=S)
    cp.add_argument("--p", type=float, default=S)
    cp.add_argument("--t", dest="t_grid", type=_floats, default=S)
    cp.add_argument("--n", type=int, default=S)
    cp.add_argument("--seed", type=int, default=S)
    cp.add_argument("--d", type=int, default=S)
    cp.add_argument("--R", type=int, default=S)
    cp.add_argument("--L", type=int, default=S)
    cp.add_argument("--chi", type=float, default=S,
                    help="override the variational constant")
    cp.add_argument("--var-radius", dest="var_radius", type=int, default=S)
    cp.add_argument("--dt-max", dest="dt_max", type=float, default=S)

    cp = checks.add_parser("quenched", help="almost-sure rate of one field")
    _add_common(cp)
    cp.add_argument("--potential", type=_json_obj, default=S)
    cp.add_argument("--kappa", type=float, default=S)
    cp.add_argument("--t", dest="t_grid", type=_floats, default=S)
    cp.add_argument("--seed", type=int, default=S)
    cp.add_argument("--d", type=int, default=S)
    cp.add_argument("--chi-tilde", dest="chi_tilde", type=float, default=S)
    cp.add_argument("--var-radius", dest="var_radius", type=int, default=S)
    cp.add_argument("--dt-max", dest="dt_max", type=float, default=S)

    cp = checks.add_parser("correlation", help="two-point profile c(t,x)")
    _add_common(cp)
    cp.add_argument("--potential", type=_json_obj, default=S)
    cp.add_argument("--kappa", type=float, default=S)
    cp.add_argument("--t", type=float, default=S)
    cp.add_argument("--x", dest="x_list", type=_sites, default=S,
                    help="sites, e.g. 0,1,2 or 0;0,1;0 in d=2")
    cp.add_argument("--n", type=int, default=S)
    cp.add_argument("--seed", type=int, default=S)
    cp.add_argument("--d", type=int, default=S)
    cp.add_argument("--R", type=int, default=S)
    cp.add_argument("--L", type=int, default=S)
    cp.add_argument("--var-radius", dest="var_radius", type=int, default=S)
    cp.add_argument("--rho", type=float, default=S,
                    help="limit-profile parameter (default: from potential)")
    cp.add_argument("--bootstrap", type=int, default=S)
    cp.add_argument("--dt-max", dest="dt_max", type=float, default=S)

    sp = subs.add_parser("catalytic", help="moving-catalyst moments")
    _add_common(sp)
    sp.add_argument("--mode", choices=["moments", "fk", "limits"], default=S)
    sp.add_argument("--d", type=int, default=S)
    sp.add_argument("--nu", type=float, default=S)
    sp.add_argument("--gamma", type=float, default=S)
    sp.add_argument("--rho", type=float, default=S)
    sp.add_argument("--kappa", type=float, default=S)
    sp.add_argument("--p", dest="p_list", type=_ints, default=S)
    sp.add_argument("--t", dest="t_grid", type=_floats, default=S)
    sp.add_argument("--L", type=int, default=S, help="torus side (odd)")
    sp.add_argument("--n", type=int, default=S)
    sp.add_argument("--seed", type=int, default=S)
    sp.add_argument("--dt-max", dest="dt_max", type=float, default=S)
    sp.add_argument("--dt-w", dest="dt_w", type=float, default=S)
    sp.add_argument("--polaron", dest="polaron_constant", type=float,
                    default=S, help="external polaron constant (d = 3)")
    sp.add_argument("--death-rate", dest="death_rate", type=float, default=S)

    sp = subs.add_parser("report", help="merge run directories")
    sp.add_argument("dirs", nargs="*", help="run directories to merge")
    sp.add_argument("--out", help="output directory")

    sp = subs.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)

    return parser


def _effective_config(sub: str, ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[sub])
    path = getattr(ns, "config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise _UsageError(f"cannot read config file: {exc}")
        if not isinstance(file_cfg, dict):
            raise _UsageError("the config file must hold a JSON object")
        named = file_cfg.pop("subcommand", sub)
        if named != sub:
            raise _UsageError(f"config file is for subcommand {named!r}, "
                              f"not {sub!r}")
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise _UsageError(f"unknown config keys: {unknown}")
        cfg.update(file_cfg)
    skip = {"command", "check_kind", "config", "server"}
    for key, val in vars(ns).items():
        if key not in skip:
            cfg[key] = val
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if ns.command == "report":
        return _cmd_report(list(ns.dirs), ns.out)
    if ns.command == "serve":
        return _cmd_serve(ns.host, ns.port)

    sub = ns.command
    if sub == "check":
        sub = f"check-{ns.check_kind}"
    try:
        cfg = _effective_config(sub, ns)
        return _run(sub, cfg, getattr(ns, "server", None))
    except _UsageError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
