import base64
import math

import numpy as np
import pytest

from pamlab.lattice import Box, Field
from pamlab.service.schemas import FieldModel, decode_values, encode_values


def _dexp(rho=2.0):
    return {"family": "double_exponential", "params": {"rho": rho}}


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok" and "version" in body


def test_field_b64_round_trip_preserves_traps():
    box = Box(2, 2, "periodic")
    vals = np.random.default_rng(0).normal(size=box.n_sites)
    vals[3] = -math.inf
    m = FieldModel.from_field(Field(box, vals))
    back = m.to_field()
    assert np.array_equal(back.values, vals)
    assert back.box == box


def test_decode_rejects_bad_payloads():
    from pamlab.errors import ConfigError
    with pytest.raises(ConfigError):
        decode_values("!!!", 4)
    short = base64.b64encode(np.zeros(3).tobytes()).decode()
    with pytest.raises(ConfigError):
        decode_values(short, 4)


def test_solve_round_trip(client):
    req = {"potential": _dexp(), "kappa": 1.0, "d": 1, "R": 6,
           "t_grid": [1.0, 2.0], "seed": 3}
    body = client.post("/solve", json=req).json()
    assert [row["t"] for row in body["table"]] == [1.0, 2.0]
    assert body["seed"] == 3
    # snapshots come back as log-value fields on the same box
    snap = body["snapshots"][-1]
    f = FieldModel(**snap["log_u"]).to_field()
    assert f.box.radius == 6
    total = math.log(sum(math.exp(v) for v in f.values))
    assert total == pytest.approx(body["table"][-1]["logU"], abs=1e-9)


def test_unknown_keys_are_rejected(client):
    req = {"potential": _dexp(), "kapa": 1.0, "t_grid": [1.0]}
    resp = client.post("/solve", json=req)
    assert resp.status_code == 422
    assert any("kapa" in str(item["loc"]) for item in resp.json()["detail"])


def test_invalid_potential_names_the_field(client):
    req = {"potential": {"family": "bounded_tail",
                         "params": {"D": 1.0, "gamma": 1.5}},
           "t_grid": [1.0]}
    resp = client.post("/solve", json=req)
    assert resp.status_code == 422
    item = resp.json()["detail"][0]
    assert "potential" in str(item["loc"])
    assert "gamma must lie in [0, 1)" in item["msg"]


def test_config_error_maps_to_400(client):
    req = {"kappa": 1.0, "rho": None, "R": 6, "d": 1, "which": "chi"}
    resp = client.post("/variational", json=req)
    assert resp.status_code == 400
    assert resp.json()["error"] == "config"


def test_eigen_round_trip(client):
    box = Box(1, 5, "dirichlet")
    vals = np.linspace(-1.0, 1.0, box.n_sites)
    req = {"field": FieldModel.from_field(Field(box, vals)).model_dump(),
           "kappa": 0.5}
    body = client.post("/eigen", json=req).json()
    vec = FieldModel(**body["vector"]).to_field().values
    assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-9)
    assert body["residual"] <= 1e-9

    from pamlab.spectral import principal_eigen
    direct = principal_eigen(Field(box, vals), 0.5)
    assert body["value"] == pytest.approx(direct.value, abs=1e-12)


def test_mu_endpoint_closed_form(client):
    body = client.post("/mu", json={"r_list": [1.0], "d": 1}).json()
    assert body["rows"][0]["mu"] == pytest.approx(math.sqrt(5) - 2, abs=1e-9)


def test_variational_flat_limit(client):
    req = {"kappa": 1.0, "rho": None, "R": 6, "d": 1, "which": "chitilde"}
    body = client.post("/variational", json=req).json()
    assert body["value"] == 2.0


def test_scaling_rows(client):
    req = {"eta": {"form": "power", "gamma": 0.0}, "d": 1,
           "t_grid": [1.0, 1000.0]}
    body = client.post("/scaling", json=req).json()
    assert body["growth_class"] == 4
    assert body["rows"][0]["alpha_tilde"] is None  # defined only for t > 1
    assert body["rows"][1]["alpha"] == pytest.approx(10.0, rel=1e-6)


def test_moments_threads_env_override(client, monkeypatch):
    monkeypatch.setenv("PAM_THREADS", "2")
    req = {"potential": _dexp(), "kappa": 1.0, "d": 1, "R": 4,
           "t_grid": [0.5], "p_list": [1.0], "n": 8, "seed": 0,
           "bootstrap": 20}
    body = client.post("/moments", json=req).json()
    monkeypatch.delenv("PAM_THREADS")
    serial = client.post("/moments", json=req).json()
    assert body["lambda_hat"] == serial["lambda_hat"]

    monkeypatch.setenv("PAM_THREADS", "zero")
    assert client.post("/moments", json=req).status_code == 400


def test_islands_consumes_solve_output(client):
    solve = client.post("/solve", json={
        "potential": _dexp(), "kappa": 1.0, "d": 1, "R": 8,
        "t_grid": [8.0], "seed": 2}).json()
    req = {"xi": solve["xi"], "log_u": solve["snapshots"][0]["log_u"],
           "t": 8.0, "kappa": 1.0, "rho": 2.0, "eps": 0.05, "window_R": 3,
           "delta_min": 1.0}
    body = client.post("/islands", json=req).json()
    assert body["n_islands"] >= 1
    assert 0.0 < body["captured_fraction"] <= 1.0
    assert len(body["centers"]) == body["n_islands"]


def test_catalytic_limits_mode(client):
    req = {"mode": "limits", "d": 3, "nu": 1.0, "gamma": 1.0, "rho": 1.0,
           "kappa": 1.0, "p_list": [1], "t_grid": [1.0], "n": 2, "seed": 0}
    body = client.post("/catalytic", json=req).json()
    assert body["rows"] == []
    pred = body["prediction"][0]
    assert pred["regime"] == "weakly p-catalytic"
    # d=3 closed forms need the externally supplied polaron constant
    assert pred["limits"] is None and "polaron" in pred["limits_note"]


def test_catalytic_rejects_even_side(client):
    req = {"mode": "fk", "d": 1, "nu": 1.0, "gamma": 1.0, "rho": 1.0,
           "kappa": 1.0, "p_list": [1], "t_grid": [0.5], "L": 8, "n": 4,
           "seed": 0}
    assert client.post("/catalytic", json=req).status_code == 422


def test_quenched_check_endpoint(client):
    req = {"potential": _dexp(), "kappa": 1.0, "t_grid": [1.0, 2.0],
           "seed": 5, "d": 1}
    body = client.post("/check/quenched", json=req).json()
    assert len(body["gap"]) == 2
    assert all(0.0 <= g <= 2.0 for g in body["gap"])
    assert body["inconclusive"] is False
