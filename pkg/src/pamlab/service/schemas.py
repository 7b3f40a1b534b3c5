"""Request and response models of the HTTP service.

Every request model rejects unknown keys, so a typo in a config file fails
loudly instead of silently running defaults.  Bulk numeric payloads travel
as base64 little-endian float64 (the byte layout of the snapshot files),
which keeps -inf entries exact; scalars that may legitimately be unbounded
are sent as null with the sign convention documented on the field.
"""
from __future__ import annotations

import base64
import math
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PField, model_validator

from ..errors import ConfigError
from ..lattice import Box, Field
from ..potentials import PotentialSpec

__all__ = [
    "FieldModel",
    "PotentialModel",
    "SolveRequest",
    "SolveResponse",
    "MomentsRequest",
    "MomentsResponse",
    "EigenRequest",
    "EigenResponse",
    "MuRequest",
    "MuResponse",
    "VariationalRequest",
    "VariationalResponse",
    "ScalingRequest",
    "ScalingResponse",
    "IslandsRequest",
    "IslandsResponse",
    "AnnealedRequest",
    "AnnealedResponse",
    "QuenchedRequest",
    "QuenchedResponse",
    "CorrelationRequest",
    "CorrelationResponse",
    "CatalyticRequest",
    "CatalyticResponse",
    "encode_values",
    "decode_values",
]


def encode_values(a: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
    ).decode("ascii")


def decode_values(s: str, n_sites: int) -> np.ndarray:
    try:
        raw = base64.b64decode(s.encode("ascii"), validate=True)
    except Exception as exc:
        raise ConfigError(f"values_b64 is not valid base64: {exc}") from exc
    if len(raw) != 8 * n_sites:
        raise ConfigError(
            f"payload holds {len(raw)} bytes, expected {8 * n_sites}"
        )
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


class _Schema(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FieldModel(_Schema):
    """Wire form of a lattice field: geometry header plus raw float64."""

    d: int = PField(ge=1)
    R: int = PField(ge=0)
    boundary_mode: Literal["dirichlet", "periodic"] = "dirichlet"
    center: Optional[list[int]] = None
    values_b64: str

    @classmethod
    def from_field(cls, f: Field) -> "FieldModel":
        center = list(f.box.center) if any(f.box.center) else None
        return cls(d=f.box.d, R=f.box.radius, boundary_mode=f.box.boundary,
                   center=center, values_b64=encode_values(f.values))

    def to_field(self) -> Field:
        center = tuple(self.center) if self.center is not None else None
        try:
            box = Box(self.d, self.R, self.boundary_mode, center)
            return Field(box, decode_values(self.values_b64, box.n_sites))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


class PotentialModel(_Schema):
    family: str
    params: dict

    @model_validator(mode="after")
    def _constructible(self):
        try:
            PotentialSpec(self.family, self.params)
        except ConfigError as exc:
            raise ValueError(str(exc)) from exc
        return self

    def to_spec(self) -> PotentialSpec:
        return PotentialSpec(self.family, self.params)


class SolveRequest(_Schema):
    potential: PotentialModel
    kappa: float = PField(default=1.0, gt=0)
    d: int = PField(default=1, ge=1)
    R: Optional[int] = PField(default=None, ge=0)
    boundary_mode: Literal["dirichlet", "periodic"] = "dirichlet"
    t_grid: list[float] = PField(min_length=1)
    u0: Literal["one", "delta"] = "one"
    seed: int = 0
    dt_max: float = PField(default=0.05, gt=0)
    stepper: Literal["split-exponential", "explicit"] = "split-exponential"


class SnapshotModel(_Schema):
    """Solution at one time as a log-value field (-inf marks zero mass)."""

    time: float
    log_u: FieldModel


class SolveRow(_Schema):
    """One line of the mass table; U null means overflow (logU is exact),
    logU null means zero mass."""

    t: float
    U: Optional[float]
    logU: Optional[float]


class SolveResponse(_Schema):
    xi: FieldModel
    snapshots: list[SnapshotModel]
    table: list[SolveRow]
    seed: int


class MomentsRequest(_Schema):
    potential: PotentialModel
    kappa: float = PField(default=1.0, gt=0)
    d: int = PField(default=1, ge=1)
    R: Optional[int] = PField(default=None, ge=0)
    boundary_mode: Literal["dirichlet", "periodic"] = "dirichlet"
    t_grid: list[float] = PField(min_length=1)
    p_list: list[float] = PField(min_length=1)
    n: int = PField(ge=2)
    seed: int = 0
    dt_max: float = PField(default=0.05, gt=0)
    bootstrap: int = PField(default=200, ge=10)
    threads: Optional[int] = PField(default=None, ge=1)


class MomentsResponse(_Schema):
    p_list: list[float]
    times: list[float]
    lambda_hat: list[list[Optional[float]]]
    ci_low: list[list[Optional[float]]]
    ci_high: list[list[Optional[float]]]
    ess: list[list[Optional[float]]]
    warnings: list[str]
    inconclusive: bool


class EigenRequest(_Schema):
    field: FieldModel
    kappa: float = PField(gt=0)
    tol: float = PField(default=1e-10, gt=0)


class EigenResponse(_Schema):
    value: float
    residual: float
    iterations: int
    method: str
    multiplicity: int
    vector: FieldModel


class MuRequest(_Schema):
    r_list: list[float] = PField(min_length=1)
    d: int = PField(ge=1)
    method: Literal["resolvent", "box", "both"] = "resolvent"


class MuRow(_Schema):
    r: float
    mu: float
    method: str
    residual: float


class MuResponse(_Schema):
    d: int
    rows: list[MuRow]


class VariationalRequest(_Schema):
    """rho may be null, meaning the infinite-increment limit (chitilde only)."""

    kappa: float = PField(gt=0)
    rho: Optional[float] = PField(default=None, gt=0)
    R: int = PField(ge=1)
    d: int = PField(default=1, ge=1)
    which: Literal["chi", "chitilde", "shapes"] = "chitilde"
    eps_grid: Optional[list[float]] = None


class VariationalResponse(_Schema):
    which: str
    value: float
    diagnostics: dict
    profile: Optional[FieldModel] = None
    V_star: Optional[FieldModel] = None
    w_star: Optional[FieldModel] = None
    r_table: Optional[list[list[float]]] = None


class EtaSpec(_Schema):
    form: Literal["power"] = "power"
    gamma: float = PField(ge=0)


class ScalingRequest(_Schema):
    eta: EtaSpec
    d: int = PField(default=1, ge=1)
    t_grid: list[float] = PField(min_length=1)


class ScalingRow(_Schema):
    """alpha_tilde is null when t <= 1 (the quenched scale needs log t > 0)."""

    t: float
    alpha: float
    alpha_tilde: Optional[float]


class ScalingResponse(_Schema):
    gamma: float
    eta_star: Optional[float]
    growth_class: int
    rows: list[ScalingRow]


class IslandsRequest(_Schema):
    xi: FieldModel
    log_u: FieldModel
    t: float = PField(gt=0)
    kappa: float = PField(gt=0)
    rho: float = PField(gt=0)
    eps: float = PField(gt=0, lt=1)
    window_R: int = PField(ge=0)
    delta_min: Optional[float] = PField(default=None, gt=0)
    var_radius: int = PField(default=12, ge=1)
    k_max: int = PField(default=100, ge=1)


class IslandsResponse(_Schema):
    centers: list[list[int]]
    local_max_log_u: list[float]
    captured_in_ball: list[float]
    potential_shape_dist: list[Optional[float]]
    solution_shape_dist: list[Optional[float]]
    captured_fraction: float
    min_pairwise_distance: Optional[float]
    n_islands: int
    capture_radius: int
    window_radius: int
    target_met: bool


class AnnealedRequest(_Schema):
    potential: PotentialModel
    kappa: float = PField(default=1.0, gt=0)
    p: float = PField(default=1.0, gt=0)
    t_grid: list[float] = PField(min_length=2)
    n: int = PField(ge=2)
    seed: int = 0
    d: int = PField(default=1, ge=1)
    R: Optional[int] = PField(default=None, ge=0)
    chi: Optional[float] = None
    var_radius: int = PField(default=12, ge=1)
    dt_max: float = PField(default=0.05, gt=0)


class AnnealedResponse(_Schema):
    p: float
    times: list[float]
    lambda_hat: list[Optional[float]]
    ci_low: list[Optional[float]]
    ci_high: list[Optional[float]]
    predicted: list[Optional[float]]
    diff_rate: list[Optional[float]]
    trend_to_zero: bool
    chi: float
    sandwich_lower_ok: list[bool]
    sandwich_upper_ok: list[bool]
    warnings: list[str]
    inconclusive: bool


class QuenchedRequest(_Schema):
    potential: PotentialModel
    kappa: float = PField(default=1.0, gt=0)
    t_grid: list[float] = PField(min_length=2)
    seed: int = 0
    d: int = PField(default=1, ge=1)
    chi_tilde: Optional[float] = None
    var_radius: int = PField(default=12, ge=1)
    dt_max: float = PField(default=0.05, gt=0)


class QuenchedResponse(_Schema):
    seed: int
    times: list[float]
    h: list[float]
    log_u_rate: list[float]
    gap: list[float]
    diff: list[float]
    trend_to_zero: bool
    chi_tilde: float
    boundary_fraction: list[float]
    inconclusive: bool


class CorrelationRequest(_Schema):
    potential: PotentialModel
    kappa: float = PField(default=1.0, gt=0)
    t: float = PField(gt=0)
    x_list: list[Union[int, list[int]]] = PField(min_length=1)
    n: int = PField(ge=2)
    seed: int = 0
    d: int = PField(default=1, ge=1)
    R: Optional[int] = PField(default=None, ge=0)
    var_radius: int = PField(default=12, ge=1)
    rho: Optional[float] = PField(default=None, gt=0)
    bootstrap: int = PField(default=200, ge=10)
    dt_max: float = PField(default=0.05, gt=0)


class CorrelationResponse(_Schema):
    t: float
    x_list: list[list[int]]
    c_hat: list[Optional[float]]
    ci_low: list[Optional[float]]
    ci_high: list[Optional[float]]
    limit_sqrt_measure: list[float]
    limit_measure: list[float]
    inconclusive: bool


class CatalyticRequest(_Schema):
    """mode moments cross-checks the direct and path-representation routes,
    fk runs the path representation alone (feasible in any dimension), and
    limits evaluates only the closed forms."""

    mode: Literal["moments", "fk", "limits"] = "moments"
    d: int = PField(default=1, ge=1)
    nu: float = PField(default=1.0, ge=0)
    gamma: float = PField(default=1.0, ge=0)
    rho: float = PField(default=1.0, gt=0)
    kappa: float = PField(default=1.0, ge=0)
    p_list: list[int] = PField(default=(1,), min_length=1)
    t_grid: list[float] = PField(default=(1.0,), min_length=1)
    L: Optional[int] = PField(default=None, ge=3)
    n: int = PField(default=2, ge=2)
    seed: int = 0
    dt_max: float = PField(default=0.02, gt=0)
    dt_w: float = PField(default=0.01, gt=0)
    polaron_constant: Optional[float] = None
    death_rate: Optional[float] = PField(default=None, ge=0)

    @model_validator(mode="after")
    def _odd_side(self):
        if self.L is not None and self.L % 2 == 0:
            raise ValueError("L must be an odd side length")
        if any(p < 1 for p in self.p_list):
            raise ValueError("p_list must hold positive integers")
        return self


class CatalyticRow(_Schema):
    """estimate/se null means the sample average overflowed float64."""

    p: int
    t: float
    route: Literal["direct", "fk"]
    estimate: Optional[float]
    se: Optional[float]


class CatalyticPrediction(_Schema):
    p: int
    lambda_star: float
    regime: str
    threshold: Optional[float]
    limits: Optional[dict] = None
    limits_note: Optional[str] = None


class CatalyticResponse(_Schema):
    mode: str
    L: Optional[int]
    rows: list[CatalyticRow]
    agree_3se: dict[str, list[bool]]
    lambda_hat: dict[str, Optional[float]]
    lambda_hat_ci: dict[str, Optional[list[float]]]
    lambda_star_hat: dict[str, Optional[float]]
    prediction: list[CatalyticPrediction]


def json_float(x) -> Optional[float]:
    """None-encode non-finite scalars so responses stay strict JSON."""
    x = float(x)
    return x if math.isfinite(x) else None
