"""Finite boxes in Z^d, fields on them, the discrete Laplacian, and snapshots.

A box of radius R in dimension d holds the (2R+1)^d lattice points of
center + [-R,R]^d.  Sites are enumerated row-major over the offsets with the
first coordinate slowest; this ordering is part of the snapshot file format
and must not change.

The Laplacian is the graph stencil Delta f(x) = sum_{|y-x|=1} [f(y) - f(x)].
In "dirichlet" mode neighbours outside the box contribute -f(x) (zero
boundary condition); in "periodic" mode the box wraps into a torus.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import SingularSiteError, SnapshotFormatError

__all__ = [
    "Box",
    "Field",
    "FiniteDomain",
    "apply_laplacian",
    "laplacian_matrix",
    "restrict_domain",
    "constant_field",
    "delta_field",
    "save_field",
    "load_field",
]

BOUNDARY_MODES = ("dirichlet", "periodic")


@dataclass(frozen=True)
class Box:
    """Geometry of a finite axis-aligned box of lattice sites.

    Parameters
    ----------
    d : int
        Dimension, at least 1.
    radius : int
        Nonnegative; the box spans center + [-radius, radius]^d.
    boundary : {"dirichlet", "periodic"}
        Boundary convention used by every operator built on this box.
    center : tuple of int, optional
        Defaults to the origin.
    """

    d: int
    radius: int
    boundary: str = "dirichlet"
    center: tuple = None

    def __post_init__(self):
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if not (isinstance(self.radius, (int, np.integer)) and self.radius >= 0):
            raise ValueError(f"radius must be a nonnegative integer, got {self.radius!r}")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}, got {self.boundary!r}")
        center = self.center if self.center is not None else (0,) * self.d
        center = tuple(int(c) for c in center)
        if len(center) != self.d:
            raise ValueError(f"center has length {len(center)}, expected {self.d}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "radius", int(self.radius))
        object.__setattr__(self, "center", center)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def n_sites(self) -> int:
        return self.side ** self.d

    @property
    def shape(self) -> tuple:
        return (self.side,) * self.d

    def offsets(self) -> np.ndarray:
        """All site offsets relative to the center, shape (n_sites, d), row-major."""
        grids = np.indices(self.shape).reshape(self.d, -1).T
        return grids - self.radius

    def index_of(self, site) -> int:
        """Flat index of a lattice point (absolute coordinates)."""
        site = np.asarray(site, dtype=np.int64)
        off = site - np.asarray(self.center, dtype=np.int64)
        if np.any(np.abs(off) > self.radius):
            raise ValueError(f"site {tuple(site.tolist())} outside the box")
        return int(np.ravel_multi_index(tuple(off + self.radius), self.shape))

    def site_of(self, index: int) -> tuple:
        """Lattice point (absolute coordinates) of a flat index."""
        off = np.array(np.unravel_index(int(index), self.shape)) - self.radius
        return tuple((off + np.asarray(self.center)).tolist())

    def contains(self, site) -> bool:
        off = np.asarray(site) - np.asarray(self.center)
        return bool(np.all(np.abs(off) <= self.radius))


@dataclass(frozen=True)
class Field:
    """Immutable real-valued field on a box.

    Values live in [-inf, +inf); +inf and NaN are rejected.  The array is
    copied on construction and marked read-only so Fields can be shared
    freely across workers.
    """

    box: Box
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        if vals.shape != (self.box.n_sites,):
            raise ValueError(
                f"values length {vals.shape[0]} != site count {self.box.n_sites}"
            )
        if np.any(np.isnan(vals)):
            raise ValueError("NaN entries are not allowed in a Field")
        if np.any(vals == np.inf):
            raise ValueError("+inf entries are not allowed in a Field")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.box.shape)

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    def at(self, site) -> float:
        return float(self.values[self.box.index_of(site)])

    def with_values(self, values) -> "Field":
        return Field(self.box, values)


@dataclass(frozen=True)
class FiniteDomain:
    """The site set {f > -inf} of a field, with f restricted to it."""

    box: Box
    indices: np.ndarray
    values: np.ndarray

    @property
    def is_empty(self) -> bool:
        return self.indices.size == 0

    @property
    def n_sites(self) -> int:
        return int(self.indices.size)


def constant_field(box: Box, c: float) -> Field:
    return Field(box, np.full(box.n_sites, float(c)))


def delta_field(box: Box, site=None, height: float = 1.0) -> Field:
    """Field that is `height` at one site (default: the center) and 0 elsewhere."""
    vals = np.zeros(box.n_sites)
    idx = box.index_of(site if site is not None else box.center)
    vals[idx] = height
    return Field(box, vals)


@lru_cache(maxsize=64)
def _laplacian(d: int, radius: int, boundary: str) -> sp.csr_matrix:
    side = 2 * radius + 1
    if side == 1:
        # a 1-site torus wraps both directions of every axis back onto itself
        adj1 = sp.csr_matrix(np.array([[2.0]] if boundary == "periodic" else [[0.0]]))
    else:
        ones = np.ones(side - 1)
        adj1 = sp.diags([ones, ones], [-1, 1], format="lil")
        if boundary == "periodic":
            adj1[0, side - 1] += 1.0
            adj1[side - 1, 0] += 1.0
        adj1 = adj1.tocsr()
    adj = sp.csr_matrix((side ** d, side ** d))
    for axis in range(d):
        left = sp.identity(side ** axis, format="csr")
        right = sp.identity(side ** (d - 1 - axis), format="csr")
        adj = adj + sp.kron(sp.kron(left, adj1), right, format="csr")
    lap = adj - 2.0 * d * sp.identity(side ** d, format="csr")
    return lap.tocsr()


def laplacian_matrix(box: Box) -> sp.csr_matrix:
    """Sparse matrix of the discrete Laplacian in the box's boundary mode."""
    return _laplacian(box.d, box.radius, box.boundary)


def apply_laplacian(f: Field) -> Field:
    """Apply the discrete Laplacian to a finite field.

    Raises
    ------
    SingularSiteError
        If the field has a -inf entry; restrict the domain first.
    """
    bad = np.where(~np.isfinite(f.values))[0]
    if bad.size:
        raise SingularSiteError(f.box.site_of(int(bad[0])))
    return Field(f.box, laplacian_matrix(f.box) @ f.values)


def restrict_domain(f: Field) -> FiniteDomain:
    """Finite sites of f, in index order.  Empty domains are legal."""
    idx = np.where(np.isfinite(f.values))[0]
    return FiniteDomain(f.box, idx, f.values[idx])


_HEADER_KEYS = ("d", "R", "boundary_mode", "time", "seed")


def save_field(f: Field, path, time: float = None, seed=None) -> None:
    """Write a snapshot: one JSON header line, then raw little-endian float64.

    -inf entries are stored as the IEEE negative-infinity bit pattern, so the
    round trip is bit-exact.
    """
    header = {
        "d": f.box.d,
        "R": f.box.radius,
        "boundary_mode": f.box.boundary,
        "time": time,
        "seed": seed,
    }
    if any(c != 0 for c in f.box.center):
        header["center"] = list(f.box.center)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(f.values.astype("<f8").tobytes())


def load_field(path) -> tuple:
    """Read a snapshot written by save_field.  Returns (Field, header dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise SnapshotFormatError("missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotFormatError(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict) or any(k not in header for k in _HEADER_KEYS):
        raise SnapshotFormatError(f"header must carry keys {_HEADER_KEYS}")
    try:
        box = Box(
            d=header["d"],
            radius=header["R"],
            boundary=header["boundary_mode"],
            center=tuple(header["center"]) if "center" in header else None,
        )
    except (TypeError, ValueError) as exc:
        raise SnapshotFormatError(f"bad geometry in header: {exc}") from exc
    payload = raw[nl + 1:]
    expected = box.n_sites * 8
    if len(payload) != expected:
        raise SnapshotFormatError(
            f"payload holds {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    try:
        field = Field(box, values)
    except ValueError as exc:
        raise SnapshotFormatError(f"bad payload values: {exc}") from exc
    return field, header
