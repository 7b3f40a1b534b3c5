import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pamlab.errors import SnapshotFormatError
from pamlab.lattice import (
    Box,
    Field,
    apply_laplacian,
    constant_field,
    delta_field,
    laplacian_matrix,
    load_field,
    restrict_domain,
    save_field,
)


def test_box_geometry():
    b = Box(2, 3, "dirichlet")
    assert b.side == 7
    assert b.n_sites == 49
    assert b.shape == (7, 7)
    assert b.contains((3, -3)) and not b.contains((4, 0))
    # index_of and site_of are inverse
    for i in (0, 11, 48):
        assert b.index_of(b.site_of(i)) == i


def test_field_rejects_nan_and_plus_inf(box1d):
    with pytest.raises(ValueError):
        Field(box1d, np.full(box1d.n_sites, np.nan))
    with pytest.raises(ValueError):
        Field(box1d, np.full(box1d.n_sites, np.inf))
    f = constant_field(box1d, -math.inf)  # -inf is a legal hard trap
    assert np.all(f.values == -math.inf)


def test_field_values_are_immutable(box1d):
    f = constant_field(box1d, 1.0)
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_dirichlet_row_sums_interior():
    b = Box(2, 2, "dirichlet")
    L = laplacian_matrix(b).toarray()
    # interior diagonal is -2d; a constant field loses mass only at the rim
    assert L[b.index_of((0, 0)), b.index_of((0, 0))] == -4
    interior = [i for i in range(b.n_sites)
                if np.max(np.abs(b.site_of(i))) < b.radius]
    assert np.allclose(L[interior].sum(axis=1), 0.0)


def test_periodic_annihilates_constants():
    b = Box(3, 1, "periodic")
    f = apply_laplacian(constant_field(b, 5.0))
    assert np.allclose(f.values, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["dirichlet", "periodic"]))
def test_laplacian_symmetric_negative(seed, boundary):
    """<Lf, g> = <f, Lg> and <Lf, f> <= 0 for random fields."""
    b = Box(2, 2, boundary)
    rng = np.random.default_rng(seed)
    f, g = rng.normal(size=(2, b.n_sites))
    L = laplacian_matrix(b)
    assert math.isclose((L @ f) @ g, f @ (L @ g), rel_tol=0, abs_tol=1e-9)
    assert (L @ f) @ f <= 1e-9


def test_laplacian_matches_dense_stencil_oracle():
    b = Box(2, 2, "dirichlet")
    rng = np.random.default_rng(7)
    f = Field(b, rng.normal(size=b.n_sites))
    got = apply_laplacian(f).values
    vals = f.values.reshape(b.shape)
    padded = np.pad(vals, 1)  # zero boundary condition
    expect = (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2]
              + padded[1:-1, 2:] - 4 * vals)
    assert np.allclose(got, expect.ravel(), atol=1e-12)


def test_restrict_domain_cases(box1d):
    only0 = delta_field(box1d, height=1.0)
    vals = np.where(only0.values == 1.0, 0.0, -math.inf)
    dom = restrict_domain(Field(box1d, vals))
    assert dom.n_sites == 1 and box1d.site_of(int(dom.indices[0])) == (0,)

    full = restrict_domain(constant_field(box1d, 0.5))
    assert full.n_sites == box1d.n_sites

    empty = restrict_domain(constant_field(box1d, -math.inf))
    assert empty.is_empty


def test_restrict_domain_keeps_cluster_adjacency():
    b = Box(1, 4, "dirichlet")
    vals = np.full(b.n_sites, -math.inf)
    vals[b.index_of((1,))] = 0.0
    vals[b.index_of((2,))] = 0.0
    dom = restrict_domain(Field(b, vals))
    assert dom.n_sites == 2
    sites = sorted(b.site_of(int(i))[0] for i in dom.indices)
    assert sites == [1, 2] and sites[1] - sites[0] == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.booleans())
def test_snapshot_round_trip(tmp_path_factory, seed, with_traps):
    """save/load is a bit-exact identity, -inf sentinel included."""
    b = Box(3, 2, "periodic")
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=b.n_sites)
    if with_traps:
        vals[rng.random(b.n_sites) < 0.3] = -math.inf
    path = tmp_path_factory.mktemp("snap") / "f.snap"
    save_field(Field(b, vals), path, time=2.5, seed=seed)
    g, header = load_field(path)
    assert np.array_equal(g.values, vals)
    assert g.box == b
    assert header["time"] == 2.5 and header["seed"] == seed


def test_truncated_snapshot_rejected(tmp_path, box1d):
    path = tmp_path / "f.snap"
    save_field(constant_field(box1d, 1.0), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(SnapshotFormatError):
        load_field(path)


def test_bad_header_rejected(tmp_path):
    path = tmp_path / "f.snap"
    path.write_bytes(b"not json\n" + b"\x00" * 8)
    with pytest.raises(SnapshotFormatError):
        load_field(path)


def test_box_validation():
    with pytest.raises(ValueError):
        Box(0, 3, "dirichlet")
    with pytest.raises(ValueError):
        Box(1, 3, "absorbing")
