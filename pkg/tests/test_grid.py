import numpy as np
import pytest

from obstaclegames.grid import (
    GridFunction,
    Lattice,
    MonotonicityViolation,
    cfl_timestep,
    read_grid_csv,
    second_difference,
    upwind_gradient,
    write_grid_csv,
)
from conftest import constant_spec


def test_lattice_validation():
    with pytest.raises(ValueError):
        Lattice([-1.0], [1.0], (2,))
    with pytest.raises(ValueError):
        Lattice([1.0], [-1.0], (5,))
    with pytest.raises(ValueError):
        Lattice([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0], (5, 5, 5))
    lat = Lattice([-1.0, 0.0], [1.0, 4.0], (5, 9))
    assert lat.node_count == 45
    assert np.allclose(lat.spacing, [0.5, 0.5])


def test_gridfunction_validation():
    lat = Lattice([-1.0], [1.0], (5,))
    with pytest.raises(ValueError):
        GridFunction(lat, np.ones(4))
    with pytest.raises(ValueError):
        GridFunction(lat, [0.0, np.inf, 0.0, 0.0, 0.0])


@pytest.mark.parametrize("counts", [(9,), (6, 7)])
def test_upwind_exact_on_affine(counts):
    rng = np.random.default_rng(3)
    d = len(counts)
    lat = Lattice(rng.uniform(-2, -1, d), rng.uniform(1, 2, d), counts)
    slope = rng.normal(size=d)
    gf = GridFunction(lat, lat.nodes() @ slope + 0.7)
    for node in range(lat.node_count):
        for _ in range(3):
            drift = rng.normal(size=d)
            grad = upwind_gradient(gf, node, drift)
            assert np.allclose(grad, slope, atol=1e-12)


def test_upwind_constant_is_zero():
    lat = Lattice([-1.0], [1.0], (11,))
    gf = GridFunction(lat, np.full(11, 3.3))
    assert upwind_gradient(gf, 5, [1.0]) == pytest.approx(0.0, abs=1e-15)


def test_upwind_kink_selects_side():
    # v = |x| at x = 0: forward slope +1 for positive drift, backward -1 otherwise
    lat = Lattice([-1.0], [1.0], (11,))
    gf = GridFunction(lat, np.abs(lat.nodes()[:, 0]))
    assert upwind_gradient(gf, 5, [+1.0])[0] == pytest.approx(1.0)
    assert upwind_gradient(gf, 5, [-1.0])[0] == pytest.approx(-1.0)


def test_upwind_boundary_one_sided():
    lat = Lattice([0.0], [1.0], (6,))
    gf = GridFunction(lat, 2.0 * lat.nodes()[:, 0])
    # at the top face the forward difference is unavailable for drift >= 0
    assert upwind_gradient(gf, 5, [+1.0])[0] == pytest.approx(2.0)
    assert upwind_gradient(gf, 0, [-1.0])[0] == pytest.approx(2.0)


@pytest.mark.parametrize("counts", [(9,), (7, 8)])
def test_second_difference_exact_on_quadratics(counts):
    rng = np.random.default_rng(11)
    d = len(counts)
    lat = Lattice([-1.5] * d, [1.2] * d, counts)
    M = rng.normal(size=(d, d))
    M = M + M.T
    slope = rng.normal(size=d)
    nodes = lat.nodes()
    vals = 0.5 * np.einsum("ki,ij,kj->k", nodes, M, nodes) + nodes @ slope + 0.3
    gf = GridFunction(lat, vals)
    for _ in range(6):
        diag = rng.uniform(0.2, 2.0, size=d)
        a = np.diag(diag)
        if d == 2:
            h = lat.spacing
            cap = min(diag[0] * h[1] / h[0], diag[1] * h[0] / h[1])
            a[0, 1] = a[1, 0] = rng.uniform(-cap, cap)
        expected = 0.5 * np.trace(a @ M)
        for node in range(lat.node_count):
            assert second_difference(gf, node, a) == pytest.approx(expected, abs=1e-10)


def test_second_difference_zero_matrix():
    lat = Lattice([-1.0], [1.0], (9,))
    gf = GridFunction(lat, np.sin(3 * lat.nodes()[:, 0]))
    assert second_difference(gf, 4, [[0.0]]) == 0.0


def test_second_difference_rank_one_cross():
    # a = [[1,1],[1,1]] is degenerate (rank 1) but diagonally dominant
    lat = Lattice([-1.0, -1.0], [1.0, 1.0], (9, 9))
    nodes = lat.nodes()
    a = np.array([[1.0, 1.0], [1.0, 1.0]])

    v_sq = GridFunction(lat, 0.5 * (nodes[:, 0] + nodes[:, 1]) ** 2)
    # Hessian of (x+y)^2/2 is [[1,1],[1,1]]: 0.5*tr(a H) = 2
    assert second_difference(v_sq, 40, a) == pytest.approx(2.0, abs=1e-11)

    v_xy = GridFunction(lat, nodes[:, 0] * nodes[:, 1])
    # Hessian of xy is [[0,1],[1,0]]: the cross term alone, 0.5*tr(a H) = 1
    assert second_difference(v_xy, 40, a) == pytest.approx(1.0, abs=1e-11)


def test_cross_dominance_violation():
    lat = Lattice([-1.0, -1.0], [1.0, 1.0], (9, 9))
    gf = GridFunction(lat, np.zeros(81))
    with pytest.raises(MonotonicityViolation):
        second_difference(gf, 40, [[1.0, 1.5], [1.5, 1.0]])


def test_cfl_examples():
    lat = Lattice([-1.0], [1.0], (21,))
    # a = b = 0, lambda = 1: only the discount survives
    assert cfl_timestep(constant_spec(a=0.0, b=0.0, lam=1.0), lat) == pytest.approx(0.9)
    # d=1, a=1, lambda=1, h=0.1: 0.9 / (1 + 1/h^2)
    lat01 = Lattice([0.0], [2.0], (21,))
    dt = cfl_timestep(constant_spec(a=1.0, b=0.0, lam=1.0, box=(0.0, 2.0)), lat01)
    assert dt == pytest.approx(0.9 / 101.0, rel=1e-12)
    assert dt == pytest.approx(8.9109e-3, abs=1e-7)


def test_cfl_monotone_in_drift():
    lat = Lattice([-1.0], [1.0], (21,))
    dt1 = cfl_timestep(constant_spec(a=0.0, b=1.0, lam=1.0), lat)
    dt2 = cfl_timestep(constant_spec(a=0.0, b=2.0, lam=1.0), lat)
    assert dt2 < dt1


@pytest.mark.parametrize("counts", [(7,), (5, 6)])
def test_csv_roundtrip_bit_exact(counts, tmp_path):
    rng = np.random.default_rng(5)
    lat = Lattice([-2.0] * len(counts), [1.0] * len(counts), counts)
    values = rng.normal(size=lat.node_count) * 10.0 ** rng.integers(-8, 8, lat.node_count)
    gf = GridFunction(lat, values)
    path = tmp_path / "grid.csv"
    write_grid_csv(gf, path)
    back = read_grid_csv(path)
    assert back.lattice.counts == lat.counts
    assert np.array_equal(back.values, gf.values)
    assert np.array_equal(back.lattice.nodes(), lat.nodes())


def test_interpolation_matches_linear():
    lat = Lattice([-1.0, 0.0], [1.0, 2.0], (11, 9))
    nodes = lat.nodes()
    gf = GridFunction(lat, 2.0 * nodes[:, 0] - 0.5 * nodes[:, 1] + 0.25)
    rng = np.random.default_rng(9)
    q = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(0, 2, 50)])
    expect = 2.0 * q[:, 0] - 0.5 * q[:, 1] + 0.25
    assert np.allclose(gf.interpolate(q), expect, atol=1e-12)


def test_interior_subbox_mask():
    lat = Lattice([0.0], [1.0], (11,))
    mask = lat.interior_subbox_mask(0.1)
    xs = lat.nodes()[:, 0]
    assert np.array_equal(mask, (xs >= 0.1 - 1e-12) & (xs <= 0.9 + 1e-12))
