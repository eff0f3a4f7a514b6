import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_plap import build_grid, integrate, norm_Linf, norm_Lq, read_csv, seminorm_W1p, write_csv


@pytest.mark.parametrize(
    "dim, extent, n, nodes, h",
    [
        (1, 1.0, 11, 11, (0.1,)),
        (1, 2.0, 5, 5, (0.5,)),
        (2, 1.0, 5, 25, (0.25, 0.25)),
        (2, (2.0, 1.0), (9, 5), 45, (0.25, 0.25)),
    ],
)
def test_grid_shape(dim, extent, n, nodes, h):
    g = build_grid(dim, extent, n)
    assert g.num_nodes == nodes
    assert np.allclose(g.h, h)
    assert g.interior.size == nodes - int(g.boundary_mask.sum())


def test_boundary_values_vanish():
    g = build_grid(2, 1.0, 7)
    u = g.evaluate(lambda x, y: 1.0 + x * y)
    assert np.all(u.values[g.boundary_mask] == 0.0)
    assert np.all(u.values[g.interior] > 0.0)


def test_integrate_sine():
    g = build_grid(1, 1.0, 401)
    u = g.evaluate(lambda x: np.sin(math.pi * x))
    assert integrate(u) == pytest.approx(2 / math.pi, abs=1e-4)


def test_mass_sums_to_volume():
    g = build_grid(2, (2.0, 3.0), (9, 13))
    assert g.mass.sum() == pytest.approx(6.0, rel=1e-12)


@pytest.mark.parametrize("q", [1.0, 2.0, 4.0])
def test_norms_of_constant_interior(q):
    g = build_grid(1, 1.0, 201)
    u = g.function(np.where(g.boundary_mask, 0.0, 2.0))
    assert norm_Linf(u) == 2.0
    assert norm_Lq(u, q) == pytest.approx(2.0, rel=2e-2)


def test_norm_rejects_small_q():
    g = build_grid(1, 1.0, 5)
    with pytest.raises(ValueError):
        norm_Lq(g.zeros(), 0.5)


def test_w1p_seminorm_of_sine():
    g = build_grid(1, 1.0, 401)
    u = g.evaluate(lambda x: np.sin(math.pi * x))
    assert seminorm_W1p(u, 2) ** 2 == pytest.approx(math.pi**2 / 2, rel=1e-3)


def test_gradient_exact_on_affine_2d():
    g = build_grid(2, 1.0, 9)
    u = g.evaluate(lambda x, y: 3 * x - 2 * y, dirichlet=False)
    # every piece sees the same gradient
    p = 3.0
    expected = (math.hypot(3, 2) ** p) ** (1 / p)
    assert seminorm_W1p(u, p) == pytest.approx(expected, rel=1e-12)


def test_seminorm_refinement_rate():
    exact = math.pi**2 / 2
    errs = []
    for n in (51, 101, 201):
        g = build_grid(1, 1.0, n)
        u = g.evaluate(lambda x: np.sin(math.pi * x))
        errs.append(abs(seminorm_W1p(u, 2) ** 2 - exact))
    slope = math.log2(errs[0] / errs[1]), math.log2(errs[1] / errs[2])
    assert min(slope) >= 0.9


def test_dist_is_one_lipschitz():
    g = build_grid(2, (1.0, 2.0), (11, 21))
    d, X = g.dist, g.coords
    i, j = np.triu_indices(g.num_nodes, 1)
    sel = slice(None, None, 97)
    gap = np.abs(d[i[sel]] - d[j[sel]])
    span = np.linalg.norm(X[i[sel]] - X[j[sel]], axis=1)
    assert np.all(gap <= span + 1e-12)
    assert d.max() == pytest.approx(0.5)


def test_csv_round_trip(tmp_path):
    g = build_grid(2, 1.0, 6)
    u = g.evaluate(lambda x, y: np.exp(x) * np.sin(y + 0.3))
    path = tmp_path / "u.csv"
    write_csv(u, path)
    back = read_csv(path, g)
    assert np.array_equal(back.values, u.values)
    assert path.read_text().splitlines()[0] == "node_index,x,y,value"


def test_csv_wrong_grid(tmp_path):
    g = build_grid(1, 1.0, 6)
    write_csv(g.zeros(), tmp_path / "u.csv")
    with pytest.raises(ValueError):
        read_csv(tmp_path / "u.csv", build_grid(1, 1.0, 8))


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 40), st.floats(0.2, 5.0))
def test_integral_of_one_is_length(n, L):
    g = build_grid(1, L, n)
    assert integrate(g.function(np.ones(g.num_nodes), dirichlet=False)) == pytest.approx(L, rel=1e-12)


def test_interval_examples():
    g = build_grid(1, 1.0, 5)
    assert np.allclose(g.coords[:, 0], [0, 0.25, 0.5, 0.75, 1])
    assert np.allclose(g.dist, [0, 0.25, 0.5, 0.25, 0])
    g2 = build_grid(1, 2.0, 9)
    k = int(np.argmax(g2.dist))
    assert g2.dist[k] == 1.0 and g2.coords[k, 0] == 1.0


def test_square_distance():
    g = build_grid(2, 1.0, 11)
    k = int(np.argmin(np.linalg.norm(g.coords - [0.3, 0.5], axis=1)))
    assert g.dist[k] == pytest.approx(0.3)


@pytest.mark.parametrize("fn, expected", [(lambda x: 1.0 + 0 * x, 1.0), (lambda x: x, 0.5)])
def test_integrate_trivial(fn, expected):
    g = build_grid(1, 1.0, 11)
    assert integrate(g.evaluate(fn, dirichlet=False)) == pytest.approx(expected)


def test_norm_examples():
    g = build_grid(1, 1.0, 101)
    assert norm_Linf(g.evaluate(lambda x: x * (1 - x))) == pytest.approx(0.25)
    assert seminorm_W1p(g.evaluate(lambda x: x, dirichlet=False), 2) == pytest.approx(1.0)
