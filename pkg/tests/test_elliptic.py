import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_plap import (
    ProblemParams,
    ReactionSpec,
    SolverError,
    apply_p_laplacian,
    build_barriers,
    build_grid,
    check_weak_comparison,
    solve_homogeneous_U,
    solve_regularized,
    solve_singular,
    solve_stationary_Q,
)
from singular_plap.elliptic import stationary_residual

TOL = 1e-10


def manufactured_g(u, params, lam, eps=0.0):
    """Data for which ``u`` solves the discrete resolvent equation exactly."""
    grid = u.grid
    idx = grid.interior
    g = np.zeros(grid.num_nodes)
    lap = apply_p_laplacian(u, params.p).values
    g[idx] = u.values[idx] + lam * (lap[idx] - (u.values[idx] + eps) ** -params.delta)
    return g


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("delta", [0.5, 1.0, 2.0])
def test_discrete_manufactured(p, delta):
    grid = build_grid(1, 1.0, 61)
    params = ProblemParams(p, delta)
    u_star = grid.evaluate(lambda x: np.sin(math.pi * x) ** (2 / 3) + x * (1 - x))
    lam = 0.05
    g = manufactured_g(u_star, params, lam)
    if np.any(g[grid.interior] < 0):
        pytest.skip("negative data for this combination")
    u, rep = solve_singular(grid, params, lam, g, tol=TOL)
    assert rep.converged
    assert np.max(np.abs(u.values - u_star.values)) <= 1e-7 * np.max(u_star.values)


def test_manufactured_2d_regularized():
    grid = build_grid(2, 1.0, 17)
    params = ProblemParams(2.0, 1.5)
    u_star = grid.evaluate(lambda x, y: 4 * x * (1 - x) * y * (1 - y))
    g = manufactured_g(u_star, params, 0.1, eps=0.05)
    u = solve_regularized(grid, params, 0.1, 0.05, g, tol=TOL)
    assert np.max(np.abs(u.values - u_star.values)) <= 1e-8


def test_continuum_refinement():
    # u = sin(pi x) solves the p = 2 resolvent for g = u + λ(π² u - u^{-1/2})
    params = ProblemParams(2.0, 0.5)
    lam = 1.0
    errs = []
    for n in (41, 81, 161, 321):
        grid = build_grid(1, 1.0, n)
        s = np.sin(math.pi * grid.coords[:, 0])
        idx = grid.interior
        g = np.zeros(grid.num_nodes)
        g[idx] = s[idx] + lam * (math.pi**2 * s[idx] - s[idx] ** -0.5)
        u, _ = solve_singular(grid, params, lam, g, tol=TOL)
        errs.append(np.max(np.abs(u.values - s)))
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(rates) > 1.8, (errs, rates)


def test_deterministic():
    grid = build_grid(1, 1.0, 51)
    params = ProblemParams(1.5, 2.0)
    a, _ = solve_singular(grid, params, 1.0, 1.0)
    b, _ = solve_singular(grid, params, 1.0, 1.0)
    assert np.array_equal(a.values, b.values)


def test_eps_zero_needs_small_delta():
    grid = build_grid(1, 1.0, 11)
    with pytest.raises(ValueError):
        solve_regularized(grid, ProblemParams(2.0, 1.0), 1.0, 0.0, 1.0)
    u = solve_regularized(grid, ProblemParams(2.0, 0.5), 1.0, 0.0, 1.0)
    assert np.all(u.values[grid.interior] > 0)


def test_negative_lambda():
    grid = build_grid(1, 1.0, 11)
    with pytest.raises(ValueError):
        solve_singular(grid, ProblemParams(2.0, 0.5), -1.0, 1.0)


def test_report_contents():
    grid = build_grid(1, 1.0, 51)
    _, rep = solve_singular(grid, ProblemParams(2.0, 2.0), 1.0, 0.5)
    assert rep.converged and rep.residual <= TOL
    assert rep.eps_schedule[-1] == 0.0
    assert all(a > b for a, b in zip(rep.eps_schedule, rep.eps_schedule[1:]))
    assert rep.cone[0] > 0
    assert '"residual"' in rep.to_json()


@settings(max_examples=8, deadline=None)
@given(
    p=st.sampled_from([1.5, 2.0, 3.0]),
    delta=st.sampled_from([0.5, 1.0, 2.0]),
    eps=st.floats(1e-3, 1e-1),
    shrink=st.floats(0.05, 0.9),
)
def test_eps_monotone(p, delta, eps, shrink):
    grid = build_grid(1, 1.0, 31)
    params = ProblemParams(p, delta)
    big = solve_regularized(grid, params, 1.0, eps, 1.0, tol=TOL)
    small = solve_regularized(grid, params, 1.0, eps * shrink, 1.0, tol=TOL)
    assert np.all(big.values <= small.values + 1e-8)
    assert np.all(small.values + eps * shrink <= big.values + eps + 1e-8)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.sampled_from([1.5, 2.0, 3.0]), lam=st.sampled_from([0.01, 1.0, 100.0]))
def test_accretive(seed, p, lam):
    r = np.random.default_rng(seed)
    grid = build_grid(1, 1.0, 31)
    params = ProblemParams(p, 1.0)
    f, g = r.uniform(0, 2, grid.num_nodes), r.uniform(0, 2, grid.num_nodes)
    uf, _ = solve_singular(grid, params, lam, f, tol=TOL)
    ug, _ = solve_singular(grid, params, lam, g, tol=TOL)
    assert np.max(np.abs(uf.values - ug.values)) <= np.max(np.abs(f - g)[grid.interior]) + 1e-7


def test_comparison_report():
    grid = build_grid(1, 1.0, 41)
    params = ProblemParams(2.0, 2.0)
    u1, _ = solve_singular(grid, params, 1.0, 0.2)
    u2, _ = solve_singular(grid, params, 1.0, 0.8)
    res = check_weak_comparison(u1, u2)
    assert res["pass"] and res["max_diff"] <= 0
    assert not check_weak_comparison(u2, u1)["pass"]


@pytest.mark.parametrize("delta", [0.5, 2.0])
def test_homogeneous_symmetry_and_scaling(delta):
    p = 2.0
    g1 = build_grid(1, 1.0, 81)
    g2 = build_grid(1, 2.0, 81)
    U1 = solve_homogeneous_U(g1, p, delta)
    U2 = solve_homogeneous_U(g2, p, delta)
    assert np.allclose(U1.values, U1.values[::-1], atol=1e-9)
    # U_L(x) = L^{p/(δ+p-1)} U_1(x/L) holds exactly for the discrete operator
    factor = 2.0 ** (p / (delta + p - 1))
    assert np.allclose(U2.values, factor * U1.values, rtol=1e-7, atol=1e-10)


def test_stationary_without_reaction_is_U():
    grid = build_grid(1, 1.0, 81)
    params = ProblemParams(2.0, 0.5)
    u, _ = solve_stationary_Q(grid, params)
    U = solve_homogeneous_U(grid, 2.0, 0.5)
    assert np.max(np.abs(u.values - U.values)) <= 1e-7


def test_stationary_unique_from_both_barriers():
    grid = build_grid(1, 1.0, 81)
    params = ProblemParams(2.0, 0.5, ReactionSpec.saturating())
    bar = build_barriers(grid, params)
    lo, _ = solve_stationary_Q(grid, params, barriers=bar, u_start=bar.under)
    hi, _ = solve_stationary_Q(grid, params, barriers=bar, u_start=bar.over)
    assert np.max(np.abs(lo.values - hi.values)) <= 1e-7
    assert bar.contains(lo, 1e-8)
    r = stationary_residual(lo, params).values[grid.interior]
    assert np.max(np.abs(r)) <= 1e-6 * np.max(lo.values[grid.interior] ** -0.5)


def test_stationary_increasing_reaction():
    grid = build_grid(1, 1.0, 61)
    params = ProblemParams(2.0, 1.0, ReactionSpec.power(1.0, 0.5))
    u, rep = solve_stationary_Q(grid, params)
    assert rep.converged and rep.iterations > 1
    assert np.all(u.values[grid.interior] > 0)


def test_solver_error_carries_report():
    err = SolverError("boom", None)
    assert isinstance(err, RuntimeError)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_manufactured_away_from_zero(p):
    # 1 + sin(pi x) at interior nodes, zero Dirichlet trace
    grid = build_grid(1, 1.0, 41)
    params = ProblemParams(p, 2.0)
    u_star = grid.evaluate(lambda x: 1 + np.sin(math.pi * x))
    lam, eps = 0.3, 0.01
    g = manufactured_g(u_star, params, lam, eps)
    u = solve_regularized(grid, params, lam, eps, g, tol=TOL)
    assert np.max(np.abs(u.values - u_star.values)) <= 1e-8


def _nested_sup(coarse, fine):
    return float(np.max(np.abs(coarse.values - fine.values[::2])))


def test_resolvent_self_convergence():
    params = ProblemParams(2.0, 0.5)
    sols = []
    for n in (101, 201, 401):
        u, rep = solve_singular(build_grid(1, 1.0, n), params, 1.0, 0.0, tol=TOL)
        assert rep.cone[0] > 0
        sols.append(u)
    d1, d2 = _nested_sup(sols[0], sols[1]), _nested_sup(sols[1], sols[2])
    assert math.log2(d1 / d2) >= 1.0


def test_stationary_self_convergence():
    params = ProblemParams(2.0, 1.5, ReactionSpec.saturating())
    sols = [solve_stationary_Q(build_grid(1, 1.0, n), params, tol=TOL)[0] for n in (101, 201, 401)]

    def l1(coarse, fine):
        return float(np.sum(coarse.grid.mass * np.abs(coarse.values - fine.values[::2])))

    assert math.log2(l1(sols[0], sols[1]) / l1(sols[1], sols[2])) >= 1.0
    # the sup-norm rate is capped by the boundary layer d^β, β = 0.8 here
    rate_sup = math.log2(_nested_sup(sols[0], sols[1]) / _nested_sup(sols[1], sols[2]))
    assert rate_sup == pytest.approx(params.beta, abs=0.05)


def test_comparison_examples():
    grid = build_grid(1, 1.0, 61)
    params = ProblemParams(2.0, 1.0)
    g = np.full(grid.num_nodes, 0.5)
    u, _ = solve_singular(grid, params, 1.0, g)
    assert check_weak_comparison(u, u)["max_diff"] == 0.0
    bump = np.exp(-50 * (grid.coords[:, 0] - 0.4) ** 2)
    v, _ = solve_singular(grid, params, 1.0, g + bump)
    assert check_weak_comparison(u, v)["pass"]


def test_barriers_bracket_stationary_solution():
    grid = build_grid(1, 1.0, 101)
    params = ProblemParams(3.0, 2.0, ReactionSpec.saturating(2.0))
    bar = build_barriers(grid, params)
    u, _ = solve_stationary_Q(grid, params, barriers=bar)
    assert check_weak_comparison(bar.under, u)["pass"]
    assert check_weak_comparison(u, bar.over)["pass"]
