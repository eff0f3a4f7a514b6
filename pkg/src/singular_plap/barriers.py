"""Cone profiles and certified sub/supersolution pairs.

A pair is certified when, at every interior node,

    -Δ_p^h u̲ - (u̲ + ε)^{-δ} + L_low    <= 0,
    -Δ_p^h ū - (ū + ε)^{-δ} - F_up(ū)   >= 0,

where ``L_low`` bounds the data from below and ``F_up`` bounds them from
above (a constant ``B`` for a forcing with ``|h| <= B``, the reaction's
upper envelope ``sup_{[0, ū]} f`` for reaction problems, or both).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import bisect

from .domain import Grid, GridFunction
from .params import ProblemParams, ReactionSpec
from .plap import EigenPair, apply_p_laplacian, first_eigenpair

log = logging.getLogger(__name__)

ETA_MIN, M_MAX = 1e-12, 1e12


class BarrierSearchError(RuntimeError):
    pass


@dataclass
class ConeProfile:
    regime: str
    p: float
    delta: float
    k: float
    profile: GridFunction
    upper: GridFunction

    @property
    def grid(self) -> Grid:
        return self.profile.grid


def cone_profile(grid: Grid, p: float, delta: float, k: float | None = None) -> ConeProfile:
    """Boundary profile ``d``, ``d log^{1/p}(k/d)`` or ``d^{p/(δ+p-1)}``."""
    if p <= 1 or delta <= 0:
        raise ValueError("need p > 1 and delta > 0")
    d = grid.dist
    if k is None:
        k = 2.0 * math.e * float(d.max())
    inner = grid.interior
    prof = np.zeros(grid.num_nodes)
    up = np.zeros(grid.num_nodes)
    if delta < 1:
        regime = "delta_lt_1"
        prof[inner] = d[inner]
        up[inner] = d[inner]
    elif delta == 1:
        regime = "delta_eq_1"
        if k <= math.exp(1.0 / p) * float(d.max()):
            raise ValueError("k must exceed e^{1/p} max d")
        prof[inner] = d[inner] * np.log(k / d[inner]) ** (1.0 / p)
        up[inner] = prof[inner]
    else:
        regime = "delta_gt_1"
        beta = p / (delta + p - 1.0)
        prof[inner] = d[inner] ** beta
        up[inner] = d[inner] ** beta + d[inner]
    return ConeProfile(regime, p, delta, float(k), GridFunction(grid, prof), GridFunction(grid, up))


def cone_fit(u: GridFunction, profile: ConeProfile) -> tuple[float, float]:
    """``(c1, c2)`` with ``c1 φ <= u <= c2 φ_up`` at interior nodes; ``c1 > 0`` means membership."""
    idx = u.grid.interior
    v = u.values[idx]
    c1 = float(np.min(v / profile.profile.values[idx]))
    c2 = float(np.max(v / profile.upper.values[idx]))
    return max(c1, 0.0), c2


@dataclass
class BarrierPair:
    under: GridFunction
    over: GridFunction
    eta: float
    M: float
    residual_under: GridFunction
    residual_over: GridFunction
    p: float = 2.0
    delta: float = 1.0
    eps: float = 0.0
    lower_term: float = 0.0
    bound_B: float | None = None
    reaction: ReactionSpec | None = None

    @property
    def certified(self) -> bool:
        idx = self.under.grid.interior
        return bool(
            np.all(self.residual_under.values[idx] <= 0)
            and np.all(self.residual_over.values[idx] >= 0)
            and np.all(self.under.values[idx] > 0)
            and np.all(self.under.values <= self.over.values)
        )

    def recheck(self) -> bool:
        """Recompute both residuals from scratch and test their signs."""
        ru = sub_residual(self.under, self.p, self.delta, self.lower_term, self.eps)
        ro = super_residual(self.over, self.p, self.delta, self._envelope, self.eps)
        idx = self.under.grid.interior
        return bool(np.all(ru.values[idx] <= 0) and np.all(ro.values[idx] >= 0))

    def _envelope(self, v: np.ndarray) -> np.ndarray:
        return _envelope_fn(self.bound_B, self.reaction)(v)

    def contains(self, u: GridFunction, slack: float = 0.0) -> bool:
        return bool(
            np.all(u.values >= self.under.values - slack) and np.all(u.values <= self.over.values + slack)
        )

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "under", "over", "residual_under", "residual_over"])
            for k in range(self.under.grid.num_nodes):
                w.writerow(
                    [
                        k,
                        repr(float(self.under.values[k])),
                        repr(float(self.over.values[k])),
                        repr(float(self.residual_under.values[k])),
                        repr(float(self.residual_over.values[k])),
                    ]
                )


# ---------------------------------------------------------------------------
# certificates


def sub_residual(u: GridFunction, p: float, delta: float, lower_term: float, eps: float = 0.0) -> GridFunction:
    """Nodal ``-Δ_p^h u - (u+ε)^{-δ} + L_low``; zero on the boundary."""
    grid = u.grid
    idx = grid.interior
    out = np.zeros(grid.num_nodes)
    out[idx] = apply_p_laplacian(u, p).values[idx] - (u.values[idx] + eps) ** (-delta) + lower_term
    return GridFunction(grid, out)


def super_residual(u: GridFunction, p: float, delta: float, envelope, eps: float = 0.0) -> GridFunction:
    """Nodal ``-Δ_p^h u - (u+ε)^{-δ} - F_up(u)``; zero on the boundary."""
    grid = u.grid
    idx = grid.interior
    v = u.values[idx]
    out = np.zeros(grid.num_nodes)
    out[idx] = apply_p_laplacian(u, p).values[idx] - (v + eps) ** (-delta) - envelope(v)
    return GridFunction(grid, out)


def _envelope_fn(bound_B: float | None, reaction: ReactionSpec | None):
    B = 0.0 if bound_B is None else float(bound_B)
    if reaction is None or reaction.kind == "none":
        return lambda v: np.full_like(v, B)
    return lambda v: B + reaction.upper_envelope(v)


def _lower_term(bound_B: float | None, reaction: ReactionSpec | None) -> float:
    B = 0.0 if bound_B is None else float(bound_B)
    return B + (0.0 if reaction is None else reaction.lower_bound)


# ---------------------------------------------------------------------------
# reference fields (cached per grid shape)

_EIG_CACHE: dict = {}
_U_CACHE: dict = {}


def _grid_key(grid: Grid) -> tuple:
    return (grid.dim, tuple(grid.extent), tuple(grid.n))


def reference_eigenfunction(grid: Grid, p: float) -> EigenPair:
    key = (_grid_key(grid), float(p))
    if key not in _EIG_CACHE:
        _EIG_CACHE[key] = first_eigenpair(grid, p)
    return _EIG_CACHE[key]


def reference_U(grid: Grid, p: float, delta: float) -> GridFunction:
    from .elliptic import solve_homogeneous_U

    key = (_grid_key(grid), float(p), float(delta))
    if key not in _U_CACHE:
        _U_CACHE[key] = solve_homogeneous_U(grid, p, delta)
    return _U_CACHE[key]


def _unit_phi(grid: Grid, p: float, eig: EigenPair | None) -> np.ndarray:
    eig = eig if eig is not None else reference_eigenfunction(grid, p)
    phi = eig.phi1.values
    return phi / phi.max()


def _log_shape(phi: np.ndarray, A: float, p: float) -> np.ndarray:
    out = np.zeros_like(phi)
    pos = phi > 0
    out[pos] = phi[pos] * np.log(A / phi[pos]) ** (1.0 / p)
    return out


# ---------------------------------------------------------------------------
# searches


def _search(make, certify, start: float, factor: float, limit: float, what: str):
    """Scale ``start`` by ``factor`` until ``certify(make(s))`` holds."""
    s = start
    last = None
    while (factor < 1 and s >= limit) or (factor > 1 and s <= limit):
        cand = make(s)
        ok, worst = certify(cand)
        if ok:
            return s, cand
        last = worst
        s *= factor
    raise BarrierSearchError(
        f"{what} search exhausted at {limit:g}; worst violating node {last}. "
        "delta may be too close to the threshold for this grid, or bound_B is inconsistent"
    )


def _finish(grid, p, delta, eps, eta, M, under, over, lower, env, bound_B, reaction) -> BarrierPair:
    ru = sub_residual(GridFunction(grid, under), p, delta, lower, eps)
    ro = super_residual(GridFunction(grid, over), p, delta, env, eps)
    return BarrierPair(
        under=GridFunction(grid, under),
        over=GridFunction(grid, over),
        eta=eta,
        M=M,
        residual_under=ru,
        residual_over=ro,
        p=p,
        delta=delta,
        eps=eps,
        lower_term=lower,
        bound_B=bound_B,
        reaction=reaction,
    )


def _check_inputs(params: ProblemParams, bound_B):
    if bound_B is not None and not bound_B > 0:
        raise ValueError("bound_B must be positive (omit it for pure reaction problems)")
    if not params.below_threshold:
        raise ValueError(
            f"no W^(1,p)_0 barriers for delta = {params.delta} >= delta* = {params.delta_star}"
        )


def _pair_search(grid, params, eps, shape_under, shape_over, lower, env, u0, eta0=1.0, M0=1.0):
    p, delta = params.p, params.delta
    idx = grid.interior
    u0v = None if u0 is None else u0.values

    def cert_under(vals):
        if np.any(vals[idx] <= 0):
            return False, int(idx[np.argmin(vals[idx])])
        r = sub_residual(GridFunction(grid, vals), p, delta, lower, eps).values[idx]
        if u0v is not None and np.any(vals[idx] > u0v[idx]):
            return False, int(idx[np.argmax(vals[idx] - u0v[idx])])
        return bool(np.all(r <= 0)), int(idx[np.argmax(r)])

    eta, under = _search(shape_under, cert_under, eta0, 0.5, ETA_MIN, "eta")

    def cert_over(vals):
        r = super_residual(GridFunction(grid, vals), p, delta, env, eps).values[idx]
        if np.any(vals < under):
            return False, int(np.argmax(under - vals))
        if u0v is not None and np.any(vals < u0v):
            return False, int(np.argmax(u0v - vals))
        return bool(np.all(r >= 0)), int(idx[np.argmin(r)])

    M, over = _search(shape_over, cert_over, M0, 2.0, M_MAX, "M")
    return eta, M, under, over


def build_barriers(
    grid: Grid,
    params: ProblemParams,
    bound_B: float | None = None,
    *,
    u0: GridFunction | None = None,
    eig: EigenPair | None = None,
    A: float | None = None,
) -> BarrierPair:
    """Certified ``(u̲, ū)`` for the unregularized problem.

    ``bound_B`` bounds a forcing ``|h| <= B``; the reaction of ``params``
    (if any) enters through its lower bound and upper envelope.  With
    ``u0`` the search continues until ``u̲ <= u0 <= ū``.
    """
    _check_inputs(params, bound_B)
    p, delta = params.p, params.delta
    reaction = params.reaction
    lower = _lower_term(bound_B, reaction)
    env = _envelope_fn(bound_B, reaction)
    phi = _unit_phi(grid, p, eig)
    has_reaction = reaction.kind != "none"
    if delta < 1:
        U = reference_U(grid, p, delta).values
        shape_u, shape_o = phi, U
    elif delta == 1:
        A = 2.0 * math.e if A is None else A
        shape_u = shape_o = _log_shape(phi, A, p)
    else:
        shape_u = phi ** params.beta
        shape_o = phi + shape_u if has_reaction else shape_u
    eta, M, under, over = _pair_search(
        grid, params, 0.0, lambda s: s * shape_u, lambda s: s * shape_o, lower, env, u0
    )
    return _finish(grid, p, delta, 0.0, eta, M, under, over, lower, env, bound_B, reaction)


def solve_eps_prime(eps: float, A: float, p: float) -> float:
    """Root ``ε'`` of ``ε = ε' ln^{1/p}(A/ε')`` on ``(0, A/e)`` by bisection."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    top = A / math.e
    if eps >= top:
        raise ValueError(f"eps = {eps} too large: need eps < A/e = {top}")

    def psi(x):
        return (x * math.log(A / x) ** (1.0 / p) if x > 0 else 0.0) - eps

    return bisect(psi, 0.0, top, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=4000)


def build_eps_barriers(
    grid: Grid,
    params: ProblemParams,
    eps: float,
    bound_B: float | None = None,
    *,
    eta: float | None = None,
    M: float | None = None,
    eig: EigenPair | None = None,
    A: float | None = None,
) -> BarrierPair:
    """Certified pair for ``(P_ε)``.

    δ > 1: ``η[(φ₁ + ε^{1/β})^β - ε]`` and the same with ``M``.
    δ = 1: ``(sφ₁ + ε')ln^{1/p}(A_s/(sφ₁+ε')) - ε' ln^{1/p}(A_s/ε')`` with
    ``A_s = sA`` for ``s ∈ {η, M}``, whose ε → 0 limit is the unregularized
    profile ``s φ₁ ln^{1/p}(A/φ₁)``.
    δ < 1 reuses the unregularized pair.

    Without ``eta``/``M`` the search starts from the unregularized pair's
    constants.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    _check_inputs(params, bound_B)
    p, delta = params.p, params.delta
    if delta < 1:
        return build_barriers(grid, params, bound_B, eig=eig)
    reaction = params.reaction
    lower = _lower_term(bound_B, reaction)
    env = _envelope_fn(bound_B, reaction)
    phi = _unit_phi(grid, p, eig)
    if eta is None or M is None:
        base = build_barriers(grid, params, bound_B, eig=eig, A=A)
        eta = base.eta if eta is None else eta
        M = base.M if M is None else M
    if delta == 1:
        A = 2.0 * math.e if A is None else A

        def shape(s):
            As = s * A
            ep = solve_eps_prime(eps, As, p)
            w = s * phi + ep
            out = w * np.log(As / w) ** (1.0 / p) - ep * math.log(As / ep) ** (1.0 / p)
            out[grid.boundary_mask] = 0.0
            return out

        make_u = make_o = shape
    else:
        beta = params.beta
        base_shape = (phi + eps ** (1.0 / beta)) ** beta - eps
        base_shape[grid.boundary_mask] = 0.0
        make_u = make_o = lambda s: s * base_shape  # noqa: E731
    eta, M, under, over = _pair_search(grid, params, eps, make_u, make_o, lower, env, None, eta, M)
    return _finish(grid, p, delta, eps, eta, M, under, over, lower, env, bound_B, reaction)
