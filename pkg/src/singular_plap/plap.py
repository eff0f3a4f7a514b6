"""Discrete p-Laplacian, Dirichlet energy and the first eigenpair.

``-Δ_p^h u`` is defined as ``M^{-1} ∇E(u)`` where
``E(u) = (1/p) Σ_pieces |∇_h u|^p vol`` and ``M`` is the lumped
(trapezoidal) mass.  With this choice ``integrate(apply_p_laplacian(u) * v)``
equals the directional derivative of ``E`` for every Dirichlet ``v``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import Grid, GridFunction, integrate, piece_gradients

log = logging.getLogger(__name__)


class EigenSolverError(RuntimeError):
    pass


def _flux_scale(mag: np.ndarray, p: float) -> np.ndarray:
    """``|g|^{p-2}`` with the degenerate value 0 where ``g == 0``."""
    out = np.zeros_like(mag)
    nz = mag > 0
    out[nz] = mag[nz] ** (p - 2.0)
    return out


def energy_gradient(grid: Grid, values: np.ndarray, p: float) -> np.ndarray:
    """Euclidean gradient of the discrete Dirichlet energy w.r.t. nodal values."""
    G, w = grid.gradient_pieces
    comps, mag = piece_gradients(grid, values)
    a = w * _flux_scale(mag, p)
    out = np.zeros(grid.num_nodes)
    for Gc, gc in zip(G, comps):
        out += Gc.T @ (a * gc)
    return out


def energy_hessian(grid: Grid, values: np.ndarray, p: float, mu: float | None = None) -> sp.csr_matrix:
    """Hessian of the Dirichlet energy, with ``|g|^2 -> |g|^2 + mu^2`` in the weights."""
    G, w = grid.gradient_pieces
    comps, mag = piece_gradients(grid, values)
    if mu is None:
        mu = 1e-10 * (1.0 + float(mag.max(initial=0.0)))
    r2 = mag**2 + mu**2
    s = w * r2 ** ((p - 2.0) / 2.0)
    t = (p - 2.0) / r2
    if len(G) == 1:
        (gx,) = comps
        return (G[0].T @ sp.diags(s * (1.0 + t * gx * gx)) @ G[0]).tocsr()
    gx, gy = comps
    axx = s * (1.0 + t * gx * gx)
    ayy = s * (1.0 + t * gy * gy)
    axy = s * t * gx * gy
    Gx, Gy = G
    H = Gx.T @ sp.diags(axx) @ Gx + Gy.T @ sp.diags(ayy) @ Gy
    H = H + Gx.T @ sp.diags(axy) @ Gy + Gy.T @ sp.diags(axy) @ Gx
    return H.tocsr()


def dirichlet_energy(u: GridFunction, p: float) -> float:
    """``(1/p) Σ_pieces |∇_h u|^p vol``."""
    _, w = u.grid.gradient_pieces
    _, mag = piece_gradients(u.grid, u.values)
    return float(np.add.reduce(w * mag**p)) / p


def apply_p_laplacian(u: GridFunction, p: float) -> GridFunction:
    """Nodal ``-Δ_p^h u``; boundary rows are zero."""
    if p <= 1:
        raise ValueError("p must be > 1")
    grid = u.grid
    out = energy_gradient(grid, u.values, p) / grid.mass
    out[grid.boundary_mask] = 0.0
    return GridFunction(grid, out, dirichlet=True)


def pairing(a: GridFunction, b: GridFunction) -> float:
    """Discrete L2 pairing ``∫ a b`` (trapezoidal)."""
    return integrate(a.with_values(a.values * b.values))


def stiffness_matrix(grid: Grid) -> sp.csr_matrix:
    """The p = 2 energy Hessian (discrete Dirichlet Laplacian, unscaled by mass)."""
    G, w = grid.gradient_pieces
    K = sum(Gc.T @ sp.diags(w) @ Gc for Gc in G)
    return K.tocsr()


# ---------------------------------------------------------------------------
# first eigenpair


@dataclass
class EigenPair:
    lambda1: float
    phi1: GridFunction
    p: float
    iterations: int
    residual: float
    clamped_nodes: int = 0

    def report(self) -> dict:
        return {
            "p": self.p,
            "lambda1": self.lambda1,
            "iterations": self.iterations,
            "residual": self.residual,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.report(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def boundary_constants(self) -> tuple[float, float]:
        """``(ell, L)`` with ``ell d <= phi1 <= L d`` at interior nodes."""
        grid = self.phi1.grid
        ratio = self.phi1.values[grid.interior] / grid.dist[grid.interior]
        return float(ratio.min()), float(ratio.max())


def rayleigh_quotient(u: GridFunction, p: float) -> float:
    num = p * dirichlet_energy(u, p)
    den = integrate(u.with_values(np.abs(u.values) ** p))
    return num / den


def eigen_residual(grid: Grid, values: np.ndarray, lam: float, p: float) -> float:
    """Relative nodal residual of ``-Δ_p φ = λ |φ|^{p-2} φ``."""
    u = GridFunction(grid, values)
    idx = grid.interior
    v = values[idx]
    r = apply_p_laplacian(u, p).values[idx] - lam * np.abs(v) ** (p - 1) * np.sign(v)
    scale = lam * np.max(np.abs(v)) ** (p - 1)
    return float(np.max(np.abs(r)) / scale)


def _metric(grid: Grid, x_full: np.ndarray, p: float, idx: np.ndarray) -> sp.csc_matrix:
    """Kačanov metric ``Gᵀ diag(w (|g|² + μ²)^{(p-2)/2}) G`` on interior nodes."""
    if p == 2:
        return stiffness_matrix(grid)[idx][:, idx].tocsc()
    G, w = grid.gradient_pieces
    _, mag = piece_gradients(grid, x_full)
    mu = 1e-2 * float(mag.max())
    a = w * (mag**2 + mu**2) ** ((p - 2.0) / 2.0)
    P = sum(Gc.T @ sp.diags(a) @ Gc for Gc in G)
    return P.tocsr()[idx][:, idx].tocsc()


def first_eigenpair(
    grid: Grid, p: float, tol: float = 1e-9, max_iter: int = 20000, refresh: int = 25
) -> EigenPair:
    """Minimise the Rayleigh quotient by projected Sobolev-gradient descent.

    The descent direction is the gradient of ``R(u) = ∫|∇u|^p / ∫|u|^p``
    in a Kačanov metric rebuilt from the current iterate every ``refresh``
    steps (for p = 2 this is the fixed H^1_0 metric).  Step lengths are
    Barzilai-Borwein in that metric; iterates are clamped at 0 and
    renormalised to ``∫ φ^p = 1`` after every step.

    Converged when the relative nodal residual drops below ``tol``; for
    p < 2 also when R changes by less than ``tol * R`` over 200 steps.
    """
    if p <= 1:
        raise ValueError("p must be > 1")
    idx = grid.interior
    m = grid.mass[idx]

    def embed(x):
        full = np.zeros(grid.num_nodes)
        full[idx] = x
        return full

    def normalise(x):
        return x / (np.add.reduce(m * x**p)) ** (1.0 / p)

    def grad_R(x):
        full = embed(x)
        D = p * dirichlet_energy(GridFunction(grid, full), p)
        N = float(np.add.reduce(m * x**p))
        R = D / N
        gD = p * energy_gradient(grid, full, p)[idx]
        gN = p * m * x ** (p - 1)
        return R, (gD - R * gN) / N

    x = normalise(grid.dist[idx].copy())
    P = _metric(grid, embed(x), p, idx)
    Plu = spla.splu(P)
    R, g = grad_R(x)
    d = -Plu.solve(g)
    alpha = 1.0 / max(R, 1e-300)
    x_prev = g_prev = None
    clamped = 0
    best = (math.inf, x, R)
    res = math.inf
    # p < 2: a zero-gradient cell makes the nodal residual ill-conditioned
    # (the flux is only Hölder), so we also stop once R has stagnated
    window = 200
    R_hist: list[float] = []
    for it in range(1, max_iter + 1):
        if x_prev is not None:
            s = x - x_prev
            y = g - g_prev
            sy = float(s @ y)
            if sy > 0:
                alpha = float(s @ (P @ s)) / sy
            else:
                alpha = min(10.0 * alpha, 1e6)
        x_prev, g_prev = x, g
        trial = x + alpha * d
        clamped = int(np.count_nonzero(trial <= 0))
        # positivity projection
        trial = np.maximum(trial, 1e-300)
        x = normalise(trial)
        R, g = grad_R(x)
        if p != 2 and it % refresh == 0:
            P = _metric(grid, embed(x), p, idx)
            Plu = spla.splu(P)
        d = -Plu.solve(g)
        if it % 5 == 0 or it < 5:
            res = eigen_residual(grid, embed(x), R, p)
            if res < best[0]:
                best = (res, x.copy(), R)
            if res < tol:
                break
        if p < 2:
            R_hist.append(R)
            if len(R_hist) > window:
                R_old = R_hist.pop(0)
                if abs(R_old - R) <= tol * R and res < 1e-1:
                    log.info("first_eigenpair: R stagnated (res %.2e, p=%g)", res, p)
                    break
    else:
        it = max_iter
        drift = abs(R_hist[0] - R) / R if len(R_hist) > 1 else math.inf
        if p < 2 and drift <= math.sqrt(tol):
            res = eigen_residual(grid, embed(x), R, p)
            log.warning(
                "first_eigenpair: accepted on R stagnation %.1e (residual %.2e, p=%g)", drift, res, p
            )
        else:
            res, x, R = best
            if res > 1e3 * tol:
                raise EigenSolverError(
                    f"first_eigenpair: no convergence after {max_iter} iterations (p={p}), "
                    f"last residual {res:.3e}"
                )
            log.warning("first_eigenpair: stopped at residual %.3e (tol %.1e)", res, tol)
    phi = GridFunction(grid, embed(x))
    return EigenPair(
        lambda1=rayleigh_quotient(phi, p),
        phi1=phi,
        p=p,
        iterations=it,
        residual=res,
        clamped_nodes=clamped,
    )


# ---------------------------------------------------------------------------
# algebraic monotonicity inequalities


def sharp_constant(p: float) -> float:
    """Best constant of the pointwise vector inequality behind ``monotonicity_gap``.

    p >= 2:  (|a|^{p-2}a - |b|^{p-2}b)·(a-b) >= 2^{2-p} |a-b|^p
    p <  2:  (|a|^{p-2}a - |b|^{p-2}b)·(a-b) >= (p-1) 2^{2-p} |a-b|^2 / (|a|+|b|)^{2-p}

    Both are attained: at ``b = -a`` for p >= 2, and for p < 2 in the limit
    ``b -> a`` along the radial direction.
    """
    if p >= 2:
        return 2.0 ** (2.0 - p)
    return (p - 1.0) * 2.0 ** (2.0 - p)


def monotonicity_gap(u: GridFunction, v: GridFunction, p: float) -> tuple[float, float]:
    """``(lhs, rhs)`` with ``lhs = <-Δ_p u + Δ_p v, u - v>`` and ``lhs >= rhs``.

    ``rhs`` is ``C1 |u-v|^p_{W^{1,p}}`` for p >= 2, and for p < 2
    ``C2 |u-v|^2_{W^{1,p}} / (|u|_{W^{1,p}} + |v|_{W^{1,p}})^{2-p}``.
    """
    grid = u.grid
    diff = u.values - v.values
    lhs = float((energy_gradient(grid, u.values, p) - energy_gradient(grid, v.values, p)) @ diff)
    _, w = grid.gradient_pieces
    _, mag_d = piece_gradients(grid, diff)
    C = sharp_constant(p)
    if p >= 2:
        rhs = C * float(np.add.reduce(w * mag_d**p))
    else:
        _, mag_u = piece_gradients(grid, u.values)
        _, mag_v = piece_gradients(grid, v.values)
        nd = float(np.add.reduce(w * mag_d**p)) ** (1.0 / p)
        nu = float(np.add.reduce(w * mag_u**p)) ** (1.0 / p)
        nv = float(np.add.reduce(w * mag_v**p)) ** (1.0 / p)
        rhs = 0.0 if nd == 0.0 else C * nd**2 / (nu + nv) ** (2.0 - p)
    return lhs, rhs
