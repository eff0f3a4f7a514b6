"""Implicit Euler (Rothe) time stepping through the singular resolvent.

One step solves ``u^n - Δt(Δ_p u^n + (u^n)^{-δ}) = Δt h^n + u^{n-1}``;
for reaction problems ``h^n = f(u^{n-1})`` (the reaction is lagged).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .domain import Grid, GridFunction, integrate, norm_Linf, norm_Lq
from .elliptic import DEFAULT_TOL, solve_singular
from .params import ProblemParams
from .plap import dirichlet_energy, energy_gradient

log = logging.getLogger(__name__)

_GAUSS_X = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 9.0


def _as_nodal(grid: Grid, value) -> np.ndarray:
    if isinstance(value, GridFunction):
        return value.values
    return np.broadcast_to(np.asarray(value, dtype=float), (grid.num_nodes,)).astype(float)


def forcing_average(grid: Grid, h, n: int, dt: float) -> GridFunction:
    """``h^n = (1/Δt) ∫_{t_{n-1}}^{t_n} h(τ) dτ`` by 3-point Gauss in time.

    ``h`` is a callable of ``t`` returning nodal values (array, scalar or
    GridFunction), or a time-independent field.
    """
    if not callable(h):
        return GridFunction(grid, _as_nodal(grid, h).copy(), dirichlet=False)
    a = (n - 1) * dt
    mid, half = a + 0.5 * dt, 0.5 * dt
    acc = np.zeros(grid.num_nodes)
    for xg, wg in zip(_GAUSS_X, _GAUSS_W):
        acc += 0.5 * wg * _as_nodal(grid, h(mid + half * xg))
    return GridFunction(grid, acc, dirichlet=False)


@dataclass
class RotheTrajectory:
    dt: float
    steps: list[GridFunction]
    forcing_averages: list[GridFunction] = field(default_factory=list)
    kind: str = "St"

    @property
    def N(self) -> int:
        return len(self.steps) - 1

    @property
    def T(self) -> float:
        return self.N * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)

    @property
    def grid(self) -> Grid:
        return self.steps[0].grid

    def _locate(self, t: float) -> tuple[int, float]:
        if t < -1e-14 * max(1.0, self.T) or t > self.T * (1 + 1e-14) + 1e-300:
            raise ValueError(f"t = {t} outside [0, {self.T}]")
        if t <= 0:
            return 0, 1.0
        n = min(self.N, max(1, math.ceil(t / self.dt - 1e-12)))
        theta = (t - (n - 1) * self.dt) / self.dt
        return n, min(max(theta, 0.0), 1.0)

    def piecewise_constant(self, t: float) -> GridFunction:
        """``u_Δt(t) = u^n`` on ``(t_{n-1}, t_n]``."""
        n, _ = self._locate(t)
        return self.steps[n]

    def piecewise_linear(self, t: float) -> GridFunction:
        """``ũ_Δt``: linear interpolation of ``u^{n-1}, u^n``."""
        n, theta = self._locate(t)
        if n == 0:
            return self.steps[0]
        a, b = self.steps[n - 1].values, self.steps[n].values
        return self.steps[n].with_values(a + theta * (b - a))

    def interpolant_gap(self) -> float:
        """``sup_t |u_Δt - ũ_Δt|_{L²} = max_n |u^n - u^{n-1}|_{L²}``."""
        return max(
            (norm_Lq(b.with_values(b.values - a.values), 2) for a, b in zip(self.steps, self.steps[1:])),
            default=0.0,
        )

    def time_derivative_linf(self) -> float:
        return max(
            (norm_Linf(b.values - a.values) / self.dt for a, b in zip(self.steps, self.steps[1:])),
            default=0.0,
        )

    def write_snapshots(self, directory, times) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for t in times:
            path = directory / f"u_t{t:.6g}.csv"
            self.piecewise_constant(t).to_csv(path)
            out.append(path)
        return out


# ---------------------------------------------------------------------------
# energy ledger


def singular_potential(u: GridFunction, delta: float) -> float:
    """``-(1/(1-δ)) ∫ u^{1-δ}``, or ``-∫ log u`` for δ = 1 (interior nodes only)."""
    grid = u.grid
    idx = grid.interior
    v = u.values[idx]
    m = grid.mass[idx]
    if delta == 1:
        return -float(np.add.reduce(m * np.log(v)))
    return -float(np.add.reduce(m * v ** (1.0 - delta))) / (1.0 - delta)


def _singular_slope(u: GridFunction, delta: float) -> np.ndarray:
    """Nodal derivative ``-u^{-δ}`` of the singular potential (interior)."""
    out = np.zeros(u.grid.num_nodes)
    idx = u.grid.interior
    out[idx] = -u.values[idx] ** (-delta)
    return out


@dataclass
class EnergyRecord:
    n: int
    t: float
    kinetic: float
    kinetic_cum: float
    dirichlet: float
    singular_potential: float
    reaction_potential: float
    forcing_work: float
    forcing_work_cum: float
    energy_defect: float
    convexity_dirichlet: float
    convexity_singular: float
    convexity_scale: float


@dataclass
class EnergyLedger:
    records: list[EnergyRecord]
    initial_energy: float
    scale: float

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k):
        return self.records[k]

    def max_defect(self) -> float:
        return max((r.energy_defect for r in self.records), default=0.0)

    def defect_ok(self, rel: float = 1e-8) -> bool:
        return self.max_defect() <= rel * self.scale

    def convexity_ok(self, rel: float = 1e-12) -> bool:
        return all(
            r.convexity_dirichlet <= rel * r.convexity_scale and r.convexity_singular <= rel * r.convexity_scale
            for r in self.records
        )

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = [
            "n",
            "t",
            "kinetic_cum",
            "dirichlet",
            "singular_potential",
            "reaction_potential",
            "forcing_work_cum",
            "energy_defect",
        ]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.records:
                w.writerow([r.n] + [repr(float(getattr(r, c))) for c in cols[1:]])


class _LedgerBuilder:
    def __init__(self, params: ProblemParams, u0: GridFunction, dt: float):
        self.p, self.delta, self.f = params.p, params.delta, params.reaction
        self.dt = dt
        self.E0 = dirichlet_energy(u0, self.p)
        self.S0 = singular_potential(u0, self.delta)
        self.kin = 0.0
        self.work = 0.0
        self.scale = abs(self.E0) + abs(self.S0)
        idx = u0.grid.interior
        self.records = [
            EnergyRecord(
                0, 0.0, 0.0, 0.0, self.E0, self.S0, -float(np.add.reduce(u0.grid.mass[idx] * self.f.primitive(u0.values[idx]))),
                0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
            )
        ]

    def add(self, n: int, prev: GridFunction, cur: GridFunction, h_n: GridFunction) -> EnergyRecord:
        grid = cur.grid
        idx = grid.interior
        m = grid.mass[idx]
        du = cur.values - prev.values
        kinetic = float(np.add.reduce(m * du[idx] ** 2)) / self.dt
        work = float(np.add.reduce(m * h_n.values[idx] * du[idx]))
        self.kin += kinetic
        self.work += work
        E_prev, E_cur = dirichlet_energy(prev, self.p), dirichlet_energy(cur, self.p)
        S_prev, S_cur = singular_potential(prev, self.delta), singular_potential(cur, self.delta)
        pair_E = float(energy_gradient(grid, cur.values, self.p) @ du)
        pair_S = float(np.add.reduce(m * _singular_slope(cur, self.delta)[idx] * du[idx]))
        conv_E = (E_cur - E_prev) - pair_E
        conv_S = (S_cur - S_prev) - pair_S
        cscale = abs(E_cur) + abs(E_prev) + abs(S_cur) + abs(S_prev) + abs(pair_E) + abs(pair_S)
        defect = self.kin + E_cur + S_cur - self.E0 - self.S0 - self.work
        self.scale = max(self.scale, self.kin + abs(E_cur) + abs(S_cur) + abs(self.E0) + abs(self.S0) + abs(self.work))
        R_cur = -float(np.add.reduce(m * self.f.primitive(cur.values[idx])))
        rec = EnergyRecord(
            n, n * self.dt, kinetic, self.kin, E_cur, S_cur, R_cur, work, self.work, defect, conv_E, conv_S, cscale
        )
        self.records.append(rec)
        return rec

    def ledger(self) -> EnergyLedger:
        return EnergyLedger(self.records, self.E0 + self.S0, self.scale)


# ---------------------------------------------------------------------------
# steps and drivers


def rothe_step(
    u_prev: GridFunction,
    dt: float,
    h_n,
    params: ProblemParams,
    barriers=None,
    *,
    tol: float = DEFAULT_TOL,
) -> GridFunction:
    """``solve_singular(λ = Δt, g = Δt h^n + u^{n-1})`` warm-started from ``u^{n-1}``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = u_prev.grid
    g = dt * _as_nodal(grid, h_n) + u_prev.values
    u, _ = solve_singular(grid, params, dt, g, tol=tol, barriers=barriers, u_init=u_prev)
    return u


def _check_initial(u0: GridFunction, params: ProblemParams) -> None:
    from .barriers import cone_fit, cone_profile

    if not params.below_threshold:
        raise ValueError(f"delta = {params.delta} must be below delta* = {params.delta_star}")
    if not u0.dirichlet:
        raise ValueError("initial datum must be a Dirichlet field")
    c1, _ = cone_fit(u0, cone_profile(u0.grid, params.p, params.delta))
    if not c1 > 0:
        raise ValueError("initial datum is not in the cone (c1 = 0)")


def _evolve(grid, params, u0, T, N, forcing: Callable[[int, GridFunction], GridFunction], barriers, tol, kind):
    if N < 1 or not T > 0:
        raise ValueError("need N >= 1 and T > 0")
    _check_initial(u0, params)
    dt = T / N
    steps = [u0]
    avgs: list[GridFunction] = []
    ledger = _LedgerBuilder(params, u0, dt)
    u = u0
    for n in range(1, N + 1):
        h_n = forcing(n, u)
        u_new = rothe_step(u, dt, h_n, params, barriers, tol=tol)
        ledger.add(n, u, u_new, h_n)
        steps.append(u_new)
        avgs.append(h_n)
        u = u_new
    traj = RotheTrajectory(dt, steps, avgs, kind)
    led = ledger.ledger()
    if not led.defect_ok():
        log.warning("energy inequality violated: defect %.3e (scale %.3e)", led.max_defect(), led.scale)
    return traj, led


def evolve_St(
    grid: Grid,
    params: ProblemParams,
    u0: GridFunction,
    h,
    T: float,
    N: int,
    *,
    barriers=None,
    tol: float = DEFAULT_TOL,
) -> tuple[RotheTrajectory, EnergyLedger]:
    """``u_t - Δ_p u = u^{-δ} + h(t, x)`` by ``N`` implicit Euler steps."""
    dt = T / N

    def forcing(n, _u):
        return forcing_average(grid, h, n, dt)

    return _evolve(grid, params, u0, T, N, forcing, barriers, tol, "St")


def evolve_Pt(
    grid: Grid,
    params: ProblemParams,
    u0: GridFunction,
    T: float,
    N: int,
    *,
    barriers=None,
    tol: float = DEFAULT_TOL,
) -> tuple[RotheTrajectory, EnergyLedger]:
    """``u_t - Δ_p u = u^{-δ} + f(u)`` with the reaction lagged by one step."""
    f = params.reaction

    def forcing(n, u):
        return GridFunction(grid, f(u.values), dirichlet=False)

    return _evolve(grid, params, u0, T, N, forcing, barriers, tol, "Pt")


def linf_stability_check(
    traj1: RotheTrajectory,
    traj2: RotheTrajectory,
    forcings: tuple[list, list] | None = None,
    *,
    omega: float = 0.0,
    tol: float = DEFAULT_TOL,
) -> dict:
    """Check ``|u₁^n - u₂^n|_∞ <= e^{ω t_n}|u₁⁰ - u₂⁰|_∞ + Σ_{m<=n} Δt |h₁^m - h₂^m|_∞``.

    ``forcings`` defaults to the trajectories' own forcing averages for
    ``(S_t)`` runs; reaction runs use the Gronwall form with ``omega``.
    """
    if traj1.N != traj2.N or traj1.dt != traj2.dt or not traj1.grid.same_as(traj2.grid):
        raise ValueError("trajectories must share grid, dt and N")
    dt = traj1.dt
    if forcings is None and traj1.kind == "St" and traj2.kind == "St":
        forcings = (traj1.forcing_averages, traj2.forcing_averages)
    interior = traj1.grid.interior
    d0 = norm_Linf((traj1.steps[0].values - traj2.steps[0].values)[interior])
    acc = 0.0
    lhs, bound = [0.0] * (traj1.N + 1), [0.0] * (traj1.N + 1)
    lhs[0] = bound[0] = d0
    worst = (0, math.inf)
    scale = max(1.0, max(norm_Linf(u.values) for u in traj1.steps + traj2.steps))
    for n in range(1, traj1.N + 1):
        if forcings is not None:
            a, b = forcings[0][n - 1], forcings[1][n - 1]
            acc += dt * norm_Linf((_as_nodal(traj1.grid, a) - _as_nodal(traj1.grid, b))[interior])
        diff = norm_Linf((traj1.steps[n].values - traj2.steps[n].values)[interior])
        bnd = math.exp(omega * n * dt) * d0 + acc
        slack = 10 * tol * scale * n
        lhs[n], bound[n] = diff, bnd
        margin = bnd + slack - diff
        if margin < worst[1]:
            worst = (n, margin)
    passes = worst[1] >= 0
    nonincreasing = all(b <= a + 10 * tol * scale for a, b in zip(lhs, lhs[1:]))
    return {
        "pass": bool(passes),
        "worst_n": worst[0],
        "worst_margin": float(worst[1]),
        "diff": lhs,
        "bound": bound,
        "nonincreasing": bool(nonincreasing),
    }


def l2_gap_series(traj1: RotheTrajectory, traj2: RotheTrajectory) -> np.ndarray:
    return np.array(
        [integrate(a.with_values((a.values - b.values) ** 2)) ** 0.5 for a, b in zip(traj1.steps, traj2.steps)]
    )
