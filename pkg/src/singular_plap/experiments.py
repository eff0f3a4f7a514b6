"""Configuration-driven experiments with CSV series and a JSON run report."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .barriers import build_barriers
from .domain import Grid, GridFunction, build_grid, norm_Linf, seminorm_W1p
from .elliptic import DEFAULT_TOL, solve_singular, solve_stationary_Q, stationary_shift
from .params import ProblemParams, ReactionSpec
from .plap import first_eigenpair
from .rothe import evolve_Pt, evolve_St, l2_gap_series, linf_stability_check

log = logging.getLogger(__name__)

EXPERIMENTS = ("eigen", "stationary", "evolve", "stabilize", "contraction", "sharpness", "convergence")

# time horizon and step count used when the config leaves them unset
TIME_DEFAULTS = {
    "evolve": (1.0, 100),
    "stabilize": (5.0, 500),
    "contraction": (0.5, 500),
    "convergence": (0.1, 100),
}


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(s) for s in str(text).replace(";", ",").split(",") if s.strip()]


@dataclass
class ExperimentConfig:
    experiment: str = "eigen"
    dim: int = 1
    extent: str = "1.0"
    n: int = 101
    p: float = 2.0
    delta: float = 0.5
    reaction_kind: str = "saturating"
    reaction_params: str = "1.0"
    T: float | None = None
    N: int | None = None
    eps0: float | None = None
    tol: float = DEFAULT_TOL
    out: str = "runs"
    lam: float = 1.0
    deltas: str = "2.5,3.5"
    grids: str = "101,201,401,801"
    steps: str = "25,50,100,200"
    eigen_rel_tol: float = 0.01
    stabilize_tol: float = 1e-3
    slope_margin: float = 0.05
    asymptotic_margin: float = 0.30
    bounded_margin: float = 0.05
    dt_slope_margin: float = 0.2
    h_slope_min: float = 1.0

    # config-file keys that differ from attribute names
    _ALIASES = {"reaction.kind": "reaction_kind", "reaction.params": "reaction_params"}

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        """Parse flat ``key = value`` lines (``#`` starts a comment)."""
        return cls().updated(parse_key_values(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def updated(self, values: dict) -> "ExperimentConfig":
        kinds = {f.name: f.type for f in fields(self)}
        data = asdict(self)
        for key, raw in values.items():
            name = self._ALIASES.get(key, key)
            if name not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            if raw is None:
                continue
            data[name] = _coerce(kinds[name], raw)
        cfg = ExperimentConfig(**data)
        return cfg

    def with_defaults(self) -> "ExperimentConfig":
        T, N = TIME_DEFAULTS.get(self.experiment, (1.0, 100))
        return self.updated({"T": T if self.T is None else self.T, "N": N if self.N is None else self.N})

    # -- derived objects ----------------------------------------------------
    @property
    def reaction(self) -> ReactionSpec:
        return ReactionSpec.parse(self.reaction_kind, self.reaction_params)

    @property
    def params(self) -> ProblemParams:
        return ProblemParams(self.p, self.delta, self.reaction)

    def grid(self, n: int | None = None) -> Grid:
        return build_grid(self.dim, _floats(self.extent), self.n if n is None else n)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        self.params  # noqa: B018  (raises on invalid p, delta, reaction)
        self.grid()
        if self.T <= 0 or self.N < 1:
            raise ValueError("need T > 0 and N >= 1")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.eps0 is not None and not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        for d in _floats(self.deltas):
            ProblemParams(self.p, d)

    def echo(self) -> dict:
        return asdict(self)


def _coerce(kind, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    kind = str(kind)
    if "None" in kind and (raw in ("", "none", "None")):
        return None
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return str(raw)


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunReport:
    config: dict
    metrics: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    wall_time: float = 0.0
    outputs: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "metrics": _jsonable(self.metrics),
            "verdicts": self.verdicts,
            "passed": self.passed,
            "wall_time": self.wall_time,
            "outputs": self.outputs,
        }

    def write(self, directory) -> Path:
        path = Path(directory) / "report.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _write_series(path: Path, header: list[str], rows) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return str(path)


def loglog_slope(h, y) -> float:
    """Least-squares slope of ``log y`` against ``log h``."""
    return float(np.polyfit(np.log(np.asarray(h, float)), np.log(np.asarray(y, float)), 1)[0])


def increment_exponents(y) -> list[float]:
    """``log2(Δ_k / Δ_{k+1})`` for increments ``Δ_k = y_{k+1} - y_k`` on halving grids."""
    inc = np.diff(np.asarray(y, float))
    return [float(np.log2(abs(a) / abs(b))) for a, b in zip(inc, inc[1:]) if a != 0 and b != 0]


# ---------------------------------------------------------------------------
# experiments


def _eigen_oracle(grid: Grid, p: float) -> float | None:
    if grid.dim == 1:
        pi_p = 2 * math.pi / (p * math.sin(math.pi / p))
        return (p - 1) * pi_p**p / grid.extent[0] ** p
    if p == 2:
        return math.pi**2 * sum(1.0 / L**2 for L in grid.extent)
    return None


def run_eigen(cfg: ExperimentConfig) -> RunReport:
    out = Path(cfg.out)
    rep = RunReport(cfg.echo())
    grid = cfg.grid()
    eig = first_eigenpair(grid, cfg.p)
    eig.phi1.to_csv(out / "phi1.csv")
    eig.to_json(out / "eigen.json")
    rep.outputs += [str(out / "phi1.csv"), str(out / "eigen.json")]
    rep.metrics.update(eig.report())
    ell, L = eig.boundary_constants()
    rep.metrics["boundary_constants"] = [ell, L]
    oracle = _eigen_oracle(grid, cfg.p)
    rep.verdicts["phi1_positive"] = bool(np.all(eig.phi1.values[grid.interior] > 0))
    if oracle is not None:
        rel = abs(eig.lambda1 - oracle) / oracle
        rep.metrics.update(oracle=oracle, relative_error=rel)
        rep.verdicts["lambda1_matches_oracle"] = rel <= cfg.eigen_rel_tol
    return rep


def run_stationary(cfg: ExperimentConfig) -> RunReport:
    out = Path(cfg.out)
    rep = RunReport(cfg.echo())
    grid, params = cfg.grid(), cfg.params
    bar = build_barriers(grid, params)
    u, srep = solve_stationary_Q(grid, params, barriers=bar, tol=cfg.tol)
    u.to_csv(out / "u_inf.csv")
    bar.to_csv(out / "barriers.csv")
    rep.outputs += [str(out / "u_inf.csv"), str(out / "barriers.csv")]
    rep.metrics["solve"] = srep.to_dict()
    rep.metrics["eta"], rep.metrics["M"] = bar.eta, bar.M
    slack = 10 * cfg.tol * max(1.0, norm_Linf(u))
    rep.verdicts["converged"] = srep.converged and srep.residual <= cfg.tol
    rep.verdicts["sandwich"] = bar.contains(u, slack)
    rep.verdicts["in_cone"] = bool(srep.cone is not None and srep.cone[0] > 0)
    return rep


def run_evolve(cfg: ExperimentConfig) -> RunReport:
    out = Path(cfg.out)
    rep = RunReport(cfg.echo())
    grid, params = cfg.grid(), cfg.params
    bar = build_barriers(grid, params)
    u0 = bar.under.with_values(0.5 * (bar.under.values + bar.over.values))
    traj, led = evolve_Pt(grid, params, u0, cfg.T, cfg.N, barriers=bar, tol=cfg.tol)
    led.to_csv(out / "energy.csv")
    rep.outputs.append(str(out / "energy.csv"))
    rep.outputs += [str(p) for p in traj.write_snapshots(out / "snapshots", [0.0, cfg.T / 2, cfg.T])]
    slack = 10 * cfg.tol * max(1.0, norm_Linf(bar.over))
    rep.metrics.update(
        max_energy_defect=led.max_defect(),
        energy_scale=led.scale,
        interpolant_gap=traj.interpolant_gap(),
        max_time_derivative=traj.time_derivative_linf(),
    )
    rep.verdicts["energy_inequality"] = led.defect_ok(1e-8)
    rep.verdicts["convexity"] = led.convexity_ok(1e-12)
    rep.verdicts["sandwich"] = all(bar.contains(u, slack) for u in traj.steps)
    return rep


def _monotone(traj, sign: float, slack: float) -> bool:
    return all(np.min(sign * (b.values - a.values)) >= -slack for a, b in zip(traj.steps, traj.steps[1:]))


def run_stabilize(cfg: ExperimentConfig) -> RunReport:
    out = Path(cfg.out)
    rep = RunReport(cfg.echo())
    grid, params = cfg.grid(), cfg.params
    if not params.reaction.ratio_nonincreasing(params.p):
        raise ValueError("stabilization needs t -> f(t)/t^(p-1) nonincreasing")
    bar = build_barriers(grid, params)
    u_inf, srep = solve_stationary_Q(grid, params, barriers=bar, tol=cfg.tol)
    K = stationary_shift(params, bar)
    dt = cfg.T / cfg.N
    if K * dt >= 1:
        log.warning("dt = %g >= 1/K = %g: monotone trajectories are not guaranteed", dt, 1 / K)
    mid = bar.under.with_values(0.5 * (bar.under.values + bar.over.values))
    runs = {}
    for name, u0 in (("under", bar.under), ("over", bar.over), ("mid", mid)):
        runs[name], _ = evolve_Pt(grid, params, u0, cfg.T, cfg.N, barriers=bar, tol=cfg.tol)
    times = runs["mid"].times
    err = {k: [norm_Linf(u.values - u_inf.values) for u in tr.steps] for k, tr in runs.items()}
    header = ["t", "e_under", "e_over", "e_mid"]
    cols = [times, err["under"], err["over"], err["mid"]]
    smooth = params.p == 2 and params.delta < 3
    if smooth:
        w12 = [seminorm_W1p(u.with_values(u.values - u_inf.values), 2) for u in runs["mid"].steps]
        header.append("w12_mid")
        cols.append(w12)
        rep.metrics["w12_final"] = w12[-1]
    rep.outputs.append(_write_series(out / "decay.csv", header, zip(*cols)))
    u_inf.to_csv(out / "u_inf.csv")
    rep.outputs.append(str(out / "u_inf.csv"))
    slack = 10 * cfg.tol * max(1.0, norm_Linf(bar.over))
    bracket = all(
        np.all(a.values <= m.values + slack) and np.all(m.values <= b.values + slack)
        for a, m, b in zip(runs["under"].steps, runs["mid"].steps, runs["over"].steps)
    )
    rep.metrics.update(
        e_final={k: v[-1] for k, v in err.items()}, shift_K=K, stationary=srep.to_dict(), dt=dt
    )
    rep.verdicts["converges_to_u_inf"] = err["mid"][-1] < cfg.stabilize_tol
    rep.verdicts["under_start_nondecreasing"] = _monotone(runs["under"], 1.0, slack)
    rep.verdicts["over_start_nonincreasing"] = _monotone(runs["over"], -1.0, slack)
    rep.verdicts["bracketing"] = bool(bracket)
    return rep


def run_contraction(cfg: ExperimentConfig) -> RunReport:
    out = Path(cfg.out)
    rep = RunReport(cfg.echo())
    grid, params = cfg.grid(), cfg.params
    bar = build_barriers(grid, params)
    eig = first_eigenpair(grid, params.p)
    omega = 0.0 if params.reaction.nonincreasing else params.reaction.lipschitz(0.0, norm_Linf(bar.over))
    t1, _ = evolve_Pt(grid, params, bar.under, cfg.T, cfg.N, barriers=bar, tol=cfg.tol)
    t2, _ = evolve_Pt(grid, params, bar.over, cfg.T, cfg.N, barriers=bar, tol=cfg.tol)
    gap = l2_gap_series(t1, t2)
    times = t1.times
    rep.outputs.append(_write_series(out / "gap.csv", ["t", "l2_gap"], zip(times, gap)))
    linf = linf_stability_check(t1, t2, omega=omega, tol=cfg.tol)
    rep.verdicts["linf_gronwall_bound"] = linf["pass"]
    rep.metrics.update(lambda1=eig.lambda1, omega=omega, linf_worst_margin=linf["worst_margin"])
    if params.p == 2:
        floor = 1e3 * cfg.tol * max(1.0, norm_Linf(bar.over))
        keep = gap > floor
        slope = float(np.polyfit(times[keep], np.log(gap[keep]), 1)[0]) if keep.sum() >= 3 else math.nan
        predicted = omega - eig.lambda1
        rep.metrics.update(l2_slope=slope, predicted=predicted, fitted_points=int(keep.sum()))
        rep.verdicts["l2_decay_rate"] = bool(slope <= predicted + cfg.slope_margin * abs(predicted))
    # forcing-driven L∞ estimate for (S_t) with two distinct forcings
    p_st = ProblemParams(params.p, params.delta)
    bar_st = build_barriers(grid, p_st, 1.0)
    s1, _ = evolve_St(grid, p_st, bar_st.under, 0.0, cfg.T, cfg.N, barriers=bar_st, tol=cfg.tol)
    s2, _ = evolve_St(grid, p_st, bar_st.under, lambda t: 0.5 * math.sin(2 * t), cfg.T, cfg.N, barriers=bar_st, tol=cfg.tol)
    chk = linf_stability_check(s1, s2, tol=cfg.tol)
    rep.metrics["st_linf_worst_margin"] = chk["worst_margin"]
    rep.verdicts["st_linf_estimate"] = chk["pass"]
    return rep


def run_sharpness(cfg: ExperimentConfig) -> RunReport:
    """Dirichlet energy and ``∫u^{1-δ}`` of the resolvent solution under refinement.

    Verdicts use raw log-log slopes; Richardson increment exponents are
    reported alongside as a diagnostic only.
    """
    out = Path(cfg.out)
    rep = RunReport(cfg.echo())
    grids = [int(v) for v in _floats(cfg.grids)]
    deltas = _floats(cfg.deltas)
    rows = []
    for delta in deltas:
        params = ProblemParams(cfg.p, delta)
        hs, dir_e, sing = [], [], []
        for n in grids:
            grid = cfg.grid(n)
            u, _ = solve_singular(grid, params, cfg.lam, 0.0, tol=cfg.tol, eps0=cfg.eps0)
            idx = grid.interior
            D = seminorm_W1p(u, cfg.p) ** cfg.p
            S = float(np.add.reduce(grid.mass[idx] * u.values[idx] ** (1.0 - delta)))
            hs.append(max(grid.h))
            dir_e.append(D)
            sing.append(S)
            rows.append((delta, n, max(grid.h), D, S))
        predicted = (params.beta - 1.0) * cfg.p + 1.0
        sD, sS = loglog_slope(hs, dir_e), loglog_slope(hs, sing)
        key = f"delta={delta:g}"
        rep.metrics[key] = {
            "below_threshold": params.below_threshold,
            "predicted_rate": predicted,
            "slope_dirichlet": sD,
            "slope_singular": sS,
            "increment_exponents_dirichlet": increment_exponents(dir_e),
            "increment_exponents_singular": increment_exponents(sing),
        }
        if params.below_threshold:
            ok = abs(sD) <= cfg.bounded_margin and abs(sS) <= cfg.bounded_margin
            rep.verdicts[f"{key}: bounded"] = bool(ok)
        else:
            tol_ = cfg.asymptotic_margin * abs(predicted)
            ok = abs(sD - predicted) <= tol_ and abs(sS - predicted) <= tol_
            rep.verdicts[f"{key}: divergent at predicted rate"] = bool(ok)
    rep.metrics["delta_star"] = ProblemParams(cfg.p, deltas[0]).delta_star
    rep.outputs.append(
        _write_series(out / "sharpness.csv", ["delta", "n", "h", "dirichlet", "singular_integral"], rows)
    )
    return rep


def _nested_diff(coarse: GridFunction, fine: GridFunction) -> float:
    """Sup difference at the coarse nodes of a nested (2x) refinement."""
    gc, gf = coarse.grid, fine.grid
    if gc.same_as(gf):
        return norm_Linf(coarse.values - fine.values)
    ratio = [(nf - 1) // (nc - 1) for nc, nf in zip(gc.n, gf.n)]
    if any((nc - 1) * r != nf - 1 for nc, nf, r in zip(gc.n, gf.n, ratio)):
        raise ValueError("grids are not nested")
    vf = fine.values.reshape(gf.n)[tuple(slice(None, None, r) for r in ratio)].ravel()
    return norm_Linf(coarse.values - vf)


def interior_bump(grid: Grid) -> np.ndarray:
    """C² bump ``Π (1 - r_i²)³`` supported in the middle half of the box."""
    out = np.ones(grid.num_nodes)
    for axis, L in enumerate(grid.extent):
        r = np.abs(grid.coords[:, axis] - 0.5 * L) / (0.25 * L)
        out *= np.where(r < 1, (1 - r**2) ** 3, 0.0)
    return out


def run_convergence(cfg: ExperimentConfig) -> RunReport:
    out = Path(cfg.out)
    rep = RunReport(cfg.echo())
    params = cfg.params
    grids = [int(v) for v in _floats(cfg.grids)]
    # stationary problem under h-refinement
    sols = []
    for n in grids:
        grid = cfg.grid(n)
        u, _ = solve_stationary_Q(grid, params, tol=cfg.tol)
        sols.append(u)
    h_rows, h_err = [], []
    for a, b in zip(sols, sols[1:]):
        e = _nested_diff(a, b)
        h_err.append(e)
        h_rows.append((a.grid.n[0], b.grid.n[0], max(a.grid.h), e))
    h_slopes = [float(np.log2(a / b)) for a, b in zip(h_err, h_err[1:]) if a > 0 and b > 0]
    rep.outputs.append(_write_series(out / "convergence_h.csv", ["n_coarse", "n_fine", "h", "diff"], h_rows))
    # evolution under dt-refinement, started from a datum with bounded defect
    grid = cfg.grid()
    u_inf, _ = solve_stationary_Q(grid, params, tol=cfg.tol)
    u0 = u_inf.with_values(u_inf.values + 0.3 * norm_Linf(u_inf) * interior_bump(grid))
    Ns = [int(v) for v in _floats(cfg.steps)]
    finals = []
    for N in Ns:
        traj, _ = evolve_Pt(grid, params, u0, cfg.T, N, tol=cfg.tol)
        finals.append(traj.steps[-1])
    dt_err = [norm_Linf(a.values - b.values) for a, b in zip(finals, finals[1:])]
    dt_rows = [(Ns[k], Ns[k + 1], cfg.T / Ns[k], dt_err[k]) for k in range(len(dt_err))]
    dt_slopes = [float(np.log2(a / b)) for a, b in zip(dt_err, dt_err[1:]) if a > 0 and b > 0]
    rep.outputs.append(_write_series(out / "convergence_dt.csv", ["N_coarse", "N_fine", "dt", "diff"], dt_rows))
    rep.metrics.update(h_diffs=h_err, h_slopes=h_slopes, dt_diffs=dt_err, dt_slopes=dt_slopes)
    if dt_slopes:
        rep.verdicts["dt_slope_first_order"] = abs(dt_slopes[-1] - 1.0) <= cfg.dt_slope_margin
    if h_slopes and params.p == 2 and params.delta < 1:
        rep.verdicts["h_slope"] = h_slopes[-1] >= cfg.h_slope_min
    return rep


RUNNERS = {
    "eigen": run_eigen,
    "stationary": run_stationary,
    "evolve": run_evolve,
    "stabilize": run_stabilize,
    "contraction": run_contraction,
    "sharpness": run_sharpness,
    "convergence": run_convergence,
}


def run(cfg: ExperimentConfig) -> RunReport:
    cfg = cfg.with_defaults()
    cfg.validate()
    t0 = time.perf_counter()
    rep = RUNNERS[cfg.experiment](cfg)
    rep.wall_time = time.perf_counter() - t0
    rep.outputs.append(str(rep.write(cfg.out)))
    return rep
