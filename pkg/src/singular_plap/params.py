"""Problem parameters ``(p, δ)`` and the reaction term ``f(u)``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REACTION_KINDS = ("none", "constant", "power", "saturating", "table")


@dataclass(frozen=True)
class ReactionSpec:
    """A reaction ``f(u)`` on ``[0, ∞)``.

    kinds and their ``params``:

    - ``none``: f = 0
    - ``constant``: (c,) with f = c
    - ``power``: (a, q) with f = a u^q
    - ``saturating``: (a,) with f = a / (1 + u)
    - ``table``: (u_0, f_0, u_1, f_1, ...) piecewise linear in u, constant
      beyond the last knot (knots must start at 0)
    """

    kind: str = "none"
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in REACTION_KINDS:
            raise ValueError(f"unknown reaction kind {self.kind!r}; expected one of {REACTION_KINDS}")
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        need = {"none": 0, "constant": 1, "power": 2, "saturating": 1}
        if self.kind in need and len(self.params) != need[self.kind]:
            raise ValueError(f"reaction {self.kind!r} takes {need[self.kind]} parameters, got {len(self.params)}")
        if self.kind == "power" and self.params[1] < 0:
            raise ValueError("power reaction needs q >= 0")
        if self.kind == "saturating" and self.params[0] < 0:
            raise ValueError("saturating reaction needs a >= 0")
        if self.kind == "table":
            if len(self.params) < 4 or len(self.params) % 2:
                raise ValueError("table reaction needs at least two (u, f) knots")
            xs = self.params[0::2]
            if xs[0] != 0.0 or np.any(np.diff(xs) <= 0):
                raise ValueError("table knots must start at 0 and increase strictly")
        if not all(math.isfinite(v) for v in self.params):
            raise ValueError("reaction parameters must be finite")

    # -- constructors -------------------------------------------------------
    @classmethod
    def none(cls) -> "ReactionSpec":
        return cls("none")

    @classmethod
    def constant(cls, c: float) -> "ReactionSpec":
        return cls("constant", (c,))

    @classmethod
    def power(cls, a: float, q: float) -> "ReactionSpec":
        return cls("power", (a, q))

    @classmethod
    def saturating(cls, a: float = 1.0) -> "ReactionSpec":
        return cls("saturating", (a,))

    @classmethod
    def table(cls, us, fs) -> "ReactionSpec":
        flat = [v for pair in zip(us, fs) for v in pair]
        return cls("table", tuple(flat))

    @classmethod
    def parse(cls, kind: str, params: str | None = None) -> "ReactionSpec":
        """From config strings, e.g. ``("power", "0.5, 0.5")``."""
        vals = () if not params else tuple(float(s) for s in params.replace(";", ",").split(",") if s.strip())
        return cls(kind.strip(), vals)

    # -- evaluation ---------------------------------------------------------
    @property
    def _knots(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.params[0::2]), np.array(self.params[1::2])

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        k = self.kind
        if k == "none":
            return np.zeros_like(u)
        if k == "constant":
            return np.full_like(u, self.params[0])
        if k == "power":
            a, q = self.params
            return a * np.maximum(u, 0.0) ** q
        if k == "saturating":
            return self.params[0] / (1.0 + np.maximum(u, 0.0))
        xs, ys = self._knots
        return np.interp(u, xs, ys)

    def primitive(self, w) -> np.ndarray:
        """``F(w) = ∫_0^w f(s) ds`` for ``w >= 0``."""
        w = np.maximum(np.asarray(w, dtype=float), 0.0)
        k = self.kind
        if k == "none":
            return np.zeros_like(w)
        if k == "constant":
            return self.params[0] * w
        if k == "power":
            a, q = self.params
            return a * w ** (q + 1.0) / (q + 1.0)
        if k == "saturating":
            return self.params[0] * np.log1p(w)
        xs, ys = self._knots
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))])
        j = np.clip(np.searchsorted(xs, w, side="right") - 1, 0, len(xs) - 1)
        fw = np.interp(w, xs, ys)
        return cum[j] + 0.5 * (ys[j] + fw) * (w - xs[j])

    def derivative(self, u) -> np.ndarray:
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        k = self.kind
        if k in ("none", "constant"):
            return np.zeros_like(u)
        if k == "power":
            a, q = self.params
            if q == 0:
                return np.zeros_like(u)
            with np.errstate(divide="ignore"):
                return a * q * u ** (q - 1.0)
        if k == "saturating":
            return -self.params[0] / (1.0 + u) ** 2
        xs, ys = self._knots
        slopes = np.concatenate([np.diff(ys) / np.diff(xs), [0.0]])
        j = np.clip(np.searchsorted(xs, u, side="right") - 1, 0, len(xs) - 1)
        return slopes[j]

    def lipschitz(self, lo: float, hi: float) -> float:
        """Lipschitz constant of f on ``[lo, hi]``, ``0 <= lo <= hi``."""
        lo, hi = max(float(lo), 0.0), max(float(hi), 0.0)
        if hi < lo:
            lo, hi = hi, lo
        k = self.kind
        if k in ("none", "constant"):
            return 0.0
        if k == "power":
            a, q = self.params
            if q == 0 or a == 0:
                return 0.0
            if q < 1:
                if lo == 0:
                    return math.inf
                return abs(a) * q * lo ** (q - 1.0)
            return abs(a) * q * hi ** (q - 1.0)
        if k == "saturating":
            return abs(self.params[0]) / (1.0 + lo) ** 2
        xs, ys = self._knots
        slopes = np.abs(np.diff(ys) / np.diff(xs))
        seg_lo = xs[:-1]
        seg_hi = xs[1:]
        active = (seg_hi > lo) & (seg_lo < hi)
        return float(slopes[active].max(initial=0.0))

    @property
    def lower_bound(self) -> float:
        """``L >= 0`` with ``f >= -L`` on ``[0, ∞)``."""
        k = self.kind
        if k == "none":
            return 0.0
        if k == "constant":
            return max(0.0, -self.params[0])
        if k == "power":
            a, _ = self.params
            if a < 0:
                return math.inf
            return 0.0
        if k == "saturating":
            return 0.0
        return max(0.0, -float(min(self.params[1::2])))

    def alpha_f(self, p: float) -> float:
        """``lim_{t→∞} f(t) / t^{p-1}``."""
        if self.kind == "power":
            a, q = self.params
            if q > p - 1:
                return math.inf
            return a if q == p - 1 else 0.0
        return 0.0

    def upper_envelope(self, v) -> np.ndarray:
        """``sup_{0 <= s <= v} f(s)``, nodewise."""
        v = np.maximum(np.asarray(v, dtype=float), 0.0)
        k = self.kind
        if k == "power":
            a, q = self.params
            if a >= 0:
                return a * v**q
            return np.full_like(v, a if q == 0 else 0.0)
        if k == "saturating":
            return np.full_like(v, self.params[0])
        if k == "table":
            xs, ys = self._knots
            run = np.maximum.accumulate(ys)
            j = np.clip(np.searchsorted(xs, v, side="right") - 1, 0, len(xs) - 1)
            return np.maximum(run[j], np.interp(v, xs, ys))
        return self(v)

    @property
    def nonincreasing(self) -> bool:
        k = self.kind
        if k in ("none", "constant"):
            return True
        if k == "power":
            a, q = self.params
            return a == 0 or q == 0 or a < 0
        if k == "saturating":
            return True
        return bool(np.all(np.diff(self.params[1::2]) <= 0))

    def ratio_nonincreasing(self, p: float) -> bool:
        """Whether ``t ↦ f(t)/t^{p-1}`` is nonincreasing on ``(0, ∞)``."""
        k = self.kind
        if k == "none":
            return True
        if k == "constant":
            return self.params[0] >= 0
        if k == "power":
            a, q = self.params
            return a == 0 or (a > 0 and q <= p - 1)
        if k == "saturating":
            return True
        # piecewise linear: sample densely, the ratio is smooth between knots
        xs, _ = self._knots
        t = np.unique(np.concatenate([np.geomspace(1e-6, 10 * xs[-1] + 1, 4000), xs[1:]]))
        r = self(t) / t ** (p - 1)
        return bool(np.all(np.diff(r) <= 1e-12 * np.abs(r[:-1]).max()))

    def describe(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}


@dataclass(frozen=True)
class ProblemParams:
    p: float
    delta: float
    reaction: ReactionSpec = field(default_factory=ReactionSpec.none)

    def __post_init__(self):
        if not (math.isfinite(self.p) and self.p > 1):
            raise ValueError(f"p must be > 1, got {self.p}")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.reaction.kind == "power" and self.reaction.params[1] > self.p - 1:
            raise ValueError("power reaction needs q <= p - 1 (sub-homogeneous growth)")
        if self.reaction.lower_bound == math.inf:
            raise ValueError("reaction must be bounded below on [0, inf)")

    @property
    def delta_star(self) -> float:
        return 2.0 + 1.0 / (self.p - 1.0)

    @property
    def below_threshold(self) -> bool:
        return self.delta < self.delta_star

    @property
    def regime(self) -> str:
        if self.delta < 1:
            return "delta_lt_1"
        if self.delta == 1:
            return "delta_eq_1"
        return "delta_gt_1"

    @property
    def beta(self) -> float:
        """Boundary-layer exponent ``p / (δ + p - 1)``."""
        return self.p / (self.delta + self.p - 1.0)

    def check_growth(self, lambda1: float) -> None:
        """Raise unless ``alpha_f < lambda1``."""
        a = self.reaction.alpha_f(self.p)
        if not a < lambda1:
            raise ValueError(f"alpha_f = {a} must be below the first eigenvalue {lambda1}")

    def describe(self) -> dict:
        return {
            "p": self.p,
            "delta": self.delta,
            "delta_star": self.delta_star,
            "below_threshold": self.below_threshold,
            "reaction": self.reaction.describe(),
        }
