"""Typical-set membership testing and Hamming-sensitivity bounds.

A dataset is *typical* at count scale W when, along every net direction,
its empirical q-quantile is moderately bounded, every projection is at most
B, and for each integer kappa up to ``floor(L*r*n / (2W))`` at least
``kappa + 1`` sample projections land within ``kappa * W/(L*n)`` of the
quantile on each side.  Jointly the empirical floating body must contain a
ball of radius ``R_min / 2``.  On this set, changing ``dH`` rows moves every
directional quantile by at most ``2W/(L*n) * dH``, which is what calibrates
the noise scale of the private mechanism.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .admissible import AdmissibleParams
from .errors import DimensionMismatchError, EmptyNetError
from .geometry import InscribedBall
from .quantiles import DirectionNet, Sample, empirical_quantile, floating_body

_QUANTILE_SLACK = 1e-12
_BALL_SLACK = 1e-9


@dataclass(frozen=True)
class TypicalSetConfig:
    """Count scale W, certificate parameters, and the sample size n."""

    W: float
    params: AdmissibleParams
    n: int

    def __post_init__(self):
        if not self.W > 1.0:
            raise ValueError("count scale W must exceed 1")
        if self.n <= 2.0 * self.W / self.params.L:
            raise ValueError("need n > 2W/L for the sensitivity regime")

    @property
    def window(self) -> float:
        """Base window width W/(L n): quantile shift per changed row."""
        return self.W / (self.params.L * self.n)

    @property
    def kappa_max(self) -> int:
        """floor(L r n / 2W); 0 means the count conditions are vacuous."""
        p = self.params
        return int(math.floor(p.L * p.r * self.n / (2.0 * self.W)))


@dataclass(frozen=True)
class DirectionCheck:
    """Outcome for one direction: pass, or the first violated condition."""

    passed: bool
    condition: str = "ok"  # ok | quantile-range | projection-bound | counts
    first_failing_kappa: int | None = None
    quantile: float = math.nan

    def to_dict(self) -> dict:
        return {"pass": self.passed, "condition": self.condition,
                "first_failing_kappa": self.first_failing_kappa,
                "quantile": self.quantile}


@dataclass
class TypicalSetReport:
    per_direction: list[DirectionCheck] = field(default_factory=list)
    ball_ok: bool = False
    ball: InscribedBall | None = None
    kappa_max: int = 0
    kappa_vacuous: bool = False
    overall: bool = False

    @property
    def failing_directions(self) -> list[int]:
        return [j for j, c in enumerate(self.per_direction) if not c.passed]

    def to_json(self, indent: int | None = None) -> str:
        ball = None
        if self.ball is not None:
            ball = {"center": list(self.ball.center),
                    "radius": self.ball.radius, "empty": self.ball.empty}
        return json.dumps({
            "per_direction": [c.to_dict() for c in self.per_direction],
            "ball_ok": self.ball_ok, "ball": ball,
            "kappa_max": self.kappa_max, "kappa_vacuous": self.kappa_vacuous,
            "overall": self.overall,
        }, indent=indent)


def _check_projections(proj: np.ndarray, q: float,
                       cfg: TypicalSetConfig) -> DirectionCheck:
    p = cfg.params
    quantile = empirical_quantile(proj, q)
    lo = -p.R_max - p.r / 2.0 - _QUANTILE_SLACK
    hi = p.R_max + p.r / 2.0 + _QUANTILE_SLACK
    if not lo <= quantile <= hi:
        return DirectionCheck(False, "quantile-range", quantile=quantile)
    if proj.max() > p.B:
        return DirectionCheck(False, "projection-bound", quantile=quantile)
    kmax = cfg.kappa_max
    if kmax >= 1:
        s = np.sort(proj)
        kappas = np.arange(1, kmax + 1)
        widths = kappas * cfg.window
        at_q_left = np.searchsorted(s, quantile, side="left")
        at_q_right = np.searchsorted(s, quantile, side="right")
        right = np.searchsorted(s, quantile + widths, side="right") - at_q_left
        left = at_q_right - np.searchsorted(s, quantile - widths, side="left")
        bad = (right < kappas + 1) | (left < kappas + 1)
        if bad.any():
            return DirectionCheck(False, "counts",
                                  first_failing_kappa=int(kappas[bad][0]),
                                  quantile=quantile)
    return DirectionCheck(True, quantile=quantile)


def check_direction(X: Sample, theta: np.ndarray, q: float,
                    cfg: TypicalSetConfig) -> DirectionCheck:
    """Evaluate the single-direction typicality conditions along ``theta``."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != X.d:
        raise DimensionMismatchError("direction dimension differs from sample")
    if cfg.n != X.n:
        raise ValueError("config sample size differs from the sample")
    return _check_projections(X.points @ theta, q, cfg)


def check_typical(X: Sample, q: float, A: DirectionNet,
                  cfg: TypicalSetConfig) -> TypicalSetReport:
    """Full membership test: all directions pass and the empirical floating
    body contains a ball of radius ``R_min / 2``."""
    if A.size == 0:
        raise EmptyNetError("typicality test needs a nonempty direction net")
    if A.d != X.d:
        raise DimensionMismatchError("net dimension differs from sample")
    if cfg.n != X.n:
        raise ValueError("config sample size differs from the sample")
    report = TypicalSetReport(kappa_max=cfg.kappa_max,
                              kappa_vacuous=cfg.kappa_max < 1)
    proj_all = X.points @ A.directions.T
    for j in range(A.size):
        report.per_direction.append(_check_projections(proj_all[:, j], q, cfg))
    body = floating_body(X, q, A)
    report.ball = body.ball
    report.ball_ok = (not body.ball.empty
                      and body.ball.radius >= cfg.params.R_min / 2.0 - _BALL_SLACK)
    report.overall = report.ball_ok and all(c.passed
                                            for c in report.per_direction)
    return report


def sensitivity_bound(cfg: TypicalSetConfig, dH: int) -> float:
    """Quantile-shift bound ``2W/(L n) * dH`` for typical inputs.

    Valid while ``dH <= (L r / 2W) n`` (= kappa_max); the caller owns that
    regime check.
    """
    if dH < 0:
        raise ValueError("Hamming distance must be nonnegative")
    return 2.0 * cfg.W / (cfg.params.L * cfg.n) * dH


def recommend_W(A_size: int, d: int, beta: float, c_W: float = 4.0) -> float:
    """Count scale making typicality hold with probability >= 1 - beta:
    ``c_W * (min(ln A_size, d) + ln(1/beta))``."""
    if not 0.0 < beta < 1.0:
        raise ValueError("failure probability must lie in (0, 1)")
    if A_size < 1:
        raise EmptyNetError("net size must be positive")
    return c_W * (min(math.log(A_size), float(d)) + math.log(1.0 / beta))
