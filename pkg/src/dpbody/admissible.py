"""Admissible-law parameters, reference distributions and density floors.

An admissible parameter tuple ``(R_max, R_min, r, L, B, c)`` certifies, for
every unit direction, that the directional q-quantile of the law sits inside
``[-R_max, R_max]``, at least ``R_min`` beyond the anchor point along the
direction, that the marginal density stays >= L on an r-window around the
quantile, and that data rows project below B.  For isotropic log-concave
laws the generic tuple ``(log(1/(2(1-q))), q - 1/2, (1-q)/2, (1-q)/8,
10*sqrt(d)*n^3, origin)`` works; the reference distributions here also admit
sharper, analytically verifiable tuples via ``density_floor``.

All four reference laws are normalized to identity covariance so their
directional marginals do not depend on scale conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DimensionMismatchError, QOutOfRangeError
from .quantiles import DirectionNet, Sample, empirical_quantile
from .rng import make_rng

_KINDS = ("gaussian", "uniform-ball", "uniform-cube", "product-laplace")


@dataclass(frozen=True)
class AdmissibleParams:
    """Certificate parameters for one quantile level q."""

    q: float
    R_max: float
    R_min: float
    r: float
    L: float
    B: float
    center: np.ndarray

    def __post_init__(self):
        if not 0.5 < self.q < 1.0:
            raise ValueError("admissible parameters need q in (1/2, 1)")
        if self.R_min <= 0 or self.R_min > self.R_max:
            raise ValueError("need 0 < R_min <= R_max")
        if self.r <= 0 or self.L <= 0 or self.B <= 0:
            raise ValueError("r, L, B must be positive")
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=float).ravel())

    @property
    def d(self) -> int:
        return self.center.size

    @property
    def r_eff(self) -> float:
        """min(r, R_min): the window the mechanism cap is calibrated to."""
        return min(self.r, self.R_min)


def logconcave_params(q: float, d: int, n: int) -> AdmissibleParams:
    """Generic admissible tuple valid for every isotropic log-concave law.

    ``R_min = q - 1/2``, ``R_max = log(1/(2(1-q)))``, ``r = (1-q)/2``,
    ``L = (1-q)/8``, ``B = 10 sqrt(d) n^3``, anchored at the origin.
    Degenerates as q -> 1/2 (R_min -> 0), which the constructor rejects.
    """
    if not 0.5 < q < 1.0:
        raise QOutOfRangeError("log-concave defaults need q in (1/2, 1)")
    return AdmissibleParams(
        q=q,
        R_max=math.log(1.0 / (2.0 * (1.0 - q))),
        R_min=q - 0.5,
        r=(1.0 - q) / 2.0,
        L=(1.0 - q) / 8.0,
        B=10.0 * math.sqrt(d) * float(n) ** 3,
        center=np.zeros(d),
    )


@dataclass(frozen=True)
class DistributionSpec:
    """One of the identity-covariance reference laws."""

    kind: str
    d: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}; "
                             f"supported: {_KINDS}")
        if self.d < 1:
            raise ValueError("dimension must be positive")

    @property
    def ball_radius(self) -> float:
        return math.sqrt(self.d + 2)

    @property
    def cube_half_side(self) -> float:
        return math.sqrt(3.0)

    @property
    def laplace_scale(self) -> float:
        return 1.0 / math.sqrt(2.0)


def sample_dist(spec: DistributionSpec, n: int,
                rng: np.random.Generator | None = None) -> Sample:
    """Draw ``n`` rows of the reference law (identity covariance in R^d)."""
    rng = make_rng(spec.seed) if rng is None else rng
    d = spec.d
    if spec.kind == "gaussian":
        pts = rng.standard_normal((n, d))
    elif spec.kind == "uniform-ball":
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        radii = spec.ball_radius * rng.random(n) ** (1.0 / d)
        pts = g * radii[:, None]
    elif spec.kind == "uniform-cube":
        pts = rng.uniform(-spec.cube_half_side, spec.cube_half_side, (n, d))
    else:  # product-laplace
        pts = rng.laplace(scale=spec.laplace_scale, size=(n, d))
    return Sample(pts)


# ---- analytic 1-D marginals ---------------------------------------------


def _unit(theta: np.ndarray, d: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != d:
        raise DimensionMismatchError("direction dimension differs from spec")
    norm = np.linalg.norm(theta)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return theta


def _cube_weights(spec: DistributionSpec, theta: np.ndarray):
    a = np.abs(theta) * spec.cube_half_side
    a = a[a > 1e-12]
    return a


def _box_spline_terms(a: np.ndarray):
    """Signs and shifts of the alternating box-spline expansion of a sum of
    centered uniforms with half-widths ``a``."""
    k = a.size
    eps = ((np.arange(1 << k)[:, None] >> np.arange(k)) & 1).astype(float)
    signs = (-1.0) ** eps.sum(axis=1)
    shifts = a.sum() - 2.0 * eps @ a
    return signs, shifts


def _laplace_components(spec: DistributionSpec, theta: np.ndarray):
    """Partial-fraction mixture weights for a weighted sum of Laplace laws.

    Repeated scales are split by a deterministic relative jitter of 1e-7 so
    the distinct-pole formula applies; the induced density error is far
    below every tolerance used against these marginals.
    """
    c = np.abs(theta) * spec.laplace_scale
    c = np.sort(c[c > 1e-12])
    for i in range(1, c.size):
        if c[i] - c[i - 1] < 1e-7 * c[i]:
            c[i] = c[i - 1] * (1.0 + 1e-7)
    c2 = c * c
    weights = np.empty_like(c)
    for j in range(c.size):
        others = np.delete(c2, j)
        weights[j] = np.prod(c2[j] / (c2[j] - others))
    return c, weights


def marginal_density(spec: DistributionSpec, theta: np.ndarray, ts) -> np.ndarray:
    """Exact density of ``<X, theta>`` at the points ``ts``."""
    theta = _unit(theta, spec.d)
    ts = np.asarray(ts, dtype=float)
    if spec.kind == "gaussian":
        return np.exp(-0.5 * ts ** 2) / math.sqrt(2.0 * math.pi)
    if spec.kind == "uniform-ball":
        rho, d = spec.ball_radius, spec.d
        u = np.clip(ts / rho, -1.0, 1.0)
        const = math.exp(special.gammaln(d / 2.0 + 1.0)
                         - special.gammaln((d + 1) / 2.0)) / math.sqrt(math.pi)
        inside = np.abs(ts) < rho
        out = np.zeros_like(ts, dtype=float)
        out[inside] = const / rho * (1.0 - u[inside] ** 2) ** ((d - 1) / 2.0)
        return out
    if spec.kind == "uniform-cube":
        a = _cube_weights(spec, theta)
        k = a.size
        if k == 0:
            raise ValueError("degenerate direction for cube marginal")
        signs, shifts = _box_spline_terms(a)
        x = ts[..., None] + shifts
        if k == 1:  # 0**0 == 1 would cancel the step function
            parts = signs * (x > 0.0)
        else:
            parts = signs * np.where(x > 0.0, x, 0.0) ** (k - 1)
        norm = math.factorial(k - 1) * (2.0 ** k) * np.prod(a)
        return parts.sum(axis=-1) / norm
    # product-laplace
    c, w = _laplace_components(spec, theta)
    z = np.abs(ts)[..., None] / c
    return (w / (2.0 * c) * np.exp(-z)).sum(axis=-1)


def marginal_cdf(spec: DistributionSpec, theta: np.ndarray, ts) -> np.ndarray:
    """Exact CDF of ``<X, theta>`` at the points ``ts``."""
    theta = _unit(theta, spec.d)
    ts = np.asarray(ts, dtype=float)
    if spec.kind == "gaussian":
        return special.ndtr(ts)
    if spec.kind == "uniform-ball":
        rho, d = spec.ball_radius, spec.d
        u = np.clip((ts / rho + 1.0) / 2.0, 0.0, 1.0)
        return special.betainc((d + 1) / 2.0, (d + 1) / 2.0, u)
    if spec.kind == "uniform-cube":
        a = _cube_weights(spec, theta)
        k = a.size
        signs, shifts = _box_spline_terms(a)
        x = ts[..., None] + shifts
        parts = signs * np.where(x > 0.0, x, 0.0) ** k
        norm = math.factorial(k) * (2.0 ** k) * np.prod(a)
        return np.clip(parts.sum(axis=-1) / norm, 0.0, 1.0)
    c, w = _laplace_components(spec, theta)
    t = ts[..., None]
    pos = 1.0 - 0.5 * np.exp(-np.abs(t) / c)
    neg = 0.5 * np.exp(-np.abs(t) / c)
    comp = np.where(t >= 0.0, pos, neg)
    return np.clip((w * comp).sum(axis=-1), 0.0, 1.0)


def marginal_quantile(spec: DistributionSpec, theta: np.ndarray, q: float) -> float:
    """Exact q-quantile of ``<X, theta>``."""
    theta = _unit(theta, spec.d)
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    if spec.kind == "gaussian":
        return float(special.ndtri(q))
    if spec.kind == "uniform-ball":
        rho, d = spec.ball_radius, spec.d
        u = special.betaincinv((d + 1) / 2.0, (d + 1) / 2.0, q)
        return float(rho * (2.0 * u - 1.0))
    from scipy.optimize import brentq
    if spec.kind == "uniform-cube":
        hi = float(np.sum(_cube_weights(spec, theta)))
    else:
        c, _ = _laplace_components(spec, theta)
        hi = 60.0 * float(c.max())
    return float(brentq(lambda t: marginal_cdf(spec, theta, np.array(t)) - q,
                        -hi, hi, xtol=1e-12))


def density_floor(spec: DistributionSpec, theta: np.ndarray, q: float,
                  r: float | None = None, grid: int = 1001) -> float:
    """Minimum of the true marginal density over ``[Q_q - r, Q_q + r]``.

    ``r`` defaults to the generic log-concave window ``(1-q)/2``.  Evaluated
    on a ``grid``-point sweep of the closed-form density.
    """
    if r is None:
        r = (1.0 - q) / 2.0
    quantile = marginal_quantile(spec, theta, q)
    ts = np.linspace(quantile - r, quantile + r, grid)
    return float(marginal_density(spec, theta, ts).min())


# ---- empirical admissibility --------------------------------------------


@dataclass
class AdmissibilityReport:
    """Per-condition outcome of checking a sample against a parameter tuple.

    ``quantile_gap`` lists directions whose quantile exceeds R_max by at
    most 1 — inside the slack between the two admissible-radius bounds —
    flagged separately from hard failures.
    """

    ok: bool
    quantile_range_failures: list = field(default_factory=list)
    quantile_gap: list = field(default_factory=list)
    inner_radius_failures: list = field(default_factory=list)
    density_failures: list = field(default_factory=list)
    norm_bound_ok: bool = True
    max_row_norm: float = 0.0


def admissibility_check(X: Sample, params: AdmissibleParams,
                        net: DirectionNet,
                        density_slack: float = 0.8) -> AdmissibilityReport:
    """Empirically test the four admissibility conditions on a sample.

    Per direction: (1) |Q_q| <= R_max, (2) Q_q - <c, theta> >= R_min,
    (3) histogram density (bin width r/4) >= density_slack * L across
    ``[Q_q - r, Q_q + r]``.  Globally: (4) max row norm <= B.  The density
    condition uses a 0.8 slack by default because finite-sample histograms
    fluctuate below the true floor.
    """
    if net.d != X.d:
        raise DimensionMismatchError("net dimension differs from sample")
    report = AdmissibilityReport(ok=True)
    q, r = params.q, params.r
    n_bins = 8  # bin width r/4 across a window of width 2r
    proj_all = X.points @ net.directions.T
    row_norms = np.linalg.norm(X.points, axis=1)
    report.max_row_norm = float(row_norms.max())
    report.norm_bound_ok = report.max_row_norm <= params.B
    for j, theta in enumerate(net.directions):
        proj = proj_all[:, j]
        quantile = empirical_quantile(proj, q)
        if abs(quantile) > params.R_max:
            if abs(quantile) <= params.R_max + 1.0:
                report.quantile_gap.append(j)
            report.quantile_range_failures.append(j)
        if quantile - float(params.center @ theta) < params.R_min:
            report.inner_radius_failures.append(j)
        counts, _ = np.histogram(proj, bins=n_bins,
                                 range=(quantile - r, quantile + r))
        dens = counts / (X.n * (2.0 * r / n_bins))
        if dens.min() < density_slack * params.L:
            report.density_failures.append(j)
    report.ok = (report.norm_bound_ok
                 and not report.quantile_range_failures
                 and not report.inner_radius_failures
                 and not report.density_failures)
    return report
