"""End-to-end private estimators and the projected Langevin sampler.

The estimators gate on typical-set membership (aborting with a diagnostic
when the gate fails — never silently degrading), answer through the
flattened-Laplace mechanism, and account privacy in a ledger of disjoint
row batches under parallel composition: the end-to-end charge is the
maximum over batches, recorded alongside the naive sum.

The uniform sampler runs the projected random walk
``X_{t+1} = P_K(X_t + eta g_t)`` started at the Steiner point; its noisy
variant consumes (alpha, beta, R)-noisy oracles for the Steiner point and
the projection, with Gaussian increments truncated at sqrt(d) log(d k).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .admissible import AdmissibleParams
from .errors import (EmptyBodyError, InsufficientRowsError, KTooSmallError,
                     OracleFailureError, TypicalityGateError)
from .geometry import Polytope, project, project_many, steiner_point
from .mechanism import (MechanismParams, flat_laplace_sample,
                        projection_query_spec, quantile_query_spec,
                        steiner_query_spec)
from .quantiles import DirectionNet, Sample, floating_body, query_quantiles
from .rng import make_rng
from .typical import TypicalSetConfig, check_typical, recommend_W

_CLAMP_FACTOR = 5.0  # iterate-norm clamp, in units of (R_max + r)


# ---- privacy ledger --------------------------------------------------------


@dataclass
class PrivacyLedger:
    """Per-call privacy charges over pairwise-disjoint row batches.

    ``total_epsilon`` is the parallel-composition total (max over batches);
    ``naive_sum`` adds every charge as if the batches overlapped.
    """

    calls: list = field(default_factory=list)
    batches: dict = field(default_factory=dict)

    def register_batch(self, batch_id: int, start: int, stop: int) -> None:
        for other, (s, t) in self.batches.items():
            if other != batch_id and start < t and s < stop:
                raise ValueError(f"batch {batch_id} overlaps batch {other}")
        self.batches[batch_id] = (int(start), int(stop))

    def charge(self, op: str, epsilon: float, batch: int, rows: int) -> None:
        self.calls.append({"op": op, "epsilon": float(epsilon),
                           "batch": int(batch), "rows": int(rows)})

    def batch_epsilon(self, batch: int) -> float:
        return sum(c["epsilon"] for c in self.calls if c["batch"] == batch)

    @property
    def total_epsilon(self) -> float:
        ids = {c["batch"] for c in self.calls}
        return max((self.batch_epsilon(b) for b in ids), default=0.0)

    @property
    def naive_sum(self) -> float:
        return sum(c["epsilon"] for c in self.calls)

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps({"total_epsilon": self.total_epsilon,
                           "naive_sum": self.naive_sum,
                           "batches": {str(k): list(v)
                                       for k, v in self.batches.items()},
                           "calls": self.calls}, indent=indent)


# ---- noisy-oracle budget ----------------------------------------------------


@dataclass(frozen=True)
class NoisyOracleParams:
    """(accuracy, failure probability, almost-sure bound) of a noisy oracle."""

    alpha: float
    beta: float
    R: float

    def __post_init__(self):
        if not (0.0 < self.alpha < self.R):
            raise ValueError("need 0 < alpha < R")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("failure probability must lie in (0, 1)")

    @property
    def mean_square(self) -> float:
        """The R^2 beta + alpha^2 moment bound used by the coupling lemma."""
        return self.R ** 2 * self.beta + self.alpha ** 2


def noisy_oracle_params(alpha: float, k: int,
                        params: AdmissibleParams) -> NoisyOracleParams:
    """Noise budget under which k noisy projection steps still mix:
    alpha~ = d alpha / (32 k (R_max+1)),
    beta   = d^2 alpha^2 / (2^14 k^2 (R_max+1)^2 (R_max+r)^2),
    R      = 4 (R_max + r).
    """
    d = params.d
    if k < d:
        raise KTooSmallError("need at least d projection steps")
    rmax1 = params.R_max + 1.0
    rmaxr = params.R_max + params.r
    return NoisyOracleParams(
        alpha=d * alpha / (32.0 * k * rmax1),
        beta=d * d * alpha * alpha / (2.0 ** 14 * k * k * rmax1 * rmax1
                                      * rmaxr * rmaxr),
        R=4.0 * rmaxr)


def coupling_gap_bound(k: int, eta: float, R_max: float,
                       noise: NoisyOracleParams) -> float:
    """Mean-square trajectory gap bound between the exact and noisy walks:
    (k+1)(R^2 beta + alpha^2 + 4 R_max sqrt(R^2 beta + alpha^2)) + eta^2."""
    ms = noise.mean_square
    return (k + 1) * (ms + 4.0 * R_max * math.sqrt(ms)) + eta * eta


# ---- Langevin configuration -------------------------------------------------


@dataclass(frozen=True)
class LangevinConfig:
    """Step size, step count and increment truncation for the walk."""

    eta: float
    k: int
    trunc: float | None = None
    alpha: float | None = None
    c_eta: float = 0.5
    c_k: float = 2.0

    def __post_init__(self):
        if self.eta < 0.0 or self.k < 0:
            raise ValueError("need eta >= 0 and k >= 0")

    def truncation(self, d: int) -> float:
        """Configured truncation radius, defaulting to sqrt(d) log(d k)."""
        if self.trunc is not None:
            return self.trunc
        return default_truncation(max(self.k, 1), d)

    @staticmethod
    def from_alpha(alpha: float, d: int, params: AdmissibleParams,
                   c_eta: float = 0.5, c_k: float = 2.0) -> "LangevinConfig":
        """Theoretical step calibration: eta ~ R_min^2 alpha^2 /
        ((R_max+1)^4 d), k ~ (R_max+1)^6 d / (R_min^2 alpha^2)."""
        rmax1 = params.R_max + 1.0
        eta = c_eta * params.R_min ** 2 / rmax1 ** 4 * alpha * alpha / d
        k = math.ceil(c_k * rmax1 ** 6 / params.R_min ** 2 * d
                      / (alpha * alpha))
        return LangevinConfig(eta=eta, k=k, trunc=default_truncation(k, d),
                              alpha=alpha, c_eta=c_eta, c_k=c_k)


def default_truncation(k: int, d: int) -> float:
    return math.sqrt(d) * math.log(max(float(d * k), math.e))


def truncated_gaussians(d: int, trunc: float, size: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Standard Gaussians conditioned on norm <= trunc, by rejection."""
    g = rng.standard_normal((size, d))
    while (bad := np.linalg.norm(g, axis=1) > trunc).any():
        g[bad] = rng.standard_normal((int(bad.sum()), d))
    return g


# ---- typicality gate ---------------------------------------------------------


def _gate(X: Sample, q: float, A: DirectionNet, cfg: TypicalSetConfig,
          batch: int | None = None):
    report = check_typical(X, q, A, cfg)
    if not report.overall:
        where = "" if batch is None else f" (batch {batch})"
        raise TypicalityGateError(
            f"input failed the typical-set gate{where}: "
            f"{len(report.failing_directions)} failing directions, "
            f"ball_ok={report.ball_ok}", report=report, batch=batch)
    return report


def _config_for(X: Sample, params: AdmissibleParams, A_size: int,
                W: float | None, beta: float) -> TypicalSetConfig:
    if W is None:
        W = recommend_W(A_size, params.d, beta)
    return TypicalSetConfig(W=W, params=params, n=X.n)


# ---- private estimators -------------------------------------------------------


def private_quantiles(X: Sample, q: float, A: DirectionNet, epsilon: float,
                      params: AdmissibleParams,
                      rng: np.random.Generator | None = None,
                      W: float | None = None, beta: float = 0.1,
                      ledger: PrivacyLedger | None = None,
                      batch: int = 0) -> np.ndarray:
    """Privatized directional quantile vector (sup-norm query, K = h = 1)."""
    rng = make_rng(0) if rng is None else rng
    cfg = _config_for(X, params, A.size, W, beta)
    _gate(X, q, A, cfg)
    center = query_quantiles(X, q, A)
    mp = MechanismParams(epsilon, cfg, quantile_query_spec(A.size))
    draw = flat_laplace_sample(center, mp, rng)
    if ledger is not None:
        ledger.charge("quantiles", epsilon / 2.0, batch, X.n)
    return draw


def private_steiner(X: Sample, q: float, epsilon: float,
                    params: AdmissibleParams, A: DirectionNet,
                    m_directions: int = 1024,
                    rng: np.random.Generator | None = None,
                    W: float | None = None, beta: float = 0.1,
                    ledger: PrivacyLedger | None = None,
                    batch: int = 0) -> np.ndarray:
    """Privatized Steiner point of the empirical floating body."""
    rng = make_rng(0) if rng is None else rng
    cfg = _config_for(X, params, A.size, W, beta)
    _gate(X, q, A, cfg)
    fb = floating_body(X, q, A)
    if fb.is_empty:
        raise EmptyBodyError("empirical floating body is empty")
    center = steiner_point(fb.body, m_directions, rng)
    mp = MechanismParams(epsilon, cfg, steiner_query_spec(X.d, params))
    draw = flat_laplace_sample(center, mp, rng)
    if ledger is not None:
        ledger.charge("steiner", epsilon / 2.0, batch, X.n)
    return draw


def private_project(X: Sample, q: float, x: np.ndarray, epsilon: float,
                    params: AdmissibleParams, A: DirectionNet,
                    rng: np.random.Generator | None = None,
                    W: float | None = None, beta: float = 0.1,
                    ledger: PrivacyLedger | None = None,
                    batch: int = 0) -> np.ndarray:
    """Privatized metric projection of ``x`` onto the floating body."""
    rng = make_rng(0) if rng is None else rng
    x = np.asarray(x, dtype=float).ravel()
    cfg = _config_for(X, params, A.size, W, beta)
    _gate(X, q, A, cfg)
    fb = floating_body(X, q, A)
    if fb.is_empty:
        raise EmptyBodyError("empirical floating body is empty")
    center = project(fb.body, x).point
    mp = MechanismParams(epsilon, cfg,
                         projection_query_spec(X.d, float(np.linalg.norm(x)),
                                               params))
    draw = flat_laplace_sample(center, mp, rng)
    if ledger is not None:
        ledger.charge("project", epsilon / 2.0, batch, X.n)
    return draw


# ---- Langevin walks ------------------------------------------------------------


def langevin_uniform(K: Polytope, cfg: LangevinConfig,
                     rng: np.random.Generator, n_out: int = 1,
                     start: np.ndarray | None = None) -> np.ndarray:
    """n_out independent chains of the noiseless projected walk; returns
    the final iterates, each inside K to projection tolerance."""
    if start is None:
        start = steiner_point(K, 1024, rng)
    X = np.tile(np.asarray(start, dtype=float), (n_out, 1))
    for _ in range(cfg.k):
        g = rng.standard_normal(X.shape)
        X = project_many(K, X + cfg.eta * g)
    return X


def noisy_langevin(projection_oracle, steiner_oracle, cfg: LangevinConfig,
                   rng: np.random.Generator, d: int,
                   n_out: int = 1) -> np.ndarray:
    """The noisy walk: oracle Steiner start, truncated increments, oracle
    projections.  Oracles take (points, step, rng) and return points."""
    try:
        X = np.atleast_2d(np.asarray(steiner_oracle(n_out, rng), dtype=float))
    except Exception as exc:  # noqa: BLE001 - surfaced with context
        raise OracleFailureError(f"Steiner oracle failed: {exc}",
                                 step=-1) from exc
    trunc = cfg.truncation(d)
    for t in range(cfg.k):
        g = truncated_gaussians(d, trunc, n_out, rng)
        try:
            X = np.atleast_2d(np.asarray(
                projection_oracle(X + cfg.eta * g, t, rng), dtype=float))
        except Exception as exc:  # noqa: BLE001
            raise OracleFailureError(f"projection oracle failed: {exc}",
                                     step=t) from exc
    return X


def make_budget_oracles(body: Polytope, noise: NoisyOracleParams,
                        steiner_directions: int = 1024,
                        steiner_seed: int = 1):
    """Noisy oracles for one body, with error exactly at the budget: the
    exact operation plus a uniformly-directed error of norm just below
    ``alpha`` (probability 1 - beta) or just below ``R`` (probability beta).
    """
    s_point = steiner_point(body, steiner_directions, make_rng(steiner_seed))

    def _perturb(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        m, d = points.shape
        u = rng.standard_normal((m, d))
        u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
        mag = np.where(rng.random(m) < noise.beta, 0.999 * noise.R,
                       0.999 * noise.alpha)
        return points + mag[:, None] * u

    def steiner_oracle(n_out: int, rng: np.random.Generator) -> np.ndarray:
        return _perturb(np.tile(s_point, (n_out, 1)), rng)

    def projection_oracle(points: np.ndarray, _t: int,
                          rng: np.random.Generator) -> np.ndarray:
        return _perturb(project_many(body, points), rng)

    return steiner_oracle, projection_oracle


# ---- end-to-end sampler ----------------------------------------------------------


@dataclass
class FloatingBodySampleResult:
    points: np.ndarray
    ledger: PrivacyLedger
    batch_size: int
    k: int
    degenerate_steiner_only: bool

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps({
            "points": self.points.tolist(), "k": self.k,
            "batch_size": self.batch_size,
            "steiner_only_degenerate": self.degenerate_steiner_only,
            "ledger": json.loads(self.ledger.to_json())}, indent=indent)


def required_batch_rows(alpha: float, epsilon: float,
                        params: AdmissibleParams, cfg: LangevinConfig,
                        A_size: int, beta: float = 0.1) -> int:
    """Per-batch sample size certifying the noisy-oracle budget through the
    mechanism's own calibration (astronomical at desk scale by design)."""
    from .mechanism import sample_size
    k = max(cfg.k, params.d)
    budget = noisy_oracle_params(alpha, k, params)
    query = projection_query_spec(params.d, _CLAMP_FACTOR
                                  * (params.R_max + params.r), params)
    return sample_size(budget.alpha, budget.beta, epsilon, query, params,
                       A_size=A_size)


def private_sample_floating_body(X: Sample, q: float, epsilon: float,
                                 alpha: float, params: AdmissibleParams,
                                 A: DirectionNet, cfg: LangevinConfig,
                                 rng: np.random.Generator | None = None,
                                 n_chains: int = 1,
                                 W: float | None = None, beta: float = 0.1,
                                 budget: NoisyOracleParams | None = None
                                 ) -> FloatingBodySampleResult:
    """Approximately-uniform private draw from the empirical floating body.

    Rows split into k+1 pairwise-disjoint batches: batch 0 backs the
    Steiner start, batch t the step-t projection, so parallel composition
    charges each row once.  With ``budget=None`` every batch must meet the
    per-call mechanism calibration for the noisy-oracle budget
    (InsufficientRows otherwise); passing an explicit budget instead
    injects synthetic oracle noise at exactly that level on each batch's
    body, which is the desk-scale harness mode.

    All ``n_chains`` chains reuse the same batches — a harness diagnostic;
    chains are not mutually private.
    """
    rng = make_rng(0) if rng is None else rng
    k = cfg.k
    n_batch = X.n // (k + 1)
    if n_batch < 1:
        raise InsufficientRowsError(
            f"{X.n} rows cannot fill {k + 1} disjoint batches")
    if budget is None:
        try:
            need = required_batch_rows(alpha, epsilon, params, cfg, A.size,
                                       beta)
        except ValueError as exc:
            raise InsufficientRowsError(
                f"no feasible per-batch calibration exists: {exc}") from exc
        if n_batch < need:
            raise InsufficientRowsError(
                f"each of the {k + 1} batches has {n_batch} rows but the "
                f"per-call calibration needs {need}")
        oracle_noise = noisy_oracle_params(alpha, max(k, params.d), params)
    else:
        oracle_noise = budget
    ledger = PrivacyLedger()
    clamp = _CLAMP_FACTOR * (params.R_max + params.r)

    def batch_body(b: int):
        start, stop = b * n_batch, (b + 1) * n_batch
        ledger.register_batch(b, start, stop)
        Xb = Sample(X.points[start:stop])
        cfg_b = _config_for(Xb, params, A.size, W, beta)
        _gate(Xb, q, A, cfg_b, batch=b)
        fb = floating_body(Xb, q, A)
        if fb.is_empty:
            raise EmptyBodyError(f"batch {b} has an empty floating body")
        return fb.body

    def _noise(points: np.ndarray) -> np.ndarray:
        m, d = points.shape
        u = rng.standard_normal((m, d))
        u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
        mag = np.where(rng.random(m) < oracle_noise.beta,
                       0.999 * oracle_noise.R, 0.999 * oracle_noise.alpha)
        return points + mag[:, None] * u

    body0 = batch_body(0)
    state = np.tile(steiner_point(body0, 1024, rng), (n_chains, 1))
    state = _noise(state)
    ledger.charge("steiner", epsilon, 0, n_batch)
    trunc = cfg.truncation(X.d)
    for t in range(k):
        body_t = batch_body(t + 1)
        g = truncated_gaussians(X.d, trunc, n_chains, rng)
        state = _noise(project_many(body_t, state + cfg.eta * g))
        norms = np.linalg.norm(state, axis=1)
        over = norms > clamp
        if over.any():
            state[over] *= (clamp / norms[over])[:, None]
        ledger.charge("project", epsilon, t + 1, n_batch)
    return FloatingBodySampleResult(
        points=state[0] if n_chains == 1 else state, ledger=ledger,
        batch_size=n_batch, k=k, degenerate_steiner_only=(k == 0))


# ---- coupled noisy-vs-noiseless experiment ---------------------------------------


def coupled_langevin_gap(K: Polytope, cfg: LangevinConfig,
                         noise: NoisyOracleParams, R_max: float,
                         rng: np.random.Generator,
                         n_pairs: int = 100) -> tuple[float, float]:
    """Mean squared endpoint gap between coupled exact and budget-noisy
    walks (shared increments; the noisy one truncates and perturbs), and
    the corresponding theoretical bound."""
    s_point = steiner_point(K, 1024, rng)
    X = np.tile(s_point, (n_pairs, 1))
    d = X.shape[1]

    def _noise(points: np.ndarray) -> np.ndarray:
        u = rng.standard_normal(points.shape)
        u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
        mag = np.where(rng.random(points.shape[0]) < noise.beta,
                       0.999 * noise.R, 0.999 * noise.alpha)
        return points + mag[:, None] * u

    Xt = _noise(X.copy())
    trunc = cfg.truncation(d)
    for _ in range(cfg.k):
        g = rng.standard_normal((n_pairs, d))
        over = np.linalg.norm(g, axis=1) > trunc
        g_t = g.copy()
        if over.any():
            g_t[over] = truncated_gaussians(d, trunc, int(over.sum()), rng)
        X = project_many(K, X + cfg.eta * g)
        Xt = _noise(project_many(K, Xt + cfg.eta * g_t))
    gap = float(np.mean(np.sum((X - Xt) ** 2, axis=1)))
    return gap, coupling_gap_bound(cfg.k, cfg.eta, R_max, noise)
