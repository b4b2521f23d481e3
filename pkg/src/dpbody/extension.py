"""Extending restricted mechanisms to all inputs on enumerable instances.

For tiny 1-D instances (n <= 6, values on a small grid) the full input
space enumerates, so the infimum construction

    extended(X)(t)  propto  inf over X' in H of
                    exp((eps/2) dH(X, X')) * restricted(X')(t)

computes exactly.  The result is epsilon-DP on *all* inputs and coincides
with the restricted mechanism on H itself whenever the restricted family is
pairwise (eps/2)-indistinguishable — which these instances guarantee by
keeping the flat-tail cap at or below eps/4.

The restricted mechanism is the 1-D flattened Laplace around the empirical
q-quantile, with its normalizer in closed form; the extended normalizer
uses adaptive quadrature with the envelope's kink locations as breakpoints.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate

from .admissible import AdmissibleParams
from .errors import EmptyHError, InvalidProbeError
from .mechanism import MechanismParams, quantile_query_spec
from .quantiles import (DirectionNet, Sample, empirical_quantile,
                        hamming_distance)
from .typical import TypicalSetConfig, check_typical

_GRID_TOL = 1e-12


def _flat1d_log_normalizer(c: float, a: float, cap: float,
                           rho: float) -> float:
    """log of integral_{-rho}^{rho} exp(-min(a |t - c|, cap)) dt, exact."""
    s_star = cap / a
    left, right = c + rho, rho - c
    if left < 0.0 or right < 0.0:
        raise ValueError("center must lie inside the region")
    near_l, near_r = min(s_star, left), min(s_star, right)
    z = (2.0 - math.exp(-a * near_l) - math.exp(-a * near_r)) / a
    z += math.exp(-cap) * ((left - near_l) + (right - near_r))
    return math.log(z)


def enumerate_samples(grid, n: int):
    """All ordered n-tuples over the grid, as 1-D Samples."""
    for combo in itertools.product(grid, repeat=n):
        yield Sample(np.asarray(combo, dtype=float)[:, None])


@dataclass(frozen=True)
class EnumerableInstance:
    """A fully enumerable 1-D instance of the restricted mechanism."""

    name: str
    grid: tuple
    n: int
    q: float
    epsilon: float
    cfg: TypicalSetConfig
    net: DirectionNet
    H_members: tuple

    def __post_init__(self):
        if self.n > 6:
            raise ValueError("enumerable instances are capped at n = 6")
        if not self.H_members:
            raise EmptyHError(f"instance {self.name!r} has an empty "
                              "restricted input set")

    @cached_property
    def mp(self) -> MechanismParams:
        return MechanismParams(self.epsilon, self.cfg, quantile_query_spec(1))

    @property
    def rho(self) -> float:
        return self.mp.rho

    def center_of(self, X: Sample) -> float:
        return empirical_quantile(X.points[:, 0], self.q)

    def validate_probe(self, X: Sample) -> Sample:
        if X.d != 1 or X.n != self.n:
            raise InvalidProbeError("probe shape differs from the instance")
        vals = np.asarray(self.grid)
        off = np.abs(X.points[:, 0][:, None] - vals).min(axis=1)
        if (off > _GRID_TOL).any():
            raise InvalidProbeError("probe takes values outside the grid")
        return X

    @cached_property
    def _h_rows(self) -> np.ndarray:
        return np.stack([m.points[:, 0] for m in self.H_members])

    @cached_property
    def _h_centers(self) -> np.ndarray:
        return np.array([self.center_of(m) for m in self.H_members])

    def envelope_branches(self, X: Sample):
        """Per distinct restricted center c: the smallest Hamming distance
        from X to an H member with that center.  The extension infimum over
        H collapses to a min over these few branches."""
        self.validate_probe(X)
        dh = (self._h_rows != X.points[:, 0]).sum(axis=1)
        centers, weights = [], []
        for c in np.unique(self._h_centers):
            centers.append(float(c))
            weights.append(int(dh[self._h_centers == c].min()))
        return np.array(centers), np.array(weights)


def make_instance(name: str, grid, n: int, q: float, params: AdmissibleParams,
                  W: float, epsilon: float) -> EnumerableInstance:
    """Build an instance by enumerating the grid and keeping every typical
    dataset as the restricted input set H."""
    cfg = TypicalSetConfig(W=W, params=params, n=n)
    net = DirectionNet(np.array([[1.0], [-1.0]]), provenance="signs")
    members = tuple(X for X in enumerate_samples(grid, n)
                    if check_typical(X, q, net, cfg).overall)
    return EnumerableInstance(name=name, grid=tuple(float(g) for g in grid),
                              n=n, q=q, epsilon=epsilon, cfg=cfg, net=net,
                              H_members=members)


def builtin_instances() -> list[EnumerableInstance]:
    """Three frozen desk-scale instances; each keeps cap <= eps/4 so the
    restricted family is pairwise DP on the whole grid power."""
    inst1 = make_instance(
        "five-grid-n4", grid=(-1.0, -0.5, 0.0, 0.5, 1.0), n=4, q=0.75,
        params=AdmissibleParams(q=0.75, R_max=1.5, R_min=0.5, r=0.5, L=0.6,
                                B=2.0, center=np.zeros(1)),
        W=1.1, epsilon=1.0)
    inst2 = make_instance(
        "four-grid-n3", grid=(-1.0, -0.25, 0.25, 1.0), n=3, q=0.75,
        params=AdmissibleParams(q=0.75, R_max=1.2, R_min=0.4, r=0.6, L=0.8,
                                B=2.0, center=np.zeros(1)),
        W=1.05, epsilon=0.8)
    inst3 = make_instance(
        "four-grid-n2", grid=(-1.0, -0.5, 0.5, 1.0), n=2, q=0.75,
        params=AdmissibleParams(q=0.75, R_max=1.1, R_min=0.6, r=0.4, L=1.2,
                                B=2.0, center=np.zeros(1)),
        W=1.1, epsilon=1.5)
    return [inst1, inst2, inst3]


# ---- densities ------------------------------------------------------------


def restricted_density(inst: EnumerableInstance, X: Sample, ts) -> np.ndarray:
    """Normalized density of the restricted mechanism on input X."""
    inst.validate_probe(X)
    mp = inst.mp
    c = inst.center_of(X)
    log_z = _flat1d_log_normalizer(c, mp.a, mp.cap, mp.rho)
    ts = np.asarray(ts, dtype=float)
    out = np.exp(-np.minimum(mp.a * np.abs(ts - c), mp.cap) - log_z)
    out[np.abs(ts) > mp.rho + _GRID_TOL] = 0.0
    return out


def _extension_log_unnorm(inst: EnumerableInstance, centers: np.ndarray,
                          weights: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """log of the unnormalized extended density min over branches of
    exp((eps/2) dH) * restricted-density(center)."""
    mp = inst.mp
    ts = np.asarray(ts, dtype=float)
    log_z = np.array([_flat1d_log_normalizer(c, mp.a, mp.cap, mp.rho)
                      for c in centers])
    branch = (inst.epsilon / 2.0 * weights - log_z
              - np.minimum(mp.a * np.abs(ts[..., None] - centers), mp.cap))
    return branch.min(axis=-1)


def _breakpoints(inst: EnumerableInstance, centers: np.ndarray) -> list:
    mp = inst.mp
    pts = set()
    for c in centers:
        for t in (c, c - mp.saturation_radius, c + mp.saturation_radius):
            if -mp.rho < t < mp.rho:
                pts.add(float(t))
    return sorted(pts)


def extension_log_normalizer(inst: EnumerableInstance, X: Sample) -> float:
    """Z_X by adaptive quadrature over the support interval."""
    centers, weights = inst.envelope_branches(X)
    f = lambda t: math.exp(_extension_log_unnorm(inst, centers, weights,
                                                 np.array(t)))
    z, _ = integrate.quad(f, -inst.rho, inst.rho,
                          points=_breakpoints(inst, centers),
                          limit=200, epsabs=1e-13, epsrel=1e-12)
    return math.log(z)


def extension_density(X: Sample, inst: EnumerableInstance, ts) -> np.ndarray:
    """Normalized extended density of input X at the points ``ts``."""
    centers, weights = inst.envelope_branches(X)
    log_z = extension_log_normalizer(inst, X)
    ts = np.asarray(ts, dtype=float)
    out = np.exp(_extension_log_unnorm(inst, centers, weights, ts) - log_z)
    out = np.where(np.abs(ts) > inst.rho + _GRID_TOL, 0.0, out)
    return out if out.shape else float(out)


def tv_extended_vs_restricted(inst: EnumerableInstance, X: Sample) -> float:
    """Total-variation distance between the extended and restricted
    output densities on input X."""
    centers, weights = inst.envelope_branches(X)
    log_z = extension_log_normalizer(inst, X)
    mp = inst.mp
    c = inst.center_of(X)
    log_zr = _flat1d_log_normalizer(c, mp.a, mp.cap, mp.rho)

    def gap(t):
        t = np.array(t)
        ext = math.exp(_extension_log_unnorm(inst, centers, weights, t)
                       - log_z)
        res = math.exp(-min(mp.a * abs(float(t) - c), mp.cap) - log_zr)
        return abs(ext - res)

    pts = sorted(set(_breakpoints(inst, centers)
                     + [x for x in (c, c - mp.saturation_radius,
                                    c + mp.saturation_radius)
                        if -mp.rho < x < mp.rho]))
    val, _ = integrate.quad(gap, -inst.rho, inst.rho, points=pts,
                            limit=200, epsabs=1e-13, epsrel=1e-12)
    return 0.5 * val


# ---- audit ----------------------------------------------------------------


@dataclass
class ExtensionAuditReport:
    instance: str
    n_probes: int
    max_ratio_slack: float
    worst_pair: tuple
    max_tv: float
    ratio_ok: bool
    tv_ok: bool

    @property
    def passed(self) -> bool:
        return self.ratio_ok and self.tv_ok

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps({
            "instance": self.instance, "n_probes": self.n_probes,
            "max_ratio_slack": self.max_ratio_slack,
            "worst_pair": list(self.worst_pair), "max_tv": self.max_tv,
            "pass": self.passed}, indent=indent)


def extension_audit(inst: EnumerableInstance,
                    probes: list | None = None,
                    n_quad: int = 200,
                    ratio_tol: float = 1e-6,
                    tv_tol: float = 1e-8) -> ExtensionAuditReport:
    """Verify the privacy-ratio bound on probe pairs and the agreement of
    extended and restricted densities on H.

    Every ordered probe pair (X, Y) must satisfy
    ``log f_X(t) - log f_Y(t) <= eps * dH(X, Y) + ratio_tol`` at n_quad
    interior points; every H member must have TV(extended, restricted)
    below tv_tol.  Probes default to the full enumeration of the grid.
    """
    if probes is None:
        probes = list(enumerate_samples(inst.grid, inst.n))
    rows = np.stack([inst.validate_probe(X).points[:, 0] for X in probes])
    ts = np.linspace(-inst.rho, inst.rho, n_quad + 2)[1:-1]
    curves = np.empty((len(probes), n_quad))
    for i, X in enumerate(probes):
        centers, weights = inst.envelope_branches(X)
        curves[i] = (_extension_log_unnorm(inst, centers, weights, ts)
                     - extension_log_normalizer(inst, X))
    dh = (rows[:, None, :] != rows[None, :, :]).sum(axis=2)
    slack = -math.inf
    worst = (0, 0)
    block = max(1, 2 ** 22 // (len(probes) * n_quad + 1))
    for start in range(0, len(probes), block):
        stop = min(start + block, len(probes))
        diff = curves[start:stop, None, :] - curves[None, :, :]
        s = diff.max(axis=2) - inst.epsilon * dh[start:stop]
        j = np.unravel_index(np.argmax(s), s.shape)
        if s[j] > slack:
            slack = float(s[j])
            worst = (start + int(j[0]), int(j[1]))
    max_tv = max(tv_extended_vs_restricted(inst, X)
                 for X in inst.H_members)
    return ExtensionAuditReport(
        instance=inst.name, n_probes=len(probes),
        max_ratio_slack=slack, worst_pair=worst, max_tv=max_tv,
        ratio_ok=slack <= ratio_tol, tv_ok=max_tv <= tv_tol)
