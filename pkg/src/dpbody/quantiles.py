"""Empirical directional quantiles and polytope floating bodies.

The one convention everything downstream depends on: the empirical
``q``-quantile of ``n`` reals is the ``ceil(q*n)``-th order statistic — the
smallest data value ``t`` with ``#{x_i <= t} >= q*n``.  No interpolation,
ever; two code paths that interpolate differently would silently break the
exact identity between quantile queries and the sup-distance ``delta_q``.

The floating body of a sample over a finite direction net A is the polytope
``{x : <x, theta> <= Q_q(<X, theta>)  for theta in A}`` — the empirical
depth-trimmed region cut out by one quantile halfspace per net direction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DeterministicNetUnsupportedError, DimensionMismatchError,
                     EmptyNetError, EmptySampleError, QOutOfRangeError)
from .geometry import InscribedBall, Polytope, chebyshev_ball
from .rng import make_rng

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


class Sample:
    """A dataset of ``n`` points in R^d, stored row-major as float64.

    ``source_hash`` (FNV-1a over the raw row bytes) is computed lazily on
    first access and is meant for cache keying only.
    """

    def __init__(self, points: np.ndarray):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.ndim != 2:
            raise ValueError("sample points must form an (n, d) array")
        if not np.all(np.isfinite(points)):
            raise ValueError("sample contains non-finite coordinates")
        self.points = points
        self._hash: int | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def source_hash(self) -> int:
        if self._hash is None:
            self._hash = fnv1a64(np.ascontiguousarray(self.points).tobytes())
        return self._hash

    @staticmethod
    def from_column(values) -> "Sample":
        return Sample(np.asarray(values, dtype=float).reshape(-1, 1))

    # ---- round-trip I/O -------------------------------------------------

    def to_csv(self, path) -> None:
        """Headerless CSV, shortest exact decimal per value (round-trips)."""
        with open(path, "w") as fh:
            for row in self.points:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")

    @staticmethod
    def from_csv(path) -> "Sample":
        points = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
        return Sample(points)

    def to_json(self, path) -> None:
        payload = {"n": self.n, "d": self.d,
                   "points": [[float(v) for v in row] for row in self.points]}
        Path(path).write_text(json.dumps(payload, sort_keys=True))

    @staticmethod
    def from_json(path) -> "Sample":
        payload = json.loads(Path(path).read_text())
        points = np.asarray(payload["points"], dtype=float).reshape(
            payload["n"], payload["d"])
        return Sample(points)


@dataclass(frozen=True)
class DirectionNet:
    """A finite set of unit directions with provenance metadata."""

    directions: np.ndarray
    resolution: float | None = None
    provenance: str = "custom"

    def __post_init__(self):
        directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if directions.shape[0] == 0:
            raise EmptyNetError("direction net is empty")
        norms = np.linalg.norm(directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("net directions must be unit vectors")
        object.__setattr__(self, "directions", directions)

    @property
    def size(self) -> int:
        return self.directions.shape[0]

    @property
    def d(self) -> int:
        return self.directions.shape[1]


def sphere_net(d: int, *, m: int | None = None, seed: int | None = None,
               gamma: float | None = None) -> DirectionNet:
    """Direction net on the unit sphere of R^d.

    Random mode (``m``, ``seed``): i.i.d. uniform directions.
    Deterministic mode (``gamma``): greedy farthest-point subset of a fine
    canonical grid with pairwise gaps >= gamma; supported for d <= 3 only.
    In d = 1 both modes return ``{+1, -1}``.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    if d == 1:
        return DirectionNet(np.array([[1.0], [-1.0]]), resolution=2.0,
                            provenance="axis")
    if gamma is not None:
        if d > 3:
            raise DeterministicNetUnsupportedError(
                "deterministic nets are built only for d <= 3")
        pool = _canonical_sphere_grid(d)
        chosen = _greedy_farthest(pool, gamma)
        return DirectionNet(chosen, resolution=float(gamma),
                            provenance=f"deterministic(gamma={gamma})")
    if m is None:
        raise ValueError("random nets need a direction count m")
    rng = make_rng(0 if seed is None else seed)
    from .geometry import uniform_directions
    return DirectionNet(uniform_directions(d, m, rng),
                        provenance=f"random(m={m}, seed={seed})")


def axis_net(d: int) -> DirectionNet:
    """The 2d signed coordinate directions."""
    eye = np.eye(d)
    return DirectionNet(np.vstack([eye, -eye]), provenance="axis")


def _canonical_sphere_grid(d: int) -> np.ndarray:
    if d == 2:
        angles = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
        return np.column_stack([np.cos(angles), np.sin(angles)])
    # d == 3: Fibonacci sphere, a standard low-discrepancy point set.
    n = 8192
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    golden = np.pi * (1.0 + np.sqrt(5.0))
    theta = golden * i
    return np.column_stack([np.sin(phi) * np.cos(theta),
                            np.sin(phi) * np.sin(theta),
                            np.cos(phi)])


def _greedy_farthest(pool: np.ndarray, gamma: float) -> np.ndarray:
    chosen = [pool[0]]
    dist = np.linalg.norm(pool - pool[0], axis=1)
    while True:
        idx = int(np.argmax(dist))
        if dist[idx] < gamma:
            break
        chosen.append(pool[idx])
        dist = np.minimum(dist, np.linalg.norm(pool - pool[idx], axis=1))
    return np.asarray(chosen)


# ---- quantiles ----------------------------------------------------------


def quantile_index(n: int, q: float) -> int:
    """0-based index of the ceil(q*n)-th order statistic, with a guard
    against float noise in q*n landing a hair above an integer."""
    if not 0.0 < q < 1.0:
        raise QOutOfRangeError(f"q must lie in (0, 1), got {q}")
    if n <= 0:
        raise EmptySampleError("empirical quantile of an empty sample")
    return max(0, math.ceil(q * n - 1e-9) - 1)


def empirical_quantile(values, q: float) -> float:
    """ceil(q*n)-th order statistic of ``values`` (left-continuous arg-inf)."""
    values = np.asarray(values, dtype=float).ravel()
    k = quantile_index(values.size, q)
    return float(np.partition(values, k)[k])


def quantile_along(X: Sample, theta: np.ndarray, q: float) -> float:
    """Empirical q-quantile of the projections ``<X_i, theta>``."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != X.d:
        raise DimensionMismatchError("direction dimension differs from sample")
    return empirical_quantile(X.points @ theta, q)


def query_quantiles(X: Sample, q: float, net: DirectionNet) -> np.ndarray:
    """Vector of per-direction empirical quantiles (the floating-body offsets)."""
    _check_net(X, net)
    proj = X.points @ net.directions.T
    k = quantile_index(X.n, q)
    return np.partition(proj, k, axis=0)[k]


def delta_q(X: Sample, Y: Sample, q: float, net: DirectionNet) -> float:
    """sup over the net of |Q_q(<X, theta>) - Q_q(<Y, theta>)|.

    Coincides exactly with the sup-norm gap of the quantile query vectors;
    that identity is what transfers Hamming-distance sensitivity to the
    body-level estimators.
    """
    if X.d != Y.d:
        raise DimensionMismatchError("samples live in different dimensions")
    return float(np.max(np.abs(query_quantiles(X, q, net)
                               - query_quantiles(Y, q, net))))


@dataclass
class FloatingBodyApprox:
    """Finite-net outer approximation of the q-floating body of a sample."""

    body: Polytope
    q: float
    net: DirectionNet
    source_hash: int
    ball: InscribedBall = field(default=None)

    @property
    def is_empty(self) -> bool:
        return self.ball is not None and self.ball.empty


def floating_body(X: Sample, q: float, net: DirectionNet,
                  compute_hash: bool = False) -> FloatingBodyApprox:
    """Polytope with one quantile halfspace per net direction.

    The Chebyshev ball is solved as part of construction: a positive radius
    yields a feasible witness, a negative LP optimum marks the body empty
    (a legal outcome — e.g. well-separated clusters at q near 1/2).  The
    source hash is skipped by default to keep construction O(n*M); pass
    ``compute_hash=True`` (or read ``X.source_hash``) when cache keys matter.
    """
    offsets = query_quantiles(X, q, net)
    body = Polytope(net.directions, offsets)
    ball = chebyshev_ball(body)
    if not ball.empty:
        body.witness = ball.center
    return FloatingBodyApprox(body=body, q=q, net=net,
                              source_hash=X.source_hash if compute_hash else 0,
                              ball=ball)


def hamming_distance(X: Sample, Y: Sample) -> int:
    """Number of differing rows (exact equality, order-sensitive)."""
    if X.d != Y.d or X.n != Y.n:
        raise DimensionMismatchError("hamming distance needs equal shapes")
    return int(np.sum(np.any(X.points != Y.points, axis=1)))


def _check_net(X: Sample, net: DirectionNet) -> None:
    if net.size == 0:
        raise EmptyNetError("direction net is empty")
    if net.d != X.d:
        raise DimensionMismatchError("net dimension differs from sample")
