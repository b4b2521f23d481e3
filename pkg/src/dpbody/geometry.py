"""Halfspace-intersection geometry: support functions, Hausdorff distance on
direction nets, Steiner points, metric projections and Chebyshev balls.

A convex body is represented as an H-polytope ``{x : N x <= o}`` with
unit-norm rows.  All linear programs go through the deterministic simplex
backend in :mod:`dpbody.linprog`; the metric projection uses Dykstra's
cyclic corrected-projection scheme, which converges for any intersection of
halfspaces without needing a vertex description.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (DimensionMismatchError, EmptyNetError, InfeasibleError,
                     UnboundedError)
from .linprog import simplex_maximize

Point = np.ndarray

_UNIT_TOL = 1e-12


@dataclass(frozen=True)
class Halfspace:
    """One constraint ``<normal, x> <= offset`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise ValueError("halfspace normal must have unit norm")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    def contains(self, x: Point, tol: float = 1e-9) -> bool:
        return float(self.normal @ x) <= self.offset + tol


class Polytope:
    """Intersection of halfspaces ``{x : normals x <= offsets}``.

    Parameters
    ----------
    normals : (m, d) array of unit rows.
    offsets : (m,) array.
    witness : optional point known to be feasible (set by ``chebyshev_ball``
        or the floating-body constructor when the body is nonempty).
    """

    def __init__(self, normals: np.ndarray, offsets: np.ndarray,
                 witness: Point | None = None):
        normals = np.atleast_2d(np.asarray(normals, dtype=float))
        offsets = np.asarray(offsets, dtype=float).ravel()
        if normals.shape[0] != offsets.shape[0]:
            raise DimensionMismatchError("one offset per normal required")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("all polytope normals must have unit norm")
        self.normals = normals
        self.offsets = offsets
        self.witness = None if witness is None else np.asarray(witness, dtype=float)

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def n_halfspaces(self) -> int:
        return self.normals.shape[0]

    @property
    def halfspaces(self) -> list[Halfspace]:
        return [Halfspace(n, o) for n, o in zip(self.normals, self.offsets)]

    def contains(self, x: Point, tol: float = 1e-9) -> bool:
        return bool(np.all(self.normals @ x <= self.offsets + tol))

    def violation(self, x: Point) -> float:
        """Largest constraint excess at ``x`` (<= 0 means feasible)."""
        return float(np.max(self.normals @ x - self.offsets))

    @staticmethod
    def box(lower, upper) -> "Polytope":
        """Axis-aligned box ``[lower_i, upper_i]`` in each coordinate."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        d = lower.size
        eye = np.eye(d)
        normals = np.vstack([eye, -eye])
        offsets = np.concatenate([upper, -lower])
        return Polytope(normals, offsets, witness=(lower + upper) / 2.0)

    @staticmethod
    def ball_tangent(center: Point, radius: float, directions: np.ndarray) -> "Polytope":
        """Circumscribed polytope of a ball: tangent halfspaces along ``directions``."""
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        offsets = directions @ np.asarray(center, dtype=float) + radius
        return Polytope(directions, offsets, witness=np.asarray(center, dtype=float))


@dataclass
class InscribedBall:
    """Largest ball inside a polytope; ``empty`` marks an infeasible body."""

    center: Point
    radius: float
    empty: bool = False


def uniform_directions(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` i.i.d. uniform unit vectors in R^d (normalized Gaussians)."""
    out = np.empty((m, d))
    need = np.arange(m)
    while need.size:
        g = rng.standard_normal((need.size, d))
        norms = np.linalg.norm(g, axis=1)
        ok = norms > _UNIT_TOL
        out[need[ok]] = g[ok] / norms[ok, None]
        need = need[~ok]
    return out


def support_function(K: Polytope, theta: np.ndarray) -> tuple[float, Point]:
    """Support value ``h_K(theta)`` and a maximizer, via one LP.

    Raises ``UnboundedError`` when K is unbounded along ``theta`` and
    ``InfeasibleError`` when K is empty.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != K.dim:
        raise DimensionMismatchError("direction dimension differs from body")
    x, value = simplex_maximize(theta, K.normals, K.offsets)
    return value, x


def hausdorff_net(K1: Polytope, K2: Polytope, net) -> float:
    """sup over the net of |h_K1 - h_K2|: the support-function Hausdorff
    surrogate (equals the Hausdorff distance in the dense-net limit)."""
    directions = _net_directions(net)
    if K1.dim != K2.dim:
        raise DimensionMismatchError("bodies live in different dimensions")
    worst = 0.0
    for theta in directions:
        h1, _ = support_function(K1, theta)
        h2, _ = support_function(K2, theta)
        worst = max(worst, abs(h1 - h2))
    return worst


def steiner_point(K: Polytope, m: int, rng: np.random.Generator,
                  return_stderr: bool = False):
    """Monte Carlo Steiner point: average support-function maximizer over
    ``m`` uniform directions.

    Averaging maximizers (rather than ``d * theta * h_K``) keeps the output a
    convex combination of points of K, hence inside K up to LP tolerance.
    The optional standard-error estimate is the per-coordinate sample error
    of the mean, useful for pairing with stability bounds.
    """
    directions = uniform_directions(K.dim, m, rng)
    maximizers = np.empty((m, K.dim))
    for i, theta in enumerate(directions):
        _, maximizers[i] = support_function(K, theta)
    point = maximizers.mean(axis=0)
    if not return_stderr:
        return point
    stderr = maximizers.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros(K.dim)
    return point, stderr


def _require_feasible(K: Polytope) -> None:
    """Projection needs a nonempty target.  A stored witness certifies that
    for free; otherwise one Chebyshev LP decides, and its center is cached
    as the witness so the check runs at most once per body."""
    if K.witness is not None:
        return
    ball = chebyshev_ball(K)
    if ball.empty:
        raise InfeasibleError("cannot project onto an empty polytope")
    K.witness = ball.center


@dataclass
class ProjectionResult:
    point: Point
    converged: bool
    sweeps: int

    def __iter__(self):  # allows ``point, converged, sweeps = project(...)``
        yield self.point
        yield self.converged
        yield self.sweeps


def _kkt_polish(K: Polytope, v: np.ndarray, y: np.ndarray,
                feas_tol: float = 1e-9) -> np.ndarray | None:
    """Finish a near-converged projection exactly via its KKT system.

    Dykstra converges only linearly when active faces meet at a shallow
    angle, but the active set read off a stalled iterate is already
    correct; solving ``x = v - N_S' lam`` with ``lam >= 0`` on that set
    terminates finitely.  The result is returned only when both primal and
    dual feasibility hold — for a convex quadratic those certify the exact
    minimizer — so a ``None`` (degenerate set, bad guess) is always safe
    and sends the caller back to plain Dykstra.
    """
    normals, offsets = K.normals, K.offsets
    scale = 1.0 + float(np.linalg.norm(v))
    slack = 1e-6 * scale + 2.0 * float(K.violation(y))
    S = list(np.flatnonzero(normals @ y >= offsets - slack))
    for _ in range(50):
        if not S:
            x = v
        else:
            Ns, os_ = normals[S], offsets[S]
            gram = Ns @ Ns.T
            try:
                lam = np.linalg.solve(gram, Ns @ v - os_)
            except np.linalg.LinAlgError:
                lam = np.linalg.lstsq(gram, Ns @ v - os_, rcond=None)[0]
            if lam.min() < -1e-12:
                S.pop(int(np.argmin(lam)))
                continue
            x = v - lam @ Ns
        excess = normals @ x - offsets
        j = int(np.argmax(excess))
        if excess[j] <= feas_tol * scale:
            return x
        if j in S:
            return None
        S.append(j)
    return None


def project(K: Polytope, x: Point, tol: float = 1e-8,
            max_iter: int = 100_000) -> ProjectionResult:
    """Euclidean projection of ``x`` onto K by Dykstra's algorithm.

    Cycles over the halfspaces applying corrected projections; for an
    intersection of convex sets the iterates converge to the exact metric
    projection.  Once a full sweep moves the iterate less than ``tol`` the
    limit is resolved exactly through the KKT system of the active faces
    (with the slow-but-sure correction-stall criterion as fallback); if the
    sweep budget runs out the best iterate is returned with
    ``converged=False`` rather than raising.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != K.dim:
        raise DimensionMismatchError("point dimension differs from body")
    _require_feasible(K)
    y = x.copy()
    corrections = np.zeros((K.n_halfspaces, K.dim))
    normals, offsets = K.normals, K.offsets
    for sweep in range(1, max_iter + 1):
        start = y.copy()
        prev = corrections.copy()
        for i in range(K.n_halfspaces):
            z = y + corrections[i]
            excess = normals[i] @ z - offsets[i]
            if excess > 0.0:
                y = z - excess * normals[i]
            else:
                y = z
            corrections[i] = z - y
        if np.linalg.norm(y - start) < tol:
            polished = _kkt_polish(K, x, y)
            if polished is not None:
                return ProjectionResult(polished, True, sweep)
            # The iterate alone can stall while corrections keep drifting;
            # without a certified polish, convergence requires both to stop.
            moved = (np.linalg.norm(y - start) ** 2
                     + ((corrections - prev) ** 2).sum())
            if moved < tol * tol:
                return ProjectionResult(y, True, sweep)
    return ProjectionResult(y, False, max_iter)


def project_many(K: Polytope, X: np.ndarray, tol: float = 1e-8,
                 max_iter: int = 100_000) -> np.ndarray:
    """Dykstra projections of every row of ``X`` onto K, vectorized across
    rows; like ``project``, returns the best iterates if the sweep budget
    runs out.

    The batch sweeps until every row's iterate stalls, then each row is
    finished exactly through the KKT polish; rows the polish cannot certify
    (degenerate active sets) fall back to the scalar path.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != K.dim:
        raise DimensionMismatchError("point dimension differs from body")
    _require_feasible(K)
    normals, offsets = K.normals, K.offsets
    out = X.copy()
    # Rows already inside the body project to themselves.
    todo = np.flatnonzero((X @ normals.T - offsets).max(axis=1) > 0.0)
    if todo.size == 0:
        return out
    Y = X[todo].copy()
    corrections = np.zeros((K.n_halfspaces,) + Y.shape)
    for _ in range(max_iter):
        start = Y.copy()
        for i in range(K.n_halfspaces):
            Z = Y + corrections[i]
            excess = Z @ normals[i] - offsets[i]
            Y = Z - np.maximum(excess, 0.0)[:, None] * normals[i]
            corrections[i] = Z - Y
        if np.max(np.abs(Y - start)) < tol:
            break
    for j, row in enumerate(todo):
        polished = _kkt_polish(K, X[row], Y[j])
        if polished is None:
            polished = project(K, X[row], tol, max_iter).point
        out[row] = polished
    return out


def chebyshev_ball(K: Polytope) -> InscribedBall:
    """Largest inscribed ball via the LP
    ``max rho  s.t.  <n_i, c> + rho <= o_i`` (unit normals).

    A negative optimum certifies an empty body; the result is then reported
    with ``radius 0`` and ``empty=True`` (the LP center is the least-violating
    point).  An unbounded radius raises ``UnboundedError``.
    """
    d = K.dim
    A = np.hstack([K.normals, np.ones((K.n_halfspaces, 1))])
    c = np.zeros(d + 1)
    c[-1] = 1.0
    try:
        x, value = simplex_maximize(c, A, K.offsets)
    except UnboundedError:
        raise UnboundedError("halfspaces do not bound a ball (radius unbounded)")
    center = x[:d]
    if value < 0.0:
        return InscribedBall(center, 0.0, empty=True)
    return InscribedBall(center, float(value), empty=False)


def _net_directions(net) -> np.ndarray:
    """Accept either a raw (M, d) array or an object with ``.directions``."""
    directions = getattr(net, "directions", net)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if directions.shape[0] == 0:
        raise EmptyNetError("direction net is empty")
    return directions
