"""Experiment harness shared by the CLI and the acceptance suite.

Each experiment is a pure function of an explicit configuration and seed,
returning a flat dict of metrics, so runs are reproducible and the CLI
records are byte-stable.  Geometry-heavy experiments accelerate support
queries through vertex enumeration (d <= 3), which is cross-checked
against the LP route in the test suite.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .admissible import (AdmissibleParams, DistributionSpec, marginal_quantile,
                         sample_dist)
from .errors import ConfigError
from .geometry import Polytope, project, uniform_directions
from .mechanism import (MechanismParams, SampleSizeConstants,
                        flat_laplace_sample, quantile_query_spec,
                        region_uniform, sample_size, privacy_ratio_audit)
from .metrics import wasserstein2_empirical
from .pipeline import (LangevinConfig, coupled_langevin_gap, langevin_uniform,
                       noisy_oracle_params, private_sample_floating_body,
                       private_steiner)
from .quantiles import (DirectionNet, Sample, delta_q, floating_body,
                        query_quantiles, sphere_net)
from .rng import derive_seed, make_rng
from .typical import (TypicalSetConfig, check_typical, recommend_W,
                      sensitivity_bound)

GAUSSIAN_REFERENCE = {"R_max": 0.8, "R_min": 0.6, "r": 0.3, "L": 0.24}


def gaussian_reference_params(d: int, n: int, q: float = 0.75
                              ) -> AdmissibleParams:
    """Hand-certified admissible tuple for the standard Gaussian at q=0.75:
    the marginal quantile is 0.6745 in every direction, so |Q| <= 0.8, the
    floating body is the ball of radius 0.6745 >= 0.6, and the marginal
    density on (Q - 0.3, Q + 0.3) is at least phi(0.9745) = 0.2487 >= 0.24.
    """
    if abs(q - 0.75) > 1e-12:
        raise ConfigError("the reference constants are certified for q=0.75")
    return AdmissibleParams(q=q, R_max=GAUSSIAN_REFERENCE["R_max"],
                            R_min=GAUSSIAN_REFERENCE["R_min"],
                            r=GAUSSIAN_REFERENCE["r"],
                            L=GAUSSIAN_REFERENCE["L"],
                            B=10.0 * math.sqrt(d) * float(n) ** 3,
                            center=np.zeros(d))


def analytic_quantiles(spec: DistributionSpec, q: float,
                       net: DirectionNet) -> np.ndarray:
    """Population directional quantiles via the closed-form marginals."""
    return np.array([marginal_quantile(spec, theta, q)
                     for theta in net.directions])


# ---- vertex-accelerated support queries (d <= 3) ----------------------------


def enumerate_vertices(K: Polytope, tol: float = 1e-7) -> np.ndarray:
    """All vertices of a bounded polytope in d <= 3, by solving every
    d-subset of active halfspace equations and filtering feasibility."""
    d = K.dim
    if d > 3:
        raise ValueError("vertex enumeration is provided for d <= 3 only")
    A, b = K.normals, K.offsets
    idx = np.array(list(itertools.combinations(range(A.shape[0]), d)))
    mats = A[idx]
    dets = np.abs(np.linalg.det(mats))
    good = dets > 1e-10
    verts = np.linalg.solve(mats[good], b[idx[good]][..., None])[..., 0]
    feasible = (verts @ A.T <= b[None, :] + tol).all(axis=1)
    return verts[feasible]


def support_values(V: np.ndarray, directions: np.ndarray) -> np.ndarray:
    return (directions @ V.T).max(axis=1)


def support_maximizers(V: np.ndarray, directions: np.ndarray) -> np.ndarray:
    return V[(directions @ V.T).argmax(axis=1)]


def hausdorff_via_vertices(K: Polytope, L: Polytope,
                           directions: np.ndarray) -> float:
    VK, VL = enumerate_vertices(K), enumerate_vertices(L)
    return float(np.max(np.abs(support_values(VK, directions)
                               - support_values(VL, directions))))


def random_polytope(d: int, rng: np.random.Generator, m_halfspaces: int = 12,
                    box: float = 2.0, lo: float = 0.5, hi: float = 1.5
                    ) -> Polytope:
    """Random bounded polytope containing the origin: uniform halfspace
    normals with offsets in [lo, hi], intersected with the box [-box, box]^d."""
    normals = uniform_directions(d, m_halfspaces, rng)
    offsets = rng.uniform(lo, hi, m_halfspaces)
    eye = np.eye(d)
    normals = np.vstack([normals, eye, -eye])
    offsets = np.concatenate([offsets, np.full(2 * d, box)])
    return Polytope(normals, offsets, witness=np.zeros(d))


# ---- typical-pair construction -----------------------------------------------


def draw_typical_sample(spec: DistributionSpec, n: int, q: float,
                        net: DirectionNet, cfg: TypicalSetConfig,
                        rng: np.random.Generator,
                        max_tries: int = 50) -> Sample:
    for _ in range(max_tries):
        X = sample_dist(spec, n, rng)
        if check_typical(X, q, net, cfg).overall:
            return X
    raise RuntimeError("could not draw a typical sample; the gate margins "
                       "for this configuration are too thin")


def make_typical_neighbor_pair(spec: DistributionSpec, n: int, q: float,
                               net: DirectionNet, cfg: TypicalSetConfig,
                               rng: np.random.Generator,
                               max_tries: int = 50
                               ) -> tuple[Sample, Sample]:
    """A pair of typical datasets at Hamming distance exactly one."""
    X = draw_typical_sample(spec, n, q, net, cfg, rng, max_tries)
    row = int(rng.integers(n))
    for _ in range(max_tries):
        pts = X.points.copy()
        pts[row] = sample_dist(spec, 1, rng).points[0]
        if not np.allclose(pts[row], X.points[row]):
            Y = Sample(pts)
            if check_typical(Y, q, net, cfg).overall:
                return X, Y
    raise RuntimeError("could not construct a typical neighbor")


# ---- experiments, one per acceptance criterion cluster -------------------------


def convergence_experiment(d: int, q: float = 0.75, n_small: int = 1000,
                           n_large: int = 4000, net_size: int = 128,
                           n_seeds: int = 50, seed: int = 0) -> dict:
    """Median q-distance to the analytic quantiles at two sample sizes."""
    spec = DistributionSpec("gaussian", d)
    net = sphere_net(d, m=net_size, seed=derive_seed(seed, 0xA))
    truth = analytic_quantiles(spec, q, net)
    deltas = {n_small: [], n_large: []}
    for i in range(n_seeds):
        rng = make_rng(derive_seed(seed, i))
        for n in (n_small, n_large):
            X = sample_dist(spec, n, rng)
            emp = query_quantiles(X, q, net)
            deltas[n].append(float(np.max(np.abs(emp - truth))))
    med_small = float(np.median(deltas[n_small]))
    med_large = float(np.median(deltas[n_large]))
    return {"d": d, "n_small": n_small, "n_large": n_large,
            "median_delta_small": med_small, "median_delta_large": med_large,
            "ratio": med_large / med_small}


def sensitivity_experiment(n_pairs: int = 1000, n: int = 1000, d: int = 2,
                           q: float = 0.75, net_size: int = 64,
                           seed: int = 0) -> dict:
    """delta_q against the typical-set sensitivity bound on constructed
    neighbor pairs; the bound must hold with zero violations."""
    spec = DistributionSpec("gaussian", d)
    net = sphere_net(d, m=net_size, seed=derive_seed(seed, 0xB))
    params = gaussian_reference_params(d, n, q)
    cfg = TypicalSetConfig(W=recommend_W(net.size, d, 0.1), params=params, n=n)
    bound = sensitivity_bound(cfg, 1)
    rng = make_rng(seed)
    violations, worst = 0, 0.0
    for _ in range(n_pairs):
        X, Y = make_typical_neighbor_pair(spec, n, q, net, cfg, rng)
        dq = delta_q(X, Y, q, net)
        worst = max(worst, dq / bound)
        violations += dq > bound
    return {"pairs": n_pairs, "bound": bound, "violations": int(violations),
            "worst_ratio": worst}


def audit_experiment(n_pairs: int = 1000, n: int = 1000, q: float = 0.75,
                     epsilon: float = 1.0, n_grid: int = 200,
                     n_mc: int = 1_000_000, seed: int = 0,
                     threads: int = 1) -> dict:
    """Numerical privacy audit of the quantile mechanism on typical
    neighbor pairs (1-D, sign net, so the query dimension is 2)."""
    d = 1
    spec = DistributionSpec("gaussian", d)
    net = sphere_net(d)
    params = gaussian_reference_params(d, n, q)
    cfg = TypicalSetConfig(W=recommend_W(net.size, d, 0.1), params=params, n=n)
    mp = MechanismParams(epsilon, cfg, quantile_query_spec(net.size))
    shared = region_uniform(mp, n_mc, make_rng(derive_seed(seed, 0xC)))
    grid = region_uniform(mp, n_grid, make_rng(derive_seed(seed, 0xD)))
    pair_rng = make_rng(seed)
    pairs = [make_typical_neighbor_pair(spec, n, q, net, cfg, pair_rng)
             for _ in range(n_pairs)]

    def _one(pair) -> float:
        X, Y = pair
        res = privacy_ratio_audit(query_quantiles(X, q, net),
                                  query_quantiles(Y, q, net), 1, mp, grid,
                                  shared_points=shared)
        return res.slack

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            slacks = list(ex.map(_one, pairs))
    else:
        slacks = [_one(p) for p in pairs]
    return {"pairs": n_pairs, "grid": n_grid, "mc": n_mc,
            "max_slack": float(np.max(slacks)), "epsilon": epsilon}


def mechanism_accuracy_experiment(n_draws: int = 400, alpha: float = 0.1,
                                  beta: float = 0.1, epsilon: float = 1.0,
                                  d: int = 2, net_size: int = 8,
                                  q: float = 0.75, seed: int = 0) -> dict:
    """Empirical failure rate of the calibrated quantile mechanism against
    the analytic quantiles at the certified sample size."""
    spec = DistributionSpec("gaussian", d)
    angles = 2.0 * np.pi * np.arange(net_size) / net_size
    net = DirectionNet(np.column_stack([np.cos(angles), np.sin(angles)]),
                       provenance=f"circle({net_size})")
    params0 = gaussian_reference_params(d, 1, q)
    query = quantile_query_spec(net.size)
    n = sample_size(alpha, beta, epsilon, query, params0, A_size=net.size,
                    constants=SampleSizeConstants())
    params = gaussian_reference_params(d, n, q)
    cfg = TypicalSetConfig(W=recommend_W(net.size, d, beta), params=params,
                           n=n)
    mp = MechanismParams(epsilon, cfg, query)
    truth = analytic_quantiles(spec, q, net)
    rng = make_rng(seed)
    failures = 0
    for _ in range(n_draws):
        X = sample_dist(spec, n, rng)
        if not check_typical(X, q, net, cfg).overall:
            failures += 1
            continue
        draw = flat_laplace_sample(query_quantiles(X, q, net), mp, rng)
        failures += float(np.max(np.abs(draw - truth))) > alpha
    return {"n": int(n), "draws": n_draws, "failures": int(failures),
            "rate": failures / n_draws, "alpha": alpha, "beta": beta,
            "epsilon": epsilon}


def steiner_stability_experiment(n_pairs: int = 200, m_mc: int = 512,
                                 seed: int = 0) -> dict:
    """Steiner-point Lipschitz property over random polytope pairs:
    ||S(K) - S(L)|| <= sqrt(d) * Hausdorff + 2 * (MC standard error),
    with shared Monte Carlo directions across the pair."""
    rng = make_rng(seed)
    violations, worst = 0, 0.0
    for i in range(n_pairs):
        d = 2 + (i % 2)
        K = random_polytope(d, rng)
        delta = rng.uniform(0.01, 0.2)
        if i % 4 < 2:  # translate: Hausdorff distance exactly delta
            t = delta * uniform_directions(d, 1, rng)[0]
            L = Polytope(K.normals, K.offsets + K.normals @ t,
                         witness=t)
        else:  # shrink offsets by up to delta
            L = Polytope(K.normals,
                         K.offsets - rng.uniform(0.0, delta, K.offsets.size),
                         witness=np.zeros(d))
        VK, VL = enumerate_vertices(K), enumerate_vertices(L)
        net = np.vstack([K.normals, uniform_directions(d, 256, rng)])
        net /= np.linalg.norm(net, axis=1, keepdims=True)
        haus = float(np.max(np.abs(support_values(VK, net)
                                   - support_values(VL, net))))
        dirs = uniform_directions(d, m_mc, rng)
        diff = support_maximizers(VK, dirs) - support_maximizers(VL, dirs)
        gap = float(np.linalg.norm(diff.mean(axis=0)))
        se = float(np.linalg.norm(diff.std(axis=0, ddof=1))) / math.sqrt(m_mc)
        bound = math.sqrt(d) * haus + 2.0 * se
        worst = max(worst, gap / bound)
        violations += gap > bound
    return {"pairs": n_pairs, "violations": int(violations),
            "worst_ratio": worst}


def private_steiner_experiment(n_runs: int = 200, n: int = 100_000,
                               epsilon: float = 4.0, q: float = 0.75,
                               net_size: int = 64, m_mc: int = 256,
                               radius: float = 0.2, seed: int = 0) -> dict:
    """How often the private Steiner point of a Gaussian floating body
    lands within ``radius`` of the origin (the true Steiner point)."""
    d = 2
    spec = DistributionSpec("gaussian", d)
    net = sphere_net(d, m=net_size, seed=derive_seed(seed, 0xE))
    params = gaussian_reference_params(d, n, q)
    rng = make_rng(seed)
    hits = 0
    for _ in range(n_runs):
        X = sample_dist(spec, n, rng)
        point = private_steiner(X, q, epsilon, params, net,
                                m_directions=m_mc, rng=rng)
        hits += float(np.linalg.norm(point)) <= radius
    return {"runs": n_runs, "n": n, "epsilon": epsilon, "hits": int(hits),
            "hit_rate": hits / n_runs, "radius": radius}


def projection_stability_experiment(n_pairs: int = 200, seed: int = 0,
                                    tol: float = 1e-6) -> dict:
    """Hoelder-1/2 stability of metric projections across body pairs:
    ||P_K(x) - P_L(x)|| <= 2 sqrt((||x|| + R) * Hausdorff) + tol."""
    rng = make_rng(seed)
    violations, worst = 0, 0.0
    for i in range(n_pairs):
        d = 2 + (i % 2)
        box = 0.7 if d == 2 else 0.57  # keeps the body inside B(0, 1)
        K = random_polytope(d, rng, lo=0.3, hi=0.9, box=box)
        delta = rng.uniform(1e-3, 0.05)
        if i % 4 < 2:
            t = delta * uniform_directions(d, 1, rng)[0]
            L = Polytope(K.normals, K.offsets + K.normals @ t, witness=t)
        else:
            L = Polytope(K.normals,
                         K.offsets - rng.uniform(0.0, delta, K.offsets.size),
                         witness=np.zeros(d))
        net = np.vstack([K.normals, uniform_directions(d, 256, rng)])
        net /= np.linalg.norm(net, axis=1, keepdims=True)
        haus = hausdorff_via_vertices(K, L, net)
        x = rng.uniform(-2.0, 2.0, d)
        px = project(K, x).point
        py = project(L, x).point
        gap = float(np.linalg.norm(px - py))
        bound = 2.0 * math.sqrt((np.linalg.norm(x) + 1.0) * haus) + tol
        worst = max(worst, gap / bound)
        violations += gap > bound
    return {"pairs": n_pairs, "violations": int(violations),
            "worst_ratio": worst}


def square_langevin_experiment(eta: float = 0.1, k: int = 2500,
                               n_chains: int = 512, seed: int = 0) -> dict:
    """Noiseless projected walk on the square [-1,1]^2 against direct
    uniform draws, scored by (1/d) * W2^2."""
    K = Polytope.box([-1.0, -1.0], [1.0, 1.0])
    rng = make_rng(seed)
    cfg = LangevinConfig(eta=eta, k=k)
    chain = langevin_uniform(K, cfg, rng, n_out=n_chains)
    ref = rng.uniform(-1.0, 1.0, (n_chains, 2))
    w2 = wasserstein2_empirical(chain, ref)
    return {"eta": eta, "k": k, "chains": n_chains, "w2": w2,
            "w2sq_per_dim": w2 * w2 / 2.0}


def ball_pipeline_experiment(alpha: float = 0.1, epsilon: float = 1.0,
                             q: float = 0.75, n_batch: int = 4000,
                             k: int = 160, eta: float = 0.1,
                             net_size: int = 64, n_chains: int = 512,
                             seed: int = 0) -> dict:
    """End-to-end private sampler on the Gaussian floating body (a ball of
    radius 0.6745), with oracle noise injected at the mixing budget, scored
    by (1/d) * W2^2 against uniform draws from the true body."""
    d = 2
    spec = DistributionSpec("gaussian", d)
    net = sphere_net(d, m=net_size, seed=derive_seed(seed, 0xF))
    params = gaussian_reference_params(d, n_batch, q)
    rng = make_rng(seed)
    X = sample_dist(spec, n_batch * (k + 1), rng)
    cfg = LangevinConfig(eta=eta, k=k, alpha=alpha)
    budget = noisy_oracle_params(alpha, max(k, d), params)
    result = private_sample_floating_body(X, q, epsilon, alpha, params, net,
                                          cfg, rng, n_chains=n_chains,
                                          budget=budget)
    rho = marginal_quantile(spec, np.array([1.0, 0.0]), q)
    dirs = uniform_directions(d, n_chains, rng)
    ref = rho * np.sqrt(rng.random((n_chains, 1))) * dirs
    w2 = wasserstein2_empirical(result.points, ref)
    return {"alpha": alpha, "epsilon": epsilon, "k": k, "eta": eta,
            "rows": X.n, "batch_rows": result.batch_size, "w2": w2,
            "w2sq_per_dim": w2 * w2 / d, "bound": 9.0 * alpha,
            "total_epsilon": result.ledger.total_epsilon,
            "naive_epsilon_sum": result.ledger.naive_sum,
            "oracle_alpha": budget.alpha, "oracle_beta": budget.beta,
            "oracle_R": budget.R}


def coupling_experiment(alpha: float = 0.1, q: float = 0.75,
                        n_batch: int = 4000, k: int = 160, eta: float = 0.1,
                        net_size: int = 64, n_pairs: int = 100,
                        seed: int = 0) -> dict:
    """Coupled exact-vs-noisy walk gap on a Gaussian floating body against
    the mean-square coupling bound."""
    d = 2
    spec = DistributionSpec("gaussian", d)
    net = sphere_net(d, m=net_size, seed=derive_seed(seed, 0x10))
    params = gaussian_reference_params(d, n_batch, q)
    rng = make_rng(seed)
    body = floating_body(sample_dist(spec, n_batch, rng), q, net).body
    cfg = LangevinConfig(eta=eta, k=k, alpha=alpha)
    budget = noisy_oracle_params(alpha, max(k, d), params)
    gap, bound = coupled_langevin_gap(body, cfg, budget, params.R_max, rng,
                                      n_pairs=n_pairs)
    return {"alpha": alpha, "k": k, "eta": eta, "pairs": n_pairs,
            "mean_square_gap": gap, "bound": bound,
            "oracle_alpha": budget.alpha, "oracle_beta": budget.beta,
            "oracle_R": budget.R}
