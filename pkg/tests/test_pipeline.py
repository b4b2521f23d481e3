"""Tests for the end-to-end private estimators, the privacy ledger, the
noisy-oracle budget, and the projected Langevin walks.

Statistical behavior at scale lives in the harness experiments; here the
checks are the degenerate limits (noise -> 0 as the privacy budget blows
up), the exact bookkeeping contracts, and small coupled runs against the
closed-form gap bound.
"""

import json
import math

import numpy as np
import pytest
from scipy.special import ndtri

from dpbody.admissible import AdmissibleParams, DistributionSpec, sample_dist
from dpbody.errors import (InsufficientRowsError, KTooSmallError,
                           OracleFailureError, TypicalityGateError)
from dpbody.geometry import project, project_many, steiner_point
from dpbody.harness import draw_typical_sample, gaussian_reference_params
from dpbody.pipeline import (FloatingBodySampleResult, LangevinConfig,
                             NoisyOracleParams, PrivacyLedger,
                             coupled_langevin_gap, coupling_gap_bound,
                             default_truncation, langevin_uniform,
                             make_budget_oracles, noisy_langevin,
                             noisy_oracle_params,
                             private_project, private_quantiles,
                             private_sample_floating_body, private_steiner,
                             required_batch_rows, truncated_gaussians)
from dpbody.quantiles import Sample, floating_body, query_quantiles, sphere_net
from dpbody.rng import make_rng
from dpbody.typical import TypicalSetConfig, check_typical, recommend_W

Q = 0.75
HUGE_EPS = 1e6


@pytest.fixture(scope="module")
def gauss():
    params = gaussian_reference_params(d=2, n=4000)
    net = sphere_net(2, m=8, seed=123)
    W = recommend_W(net.size, 2, 0.1)
    cfg = TypicalSetConfig(W=W, params=params, n=4000)
    X = draw_typical_sample(DistributionSpec("gaussian", 2, seed=0),
                            4000, Q, net, cfg, make_rng(21))
    return params, net, W, X


# ---- ledger ----------------------------------------------------------------


def test_ledger_parallel_composition_is_max_over_batches():
    led = PrivacyLedger()
    led.register_batch(0, 0, 10)
    led.register_batch(1, 10, 20)
    led.charge("steiner", 1.0, 0, 10)
    led.charge("project", 1.0, 1, 10)
    led.charge("project", 0.5, 1, 10)
    assert led.batch_epsilon(0) == 1.0
    assert led.batch_epsilon(1) == 1.5
    assert led.total_epsilon == 1.5
    assert led.naive_sum == 2.5


def test_ledger_rejects_overlapping_batches():
    led = PrivacyLedger()
    led.register_batch(0, 0, 10)
    led.register_batch(1, 10, 20)
    with pytest.raises(ValueError):
        led.register_batch(2, 5, 15)
    led.register_batch(3, 20, 30)  # touching ranges are disjoint


def test_empty_ledger_totals_zero_and_serializes():
    led = PrivacyLedger()
    assert led.total_epsilon == 0.0
    led.register_batch(0, 0, 5)
    led.charge("quantiles", 0.25, 0, 5)
    blob = json.loads(led.to_json())
    assert blob["total_epsilon"] == 0.25
    assert blob["naive_sum"] == 0.25
    assert blob["batches"] == {"0": [0, 5]}
    assert blob["calls"][0]["op"] == "quantiles"


# ---- noisy-oracle budget -----------------------------------------------------


def test_budget_formulas_match_hand_substitution():
    params = AdmissibleParams(q=Q, R_max=1.0, R_min=0.5, r=0.1, L=0.3,
                              B=10.0, center=np.zeros(2))
    got = noisy_oracle_params(0.1, 100, params)
    assert got.alpha == pytest.approx(0.2 / 6400.0, rel=1e-12)
    assert got.alpha == pytest.approx(3.125e-5, rel=1e-12)
    assert got.beta == pytest.approx(
        4.0 * 0.01 / (2.0 ** 14 * 100 ** 2 * 4.0 * 1.21), rel=1e-12)
    assert got.R == pytest.approx(4.4, rel=1e-12)
    assert got.alpha < got.R
    assert got.mean_square == pytest.approx(
        got.R ** 2 * got.beta + got.alpha ** 2, rel=1e-12)


def test_budget_requires_at_least_d_steps():
    params = AdmissibleParams(q=Q, R_max=1.0, R_min=0.5, r=0.1, L=0.3,
                              B=10.0, center=np.zeros(3))
    with pytest.raises(KTooSmallError):
        noisy_oracle_params(0.1, 2, params)


def test_budget_validation():
    with pytest.raises(ValueError):
        NoisyOracleParams(alpha=2.0, beta=0.5, R=1.0)
    with pytest.raises(ValueError):
        NoisyOracleParams(alpha=0.1, beta=0.0, R=1.0)


def test_gap_bound_formula():
    noise = NoisyOracleParams(alpha=0.01, beta=0.001, R=2.0)
    ms = 4.0 * 0.001 + 1e-4
    want = 11 * (ms + 4.0 * 1.5 * math.sqrt(ms)) + 0.04
    assert coupling_gap_bound(10, 0.2, 1.5, noise) == pytest.approx(
        want, rel=1e-12)


def test_required_rows_are_astronomical_at_desk_scale(gauss):
    params, net, _, _ = gauss
    need = required_batch_rows(0.1, 1.0, params,
                               LangevinConfig(eta=0.1, k=2), net.size)
    assert need > 1e17


# ---- Langevin configuration ---------------------------------------------------


def test_langevin_config_theoretical_calibration():
    params = AdmissibleParams(q=Q, R_max=1.0, R_min=0.5, r=0.1, L=0.3,
                              B=10.0, center=np.zeros(2))
    cfg = LangevinConfig.from_alpha(0.2, 2, params)
    assert cfg.c_eta == 0.5 and cfg.c_k == 2.0
    assert cfg.eta == pytest.approx(0.5 * 0.25 / 16.0 * 0.04 / 2.0, rel=1e-12)
    assert cfg.k == math.ceil(2.0 * 64.0 / 0.25 * 2.0 / 0.04)
    assert cfg.trunc == pytest.approx(default_truncation(cfg.k, 2), rel=1e-12)


def test_truncation_default_and_override():
    assert default_truncation(160, 2) == pytest.approx(
        math.sqrt(2.0) * math.log(320.0), rel=1e-12)
    # floor of the log argument keeps the radius positive for tiny d*k
    assert default_truncation(1, 1) == pytest.approx(1.0, rel=1e-12)
    cfg = LangevinConfig(eta=0.1, k=5, trunc=3.5)
    assert cfg.truncation(7) == 3.5
    assert LangevinConfig(eta=0.1, k=5).truncation(2) == pytest.approx(
        default_truncation(5, 2))


def test_langevin_config_validation():
    with pytest.raises(ValueError):
        LangevinConfig(eta=-0.1, k=5)
    with pytest.raises(ValueError):
        LangevinConfig(eta=0.1, k=-1)


def test_truncated_gaussians_respect_the_radius():
    g = truncated_gaussians(3, 1.5, 500, make_rng(2))
    assert g.shape == (500, 3)
    assert np.linalg.norm(g, axis=1).max() <= 1.5


# ---- degenerate-noise limits ---------------------------------------------------


def test_quantiles_converge_to_exact_center_as_noise_vanishes(gauss):
    params, net, W, X = gauss
    draw = private_quantiles(X, Q, net, HUGE_EPS, params, rng=make_rng(1),
                             W=W)
    center = query_quantiles(X, Q, net)
    assert np.max(np.abs(draw - center)) < 1e-4


def test_steiner_converges_to_exact_center_as_noise_vanishes(gauss):
    params, net, W, X = gauss
    draw = private_steiner(X, Q, HUGE_EPS, params, net, m_directions=512,
                           rng=make_rng(2), W=W)
    exact = steiner_point(floating_body(X, Q, net).body, 512, make_rng(2))
    assert np.linalg.norm(draw - np.asarray(exact)) < 1e-4


def test_projection_converges_to_exact_center_as_noise_vanishes(gauss):
    params, net, W, X = gauss
    body = floating_body(X, Q, net).body
    outside = np.array([2.0, 0.0])
    draw = private_project(X, Q, outside, HUGE_EPS, params, net,
                           rng=make_rng(3), W=W)
    assert np.linalg.norm(draw - project(body, outside).point) < 1e-4
    interior = np.array([0.05, -0.03])
    draw_in = private_project(X, Q, interior, HUGE_EPS, params, net,
                              rng=make_rng(4), W=W)
    assert np.linalg.norm(draw_in - interior) < 1e-4


def test_projection_of_far_point_onto_unit_ball_body():
    # rescale the Gaussian so its directional 0.75-quantile is exactly 1;
    # the floating body is then (an outer net approximation of) the unit
    # ball and projecting (2, 0) lands near (1, 0)
    sigma = 1.0 / float(ndtri(0.75))
    params = AdmissibleParams(q=Q, R_max=0.8 * sigma, R_min=0.6 * sigma,
                              r=0.3 * sigma, L=0.24 / sigma,
                              B=10.0 * math.sqrt(2.0) * 4000.0 ** 3,
                              center=np.zeros(2))
    net = sphere_net(2, m=64, seed=5)
    W = recommend_W(net.size, 2, 0.1)
    cfg = TypicalSetConfig(W=W, params=params, n=4000)
    rng = make_rng(31)
    for _ in range(50):
        X = Sample(sample_dist(DistributionSpec("gaussian", 2, seed=0),
                               4000, rng).points * sigma)
        if check_typical(X, Q, net, cfg).overall:
            break
    draw = private_project(X, Q, np.array([2.0, 0.0]), HUGE_EPS, params,
                           net, rng=make_rng(7), W=W)
    assert np.linalg.norm(draw - np.array([1.0, 0.0])) < 0.15


def test_standalone_ops_charge_half_epsilon_each(gauss):
    params, net, W, X = gauss
    led = PrivacyLedger()
    private_quantiles(X, Q, net, 2.0, params, rng=make_rng(5), W=W,
                      ledger=led, batch=0)
    private_steiner(X, Q, 2.0, params, net, m_directions=128,
                    rng=make_rng(6), W=W, ledger=led, batch=0)
    private_project(X, Q, np.zeros(2), 2.0, params, net, rng=make_rng(7),
                    W=W, ledger=led, batch=0)
    assert [c["epsilon"] for c in led.calls] == [1.0, 1.0, 1.0]
    assert [c["op"] for c in led.calls] == ["quantiles", "steiner", "project"]


def test_gate_refuses_atypical_input(gauss):
    params, net, W, _ = gauss
    clustered = Sample(np.full((4000, 2), 5.0))
    with pytest.raises(TypicalityGateError) as err:
        private_quantiles(clustered, Q, net, 1.0, params, rng=make_rng(1),
                          W=W)
    assert err.value.report is not None
    assert not err.value.report.overall


# ---- walks ---------------------------------------------------------------------


def test_noiseless_walk_stays_put_without_noise(gauss):
    _, net, _, X = gauss
    K = floating_body(X, Q, net).body
    start = steiner_point(K, 256, make_rng(9))
    out = langevin_uniform(K, LangevinConfig(eta=0.0, k=10), make_rng(1),
                           n_out=3, start=start)
    np.testing.assert_allclose(out, np.tile(start, (3, 1)), atol=1e-12)


def test_single_zero_increment_is_projection_identity(gauss):
    _, net, _, X = gauss
    K = floating_body(X, Q, net).body
    start = steiner_point(K, 256, make_rng(9))

    class ZeroRng:
        @staticmethod
        def standard_normal(shape):
            return np.zeros(shape)

    out = langevin_uniform(K, LangevinConfig(eta=0.1, k=1), ZeroRng(),
                           n_out=2, start=start)
    np.testing.assert_allclose(out, np.tile(start, (2, 1)), atol=1e-9)


def test_walk_outputs_satisfy_every_halfspace(gauss):
    _, net, _, X = gauss
    K = floating_body(X, Q, net).body
    out = langevin_uniform(K, LangevinConfig(eta=0.2, k=30), make_rng(3),
                           n_out=32)
    assert (out @ K.normals.T - K.offsets).max() <= 1e-6


def test_noisy_walk_with_exact_oracles_matches_noiseless(gauss):
    _, net, _, X = gauss
    K = floating_body(X, Q, net).body
    start = steiner_point(K, 256, make_rng(9))
    cfg = LangevinConfig(eta=0.1, k=25, trunc=1e9)  # truncation never fires
    noiseless = langevin_uniform(K, cfg, make_rng(33), n_out=6, start=start)
    noisy = noisy_langevin(lambda P, t, r: project_many(K, P),
                           lambda m, r: np.tile(start, (m, 1)),
                           cfg, make_rng(33), d=2, n_out=6)
    np.testing.assert_array_equal(noiseless, noisy)


def test_oracle_failures_carry_the_step_index(gauss):
    cfg = LangevinConfig(eta=0.1, k=3)

    def bad_steiner(m, rng):
        raise RuntimeError("no start")

    with pytest.raises(OracleFailureError) as err:
        noisy_langevin(lambda P, t, r: P, bad_steiner, cfg, make_rng(1), d=2)
    assert err.value.step == -1

    def bad_projection(P, t, rng):
        if t == 2:
            raise RuntimeError("broke")
        return P

    with pytest.raises(OracleFailureError) as err:
        noisy_langevin(bad_projection, lambda m, r: np.zeros((m, 2)), cfg,
                       make_rng(1), d=2)
    assert err.value.step == 2


def test_budget_oracles_err_by_at_most_the_budget(gauss):
    params, net, _, X = gauss
    K = floating_body(X, Q, net).body
    noise = NoisyOracleParams(alpha=0.01, beta=1e-9, R=4.4)
    s_oracle, p_oracle = make_budget_oracles(K, noise, steiner_directions=256)
    rng = make_rng(11)
    pts = rng.normal(scale=2.0, size=(64, 2))
    exact = project_many(K, pts)
    noisy = p_oracle(pts, 0, rng)
    err = np.linalg.norm(noisy - exact, axis=1)
    assert np.all(err <= noise.alpha)  # beta ~ 1e-9: large errors unseen
    assert np.all(err >= 0.99 * noise.alpha)
    starts = s_oracle(16, rng)
    s_exact = steiner_point(K, 256, make_rng(1))
    assert np.linalg.norm(starts - s_exact, axis=1).max() <= noise.alpha


def test_coupled_gap_obeys_the_bound(gauss):
    params, net, _, X = gauss
    K = floating_body(X, Q, net).body
    noise = noisy_oracle_params(0.1, 40, params)
    gap, bound = coupled_langevin_gap(K, LangevinConfig(eta=0.1, k=40),
                                      noise, params.R_max, make_rng(13),
                                      n_pairs=30)
    assert gap <= bound


# ---- end-to-end sampler -----------------------------------------------------------


def test_zero_step_sampler_degenerates_to_private_steiner(gauss):
    params, net, _, X = gauss
    budget = noisy_oracle_params(0.1, 160, params)
    res = private_sample_floating_body(
        X, Q, 1.0, 0.1, params, net, LangevinConfig(eta=0.1, k=0),
        rng=make_rng(5), budget=budget)
    assert res.degenerate_steiner_only
    assert res.k == 0
    assert res.batch_size == 4000
    assert [c["op"] for c in res.ledger.calls] == ["steiner"]
    assert res.ledger.total_epsilon == 1.0
    body = floating_body(X, Q, net).body
    # noisy Steiner start stays within oracle accuracy of the body
    assert body.violation(res.points) <= budget.R


def test_sampler_splits_rows_into_disjoint_unit_epsilon_batches(gauss):
    params, net, _, X = gauss
    budget = noisy_oracle_params(0.1, 160, params)
    res = private_sample_floating_body(
        X, Q, 1.0, 0.1, params, net, LangevinConfig(eta=0.1, k=3),
        rng=make_rng(6), n_chains=4, budget=budget)
    assert res.points.shape == (4, 2)
    assert res.batch_size == 1000
    assert res.ledger.batches == {0: (0, 1000), 1: (1000, 2000),
                                  2: (2000, 3000), 3: (3000, 4000)}
    assert res.ledger.total_epsilon == 1.0
    assert res.ledger.naive_sum == 4.0
    assert all(c["epsilon"] == 1.0 for c in res.ledger.calls)
    spans = sorted(res.ledger.batches.values())
    assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))
    blob = json.loads(res.to_json())
    assert set(blob) == {"points", "k", "batch_size",
                         "steiner_only_degenerate", "ledger"}
    assert blob["ledger"]["total_epsilon"] == 1.0


def test_sampler_rejects_too_few_rows(gauss):
    params, net, _, X = gauss
    budget = noisy_oracle_params(0.1, 160, params)
    with pytest.raises(InsufficientRowsError):
        private_sample_floating_body(
            X, Q, 1.0, 0.1, params, net, LangevinConfig(eta=0.1, k=9999),
            rng=make_rng(1), budget=budget)


def test_sampler_without_explicit_budget_demands_calibrated_batches(gauss):
    params, net, _, X = gauss
    with pytest.raises(InsufficientRowsError) as err:
        private_sample_floating_body(
            X, Q, 1.0, 0.1, params, net, LangevinConfig(eta=0.1, k=3),
            rng=make_rng(1))
    assert "calibration" in str(err.value)


def test_sampler_reports_the_failing_batch(gauss):
    params, net, _, X = gauss
    budget = noisy_oracle_params(0.1, 160, params)
    pts = X.points.copy()
    pts[1000:2000] = 5.0  # poison batch 1 only
    with pytest.raises(TypicalityGateError) as err:
        private_sample_floating_body(
            Sample(pts), Q, 1.0, 0.1, params, net,
            LangevinConfig(eta=0.1, k=3), rng=make_rng(1), budget=budget)
    assert err.value.batch == 1
    assert "batch 1" in str(err.value)


def test_sampler_is_reproducible_given_seed(gauss):
    params, net, _, X = gauss
    budget = noisy_oracle_params(0.1, 160, params)
    runs = [private_sample_floating_body(
        X, Q, 1.0, 0.1, params, net, LangevinConfig(eta=0.1, k=2),
        rng=make_rng(17), budget=budget).points for _ in range(2)]
    np.testing.assert_array_equal(runs[0], runs[1])
