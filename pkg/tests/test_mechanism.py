"""Flattened-Laplace mechanism: calibration arithmetic, exact sampling,
privacy audits, and the sample-size rule.

Oracles:
  * adaptive quadrature of t^k e^{-t} for the gamma-segment closed form,
  * a trapezoid-integrated 1-D CDF of the mechanism density for KS tests
    of the sampler,
  * closed-form coordinate marginals of uniform p-balls for the direction
    sampler,
  * dense deterministic normalizer grids for the privacy-ratio audit.
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from dpbody.admissible import AdmissibleParams
from dpbody.errors import (AlphaTooLargeError, DimensionMismatchError,
                           InvalidIntervalError, RejectionStallError)
from dpbody.mechanism import (AuditResult, HolderQuerySpec, MechanismParams,
                              SampleSizeConstants, _bump_radii,
                              audit_log_normalizer, cone_directions,
                              failure_probability_bound, flat_laplace_logdensity,
                              flat_laplace_sample, g_poly, logdensity_many,
                              pnorm, privacy_ratio_audit,
                              projection_query_spec, quantile_query_spec,
                              region_uniform, sample_size,
                              segment_gamma_integral, steiner_query_spec)
from dpbody.rng import make_rng
from dpbody.typical import TypicalSetConfig, recommend_W

# Hand-checkable calibration: W = 16, n = 4000, L = 0.24, r_eff = 0.3,
# epsilon = 1 gives slope 7.5, cap 0.5625, region radius 1.9 and
# saturation radius 0.075 for any unit-Lipschitz query.


def clean_params(d=2):
    return AdmissibleParams(q=0.75, R_max=0.8, R_min=0.6, r=0.3, L=0.24,
                            B=1e12, center=np.zeros(d))


def clean_cfg(n=4000, W=16.0):
    return TypicalSetConfig(W=W, params=clean_params(), n=n)


def mech(M=1, epsilon=1.0, n=4000):
    return MechanismParams(epsilon, clean_cfg(n=n), quantile_query_spec(M))


# ---- oracles -----------------------------------------------------------------


def quad_gamma_oracle(a, b, k):
    if math.isinf(b):
        b = a + 200.0 + 20.0 * k
    val, _ = integrate.quad(lambda t: t ** k * math.exp(-t), a, b,
                            limit=400, epsabs=0.0, epsrel=1e-13)
    return val


def mech_cdf_1d(mp, center):
    """Trapezoid CDF of exp(-min(a|t - c|, cap)) on [-rho, rho]."""
    ts = np.linspace(-mp.rho, mp.rho, 400_001)
    dens = np.exp(-np.minimum(mp.a * np.abs(ts - center), mp.cap))
    steps = 0.5 * (dens[1:] + dens[:-1]) * np.diff(ts)
    cdf = np.concatenate([[0.0], np.cumsum(steps)])
    cdf /= cdf[-1]
    return lambda x: np.interp(x, ts, cdf)


# ---- gamma-segment toolkit ------------------------------------------------------


def test_g_poly_base_and_paper_value():
    assert g_poly(0, 3.7) == 1.0
    assert g_poly(2, 3.0) == 17.0  # x^2 + 2x + 2 at x = 3


def test_g_poly_at_zero_is_factorial():
    for k in range(7):
        assert g_poly(k, 0.0) == float(math.factorial(k))


def test_g_poly_matches_explicit_sum():
    rng = make_rng(50)
    for _ in range(20):
        k = int(rng.integers(0, 12))
        x = float(rng.uniform(-3.0, 5.0))
        explicit = sum(math.factorial(k) / math.factorial(j) * x ** j
                       for j in range(k + 1))
        assert g_poly(k, x) == pytest.approx(explicit, rel=1e-12)


def test_g_poly_rejects_negative_order():
    with pytest.raises(ValueError):
        g_poly(-1, 0.0)


def test_segment_integral_full_gamma():
    assert segment_gamma_integral(0.0, math.inf, 2) == pytest.approx(
        2.0, rel=1e-12)


def test_segment_integral_hand_value():
    want = 2.0 / math.e - 3.0 / math.e ** 2  # g_1(1)e^-1 - g_1(2)e^-2
    got = segment_gamma_integral(1.0, 2.0, 1)
    assert got == pytest.approx(want, rel=1e-12)
    assert got == pytest.approx(0.329753, abs=1e-6)


def test_segment_integral_tracks_quadrature_to_1e12():
    rng = make_rng(51)
    for k in (0, 1, 2, 5, 13, 27, 42, 60):
        for _ in range(6):
            a = float(rng.uniform(0.0, 3.0 + k))
            b = a + float(rng.uniform(0.001, 10.0))
            want = quad_gamma_oracle(a, b, k)
            assert segment_gamma_integral(a, b, k) == pytest.approx(
                want, rel=1e-12)


def test_segment_integral_additive():
    a, b, c, k = 0.7, 2.1, 5.3, 4
    assert segment_gamma_integral(a, c, k) == pytest.approx(
        segment_gamma_integral(a, b, k) + segment_gamma_integral(b, c, k),
        rel=1e-12)


def test_segment_integral_deep_tail_scale():
    # far beyond float range of e^-t: the log-domain fallback keeps the
    # leading-order value e^-700 * 700^3 * width
    got = segment_gamma_integral(700.0, 700.0001, 3)
    lead = math.exp(-700.0 + 3.0 * math.log(700.0)) * 1e-4
    assert got == pytest.approx(lead, rel=1e-3)


def test_segment_integral_rejects_bad_intervals():
    with pytest.raises(InvalidIntervalError):
        segment_gamma_integral(-0.1, 1.0, 2)
    with pytest.raises(InvalidIntervalError):
        segment_gamma_integral(2.0, 2.0, 2)
    with pytest.raises(InvalidIntervalError):
        segment_gamma_integral(1.0, 2.0, -1)


# ---- query specs and calibration --------------------------------------------------


def test_query_spec_validation():
    with pytest.raises(ValueError):
        HolderQuerySpec(h=0.0, K=1.0, M=1, p=2.0)
    with pytest.raises(ValueError):
        HolderQuerySpec(h=1.5, K=1.0, M=1, p=2.0)
    with pytest.raises(ValueError):
        HolderQuerySpec(h=1.0, K=0.0, M=1, p=2.0)
    with pytest.raises(ValueError):
        HolderQuerySpec(h=1.0, K=1.0, M=0, p=2.0)
    with pytest.raises(ValueError):
        HolderQuerySpec(h=1.0, K=1.0, M=1, p=3.0)
    with pytest.raises(DimensionMismatchError):
        HolderQuerySpec(h=1.0, K=1.0, M=2, p=2.0, value=np.zeros(3))


def test_builtin_query_specs():
    qq = quantile_query_spec(5)
    assert (qq.h, qq.K, qq.M, qq.p) == (1.0, 1.0, 5, math.inf)
    st = steiner_query_spec(2, clean_params())
    assert st.h == 1.0 and st.p == 2.0 and st.M == 2
    assert st.K == pytest.approx(6.0 * math.sqrt(2.0) * 1.1 / 0.6, rel=1e-12)
    pr = projection_query_spec(2, 2.0, clean_params())
    assert pr.h == 0.5
    assert pr.K == pytest.approx(5.0 * math.sqrt(3.1 * 1.1 / 0.6), rel=1e-12)


def test_mechanism_calibration_arithmetic():
    mp = mech(M=8)
    assert mp.a == pytest.approx(7.5, rel=1e-12)
    assert mp.cap == pytest.approx(0.5625, rel=1e-12)
    assert mp.rho == pytest.approx(1.9, rel=1e-12)
    assert mp.saturation_radius == pytest.approx(0.075, rel=1e-12)


def test_saturation_radius_does_not_depend_on_n():
    a = mech(n=4000)
    b = mech(n=16000)
    assert a.saturation_radius == pytest.approx(b.saturation_radius, rel=1e-12)
    assert b.a == pytest.approx(4.0 * a.a, rel=1e-12)  # slope scales with n


def test_mechanism_params_validation_and_with_value():
    with pytest.raises(ValueError):
        MechanismParams(0.0, clean_cfg(), quantile_query_spec(1))
    mp = mech(M=2)
    mv = mp.with_value(np.array([0.1, 0.2]))
    assert np.array_equal(mv.query.value, [0.1, 0.2])
    assert mp.query.value is None  # original untouched


# ---- log-density -------------------------------------------------------------------


def test_logdensity_zero_at_center_and_capped_in_tail():
    mp = mech(M=2)
    c = np.array([0.3, -0.2])
    assert flat_laplace_logdensity(c, c, mp) == 0.0
    far = c + np.array([0.5, 0.0])  # 0.5 > saturation radius 0.075
    assert flat_laplace_logdensity(far, c, mp) == -mp.cap
    outside = np.array([2.0, 0.0])  # sup norm 2.0 > rho = 1.9
    assert flat_laplace_logdensity(outside, c, mp) == -math.inf


def test_logdensity_validates_dimensions():
    mp = mech(M=2)
    with pytest.raises(DimensionMismatchError):
        flat_laplace_logdensity(np.zeros(3), np.zeros(2), mp)
    with pytest.raises(DimensionMismatchError):
        flat_laplace_logdensity(np.zeros(2), np.zeros(3), mp)


def test_logdensity_flat_beyond_saturation_radius():
    mp = mech(M=3)
    rng = make_rng(52)
    c = np.array([0.2, 0.0, -0.1])
    for _ in range(50):
        u = rng.normal(size=3)
        u /= np.abs(u).max()  # unit sup-norm direction
        s = float(rng.uniform(mp.saturation_radius, 1.2))
        t = c + s * u
        if pnorm(t, mp.query.p) <= mp.rho:
            assert flat_laplace_logdensity(t, c, mp) == -mp.cap


@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_logdensity_is_a_contraction_of_the_center(p):
    cfg = clean_cfg()
    mp = MechanismParams(1.0, cfg, HolderQuerySpec(h=1.0, K=1.0, M=3, p=p))
    rng = make_rng(53)
    checked = 0
    for _ in range(300):
        t = rng.uniform(-0.8, 0.8, 3)
        if pnorm(t, p) > mp.rho:  # the claim quantifies over the region
            continue
        c1 = rng.uniform(-0.8, 0.8, 3)
        c2 = rng.uniform(-0.8, 0.8, 3)
        gap = abs(flat_laplace_logdensity(t, c1, mp)
                  - flat_laplace_logdensity(t, c2, mp))
        assert gap <= mp.a * float(pnorm(c1 - c2, p)) + 1e-12
        checked += 1
    assert checked >= 200


def test_logdensity_many_matches_scalar():
    mp = mech(M=2)
    rng = make_rng(54)
    T = np.vstack([rng.uniform(-2.2, 2.2, (40, 2))])  # some rows outside
    c = np.array([0.1, 0.4])
    batch = logdensity_many(T, c, mp)
    singles = np.array([flat_laplace_logdensity(t, c, mp) for t in T])
    assert np.array_equal(batch, singles)


# ---- direction and region sampling ----------------------------------------------


@pytest.mark.parametrize("p,M", [(1.0, 3), (2.0, 4), (math.inf, 2)])
def test_cone_directions_have_unit_p_norm(p, M):
    dirs = cone_directions(p, M, 500, make_rng(55))
    assert np.allclose(pnorm(dirs, p), 1.0, atol=1e-12)


def test_cone_directions_reject_other_norms():
    with pytest.raises(ValueError):
        cone_directions(3.0, 2, 4, make_rng(0))


def test_region_uniform_radial_law():
    mp = MechanismParams(1.0, clean_cfg(),
                         HolderQuerySpec(h=1.0, K=1.0, M=2, p=2.0))
    pts = region_uniform(mp, 20_000, make_rng(56))
    radii = pnorm(pts, 2.0)
    assert radii.max() <= mp.rho + 1e-12
    # for uniform mass on the 2-ball, (r/rho)^2 is uniform on [0, 1]
    res = stats.kstest((radii / mp.rho) ** 2, "uniform")
    assert res.pvalue > 1e-4


def test_region_uniform_euclidean_coordinate_marginal():
    mp = MechanismParams(1.0, clean_cfg(),
                         HolderQuerySpec(h=1.0, K=1.0, M=2, p=2.0))
    pts = region_uniform(mp, 20_000, make_rng(57))
    u = pts[:, 0] / mp.rho

    def cdf(x):
        x = np.clip(x, -1.0, 1.0)
        return (np.arcsin(x) + x * np.sqrt(1.0 - x * x)) / math.pi + 0.5

    assert stats.kstest(u, cdf).pvalue > 1e-4


def test_region_uniform_sup_norm_coordinates_are_uniform():
    mp = MechanismParams(1.0, clean_cfg(),
                         HolderQuerySpec(h=1.0, K=1.0, M=2, p=math.inf))
    pts = region_uniform(mp, 20_000, make_rng(58))
    for j in range(2):
        res = stats.kstest(pts[:, j], "uniform",
                           args=(-mp.rho, 2.0 * mp.rho))
        assert res.pvalue > 1e-4


def test_region_uniform_l1_coordinate_marginal():
    M = 3
    mp = MechanismParams(1.0, clean_cfg(),
                         HolderQuerySpec(h=1.0, K=1.0, M=M, p=1.0))
    pts = region_uniform(mp, 20_000, make_rng(59))
    u = pts[:, 1] / mp.rho

    def cdf(x):
        x = np.clip(x, -1.0, 1.0)
        return 0.5 + 0.5 * np.sign(x) * (1.0 - (1.0 - np.abs(x)) ** M)

    assert stats.kstest(u, cdf).pvalue > 1e-4


# ---- exact sampler -----------------------------------------------------------------


def test_sampler_matches_analytic_cdf_one_dimensional():
    mp = mech(M=1)
    center = np.array([0.3])
    draws = flat_laplace_sample(center, mp, make_rng(60), size=100_000)
    res = stats.kstest(draws.ravel(), mech_cdf_1d(mp, 0.3))
    assert res.statistic < 0.01


def test_sampler_ks_across_twenty_seeds():
    mp = mech(M=1)
    cdf = mech_cdf_1d(mp, -0.4)
    center = np.array([-0.4])
    for i in range(20):
        draws = flat_laplace_sample(center, mp, make_rng(61 + i), size=2000)
        res = stats.kstest(draws.ravel(), cdf)
        assert res.pvalue > 1e-3 / 20.0  # Bonferroni across the seeds


def test_sampler_symmetric_center_has_tiny_mean():
    mp = MechanismParams(1.0, clean_cfg(),
                         HolderQuerySpec(h=1.0, K=1.0, M=2, p=2.0))
    draws = flat_laplace_sample(np.zeros(2), mp, make_rng(62), size=20_000)
    se = draws.std(axis=0) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0)) <= 4.0 * se)


def test_sampler_tail_histogram_is_flat():
    mp = mech(M=1)
    draws = flat_laplace_sample(np.array([0.2]), mp, make_rng(63),
                                size=100_000).ravel()
    # two equal-width bands beyond the saturation radius, inside the region
    n1 = int(np.sum((draws >= 0.4) & (draws < 0.7)))
    n2 = int(np.sum((draws >= 0.7) & (draws < 1.0)))
    assert n1 > 2000 and n2 > 2000
    assert abs(n1 / n2 - 1.0) < 0.05


def test_sampler_single_draw_shape_and_support():
    mp = mech(M=3)
    one = flat_laplace_sample(np.zeros(3), mp, make_rng(64))
    assert one.shape == (3,)
    many = flat_laplace_sample(np.zeros(3), mp, make_rng(65), size=11)
    assert many.shape == (11, 3)
    assert np.all(pnorm(many, mp.query.p) <= mp.rho + 1e-12)


def test_sampler_validates_center():
    with pytest.raises(DimensionMismatchError):
        flat_laplace_sample(np.zeros(3), mech(M=2), make_rng(0))


def test_bump_rejection_stall_guard():
    # microscopic cap: the thinning probability 1 - e^{x - cap} never
    # exceeds cap, so the radial sampler must give up loudly
    mp = mech(M=1, epsilon=1e-9)
    with pytest.raises(RejectionStallError):
        _bump_radii(mp, 1, make_rng(66))


def test_tiny_cap_mixture_avoids_the_bump_entirely():
    # ... while the full sampler is untroubled: the bump's mass is O(cap^2)
    # so the flat layer absorbs the mixture and sampling stays exact
    mp = mech(M=1, epsilon=1e-9)
    draws = flat_laplace_sample(np.array([0.3]), mp, make_rng(67), size=4000)
    res = stats.kstest(draws.ravel(), "uniform", args=(-mp.rho, 2.0 * mp.rho))
    assert res.pvalue > 1e-4  # density is flat to within 5.6e-10 nats


# ---- privacy-ratio audit -------------------------------------------------------------


def audit_grid(mp):
    pts = np.linspace(-mp.rho * 0.9, mp.rho * 0.9, 401)
    return pts.reshape(-1, 1)


def dense_shared(mp, n=2_000_001):
    return np.linspace(-mp.rho, mp.rho, n).reshape(-1, 1)


def test_audit_identical_centers():
    mp = mech(M=1)
    res = privacy_ratio_audit(np.array([0.2]), np.array([0.2]), 1, mp,
                              audit_grid(mp), shared_points=dense_shared(mp))
    assert res.max_abs_log_ratio == 0.0
    assert res.slack == pytest.approx(-0.5)  # minus the eps/2 budget
    assert res.passed


def test_audit_at_exact_sensitivity_displacement():
    # one changed row moves the quantile by <= 2W/(Ln) = 1/30; the log-ratio
    # peaks at slope * displacement = eps/4, half the budget
    mp = mech(M=1)
    c1 = np.array([0.2])
    c2 = np.array([0.2 + 1.0 / 30.0])
    grid = np.vstack([audit_grid(mp), c1[None, :], c2[None, :]])
    res = privacy_ratio_audit(c1, c2, 1, mp, grid,
                              shared_points=dense_shared(mp))
    assert res.max_abs_log_ratio == pytest.approx(0.25, abs=1e-4)
    assert res.slack == pytest.approx(-0.25, abs=1e-4)
    assert res.passed


def test_audit_flags_ten_fold_displacement():
    # 10x the sensitivity bound: the ratio saturates at the cap 0.5625,
    # exceeding the eps/2 = 0.5 budget by 0.0625
    mp = mech(M=1)
    c1 = np.array([0.2])
    c2 = np.array([0.2 + 10.0 / 30.0])
    grid = np.vstack([audit_grid(mp), c1[None, :], c2[None, :]])
    res = privacy_ratio_audit(c1, c2, 1, mp, grid,
                              shared_points=dense_shared(mp))
    assert res.slack == pytest.approx(0.0625, abs=1e-4)
    assert res.slack > 0.0
    assert not res.passed


def test_audit_normalizer_against_quadrature():
    mp = mech(M=1)
    center = np.array([0.5])
    shared = dense_shared(mp)
    got = audit_log_normalizer(center, mp, shared)
    ts = np.linspace(-mp.rho, mp.rho, 400_001)
    dens = np.exp(-np.minimum(mp.a * np.abs(ts - 0.5), mp.cap))
    want = math.log(np.trapezoid(dens, ts) / (2.0 * mp.rho))
    assert got == pytest.approx(want, abs=1e-5)


def test_audit_result_threshold_and_dict():
    ok = AuditResult(0.3, 0.5, -0.2, 1, 10)
    assert ok.passed
    assert not AuditResult(0.502, 0.5, 0.002, 1, 10).passed
    d = ok.to_dict()
    assert d["pass"] and d["dH"] == 1 and d["max_slack"] == -0.2


# ---- accuracy calibration ------------------------------------------------------------


def test_failure_bound_decreases_and_crosses_beta():
    params = clean_params()
    W = recommend_W(8, 2, 0.1)
    query = quantile_query_spec(8)
    ns = [50_000, 200_000, 490_943, 1_000_000]
    vals = [failure_probability_bound(n, 0.1, 1.0, query, params, W)
            for n in ns]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert failure_probability_bound(490_943, 0.1, 1.0, query, params,
                                     W) <= 0.1
    assert failure_probability_bound(490_942, 0.1, 1.0, query, params,
                                     W) > 0.1


def test_sample_size_for_the_reference_quantile_query():
    # frozen from the tail-bound bisection: the smallest n whose explicit
    # failure bound reaches beta = 0.1 for the 8-direction quantile query
    n = sample_size(0.1, 0.1, 1.0, quantile_query_spec(8), clean_params(),
                    A_size=8, constants=SampleSizeConstants())
    assert n == 490_943


def test_sample_size_rejects_alpha_at_the_boundary():
    # boundary: min(1, K) * r_eff / 2 = 0.15
    with pytest.raises(AlphaTooLargeError):
        sample_size(0.15, 0.1, 1.0, quantile_query_spec(8), clean_params(),
                    A_size=8)
    with pytest.raises(ValueError):
        sample_size(0.1, 0.0, 1.0, quantile_query_spec(8), clean_params())
    with pytest.raises(ValueError):
        sample_size(0.1, 0.1, 0.0, quantile_query_spec(8), clean_params())


def test_sample_size_quadratic_in_K_through_the_first_term():
    consts = SampleSizeConstants(c1=1e6)
    base = HolderQuerySpec(h=1.0, K=1.0, M=8, p=math.inf)
    doubled = HolderQuerySpec(h=1.0, K=2.0, M=8, p=math.inf)
    n1 = sample_size(0.1, 0.1, 1.0, base, clean_params(), A_size=8,
                     constants=consts)
    n2 = sample_size(0.1, 0.1, 1.0, doubled, clean_params(), A_size=8,
                     constants=consts)
    assert n2 / n1 == pytest.approx(4.0, rel=1e-3)


def test_sample_size_linear_in_K_through_the_second_term():
    consts = SampleSizeConstants(c2=1e6)
    base = HolderQuerySpec(h=1.0, K=1.0, M=8, p=math.inf)
    doubled = HolderQuerySpec(h=1.0, K=2.0, M=8, p=math.inf)
    n1 = sample_size(0.1, 0.1, 1.0, base, clean_params(), A_size=8,
                     constants=consts)
    n2 = sample_size(0.1, 0.1, 1.0, doubled, clean_params(), A_size=8,
                     constants=consts)
    assert n2 / n1 == pytest.approx(2.0, rel=1e-3)


def test_sample_size_steiner_dimension_scaling():
    # with the epsilon-term dominant, the Steiner query (M = d and
    # K ~ sqrt(d)) gives n ~ W(d) * d^1.5, the d^2.5-type growth
    consts = SampleSizeConstants(c2=1e9)
    sizes = {}
    for d in (16, 64):
        params = clean_params(d)
        sizes[d] = sample_size(0.1, 0.1, 1.0, steiner_query_spec(d, params),
                               params, A_size=10 ** 44, constants=consts)
    expected = ((64.0 + math.log(10.0)) * 64.0 ** 1.5
                / ((16.0 + math.log(10.0)) * 16.0 ** 1.5))
    assert sizes[64] / sizes[16] == pytest.approx(expected, rel=0.02)


def test_sample_size_exceeds_the_count_regime_floor():
    n = sample_size(0.1, 0.1, 1.0, quantile_query_spec(8), clean_params(),
                    A_size=8)
    W = recommend_W(8, 2, 0.1)
    assert n > 2.0 * W / clean_params().L
