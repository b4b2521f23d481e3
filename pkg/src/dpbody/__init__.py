"""Differentially private estimation on convex floating bodies.

The package estimates high-dimensional directional quantiles, selects
interior points (Steiner point), projects onto and samples approximately
uniformly from the floating body of a dataset, all under pure differential
privacy, together with the calibration, typicality gating, numerical
privacy auditing and brute-force verification machinery around those
estimators.
"""

from .admissible import (AdmissibilityReport, AdmissibleParams,
                         DistributionSpec, admissibility_check, density_floor,
                         logconcave_params, marginal_cdf, marginal_density,
                         marginal_quantile, sample_dist)
from .errors import (AlphaTooLargeError, ConfigError, DimensionMismatchError,
                     DPBodyError, EmptyBodyError, EmptyHError, EmptyNetError,
                     EmptySampleError, InfeasibleError,
                     InsufficientRowsError, InvalidIntervalError,
                     InvalidProbeError, KTooSmallError, OracleFailureError,
                     QOutOfRangeError, RejectionStallError, SizeMismatchError,
                     TooLargeError, TypicalityGateError, UnboundedError)
from .extension import (EnumerableInstance, ExtensionAuditReport,
                        builtin_instances, extension_audit, extension_density,
                        make_instance, restricted_density,
                        tv_extended_vs_restricted)
from .geometry import (InscribedBall, Polytope, ProjectionResult,
                       chebyshev_ball, hausdorff_net, project, project_many,
                       steiner_point, support_function, uniform_directions)
from .mechanism import (AuditResult, HolderQuerySpec, MechanismParams,
                        SampleSizeConstants, failure_probability_bound,
                        flat_laplace_logdensity, flat_laplace_sample, g_poly,
                        privacy_ratio_audit, projection_query_spec,
                        quantile_query_spec, region_uniform, sample_size,
                        segment_gamma_integral, steiner_query_spec)
from .metrics import wasserstein2_empirical, wasserstein_empirical
from .pipeline import (FloatingBodySampleResult, LangevinConfig,
                       NoisyOracleParams, PrivacyLedger, coupled_langevin_gap,
                       coupling_gap_bound, langevin_uniform,
                       make_budget_oracles, noisy_langevin,
                       noisy_oracle_params, private_project,
                       private_quantiles, private_sample_floating_body,
                       private_steiner, truncated_gaussians)
from .quantiles import (DirectionNet, FloatingBodyApprox, Sample, axis_net,
                        delta_q, empirical_quantile, floating_body,
                        hamming_distance, quantile_along, quantile_index,
                        query_quantiles, sphere_net)
from .typical import (TypicalSetConfig, TypicalSetReport, check_typical,
                      recommend_W, sensitivity_bound)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
