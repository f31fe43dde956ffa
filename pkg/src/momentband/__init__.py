"""momentband: simultaneous confidence bands for local structural parameters.

Estimates theta0(x) solving conditional moment equations with subsampled
kernels (honest forests, subsampled k-NN) and builds simultaneous bands over
a query grid via the half-sample bootstrap. Ships a U-statistic verification
lab and a coverage-simulation harness.
"""

from .bootstrap import (BootstrapRoots, ConfidenceBand, FitState,
                        binomial_root, build_band, compute_roots,
                        critical_value, crossfit_root, half_sample_root,
                        studentize)
from .data import (Dataset, Observation, QueryVector, Schema, load_dataset,
                   make_query_grid, save_dataset)
from .estimator import LocalEstimateSet, estimate_all, solve_local, solve_queries
from .kernels import (ForestConfig, ForestKernel, HonestPartition,
                      KernelWeights, KnnKernel, SubsamplePlan,
                      build_knn_kernel, draw_subsamples, fit_forest,
                      forest_from_json, forest_to_json, forest_weights,
                      grow_honest_tree, local_weights, shrinkage_diagnostic,
                      validate_tuning)
from .moments import (CausalLaw, MomentSpec, NuisancePerturbation,
                      NuisanceValues, evaluate_terms, moment_residual,
                      orthogonality_check)
from .nuisance import FittingScheme, NuisanceFit, fit_nuisance, predict
from .pipeline import PipelineConfig, PipelineFit, band_from_fit, fit_pipeline
from .sim import CoverageReport, DgpSpec, Regime, generate, run_coverage
from .ustat import (DiscreteLaw, SymmetricKernel, complete_ustat,
                    hajek_projection, hajek_residual, hoeffding_components,
                    incomplete_ustat, make_kernel, permutation_block_average,
                    residual_scaling_experiment)

__version__ = "0.1.0"
