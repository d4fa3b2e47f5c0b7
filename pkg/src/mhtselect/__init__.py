"""Variable selection for sparse linear models by sequential multiple testing.

The package covers: calibrated sup-type tests on ordered variables, two-step
procedures (order, then test) for unordered families in low and high
dimension, Monte-Carlo threshold calibration, FDR / lasso / bolasso baselines,
power-condition evaluators, and a reproducible simulation harness.
"""

from .design import (DesignMatrix, Model, OrthoState, design_from_cache,
                     design_from_csv, design_to_cache, design_to_csv,
                     gs_extend, gs_from_columns, make_model, model_support,
                     ninner, nnorm_sq, normalize_columns, project_coeffs,
                     project_sq_norm, rank_indices)
from .dists import (FisherParams, chisq_tail_bound, fisher_quantile,
                    fisher_quantile_upper_bound, fisher_sf, sample_zdD)
from .calibrate import (CalibrationTable, TGrid, calibrate_ortho_ratio,
                        calibrate_p1, calibrate_p2, calibrate_p3, calibrate_p4,
                        calibrate_p5, empirical_quantile, sigma1_permutation,
                        t_grid, tables_from_csv, tables_to_csv)
from .select_ordered import OrderedResult, run_ordered, t_statistic
from .lasso import (LassoFit, bolasso_frequencies, cv_lambda,
                    default_lambda_grid, fit_lasso, kkt_violation, lambda_max)
from .ordering import VariableOrder, order_by_bolasso, order_by_pvalues
from .select_twostep import (TwoStepResult, run_proc_a, run_proc_a_ortho,
                             run_proc_b, run_proc_b_ortho)
from .baselines import (BaselineResult, bh_rejections, ols_refit, select_fdr,
                        select_bolasso_cv, select_lasso_cv)
from .theory import (BoundInputs, BoundReport, check_r2, check_r2bis, check_r3,
                     check_r3bis, check_rk, constants_c123, simplified_r3_bound)
from .harness import (SimConfig, SimMetrics, compute_metrics, generate_dataset,
                      main, parse_config, run_scenario)
from . import errors

__version__ = "0.1.0"
