"""Joint modeling of ordinal time series with pair-copula constructions.

Cumulative-logit autoregressions describe each series on its own; pairwise
copulas couple them.  Estimation is two-stage composite likelihood: fit
every bivariate sub-model, then synthesize the shared marginal parameters
by curvature-weighted averaging, with sandwich standard errors.  The
package also simulates such systems, forecasts them by Monte Carlo, and
benchmarks the pairwise estimators against the full trivariate Gaussian
likelihood.
"""

__version__ = "0.1.0"

from .combine import (
    ParamLayout,
    SandwichCov,
    SystemFit,
    augment,
    combine_fits,
    fit_system,
    initial_pair_model,
    sandwich_cov,
    simple_mean,
    wald_test,
    weighted_mean,
    weighting_matrix,
)
from .copula import (
    CopulaFamily,
    CopulaSpec,
    bivariate_cdf,
    bvn_cdf,
    copula_cdf,
    copula_sample,
)
from .data import (
    Panel,
    discretize_quantile,
    infer_state_spaces,
    kendall_matrix,
    load_panel,
    save_panel,
    to_state_indices,
)
from .exceptions import (
    DataError,
    DomainError,
    FitError,
    OrdcopError,
    UnsupportedError,
)
from .forecast import (
    ForecastConfig,
    ForecastResult,
    forecast_paths,
    pair_marginal_probs,
    summarize,
)
from .marginal import (
    Coding,
    MarginalParams,
    MarginalSpec,
    StateSpace,
    build_regressors,
    cond_cdf,
    cond_probs,
    inv_cdf,
)
from .pairlik import (
    OptimizerConfig,
    PairFit,
    PairModel,
    fit_pair,
    numeric_gradient,
    numeric_hessian,
    pair_negloglik,
    pair_pmf,
    pair_pmf_matrix,
    per_time_scores,
)
from .reference import (
    EfficiencyReport,
    JointFit,
    TrivariateGaussianSpec,
    efficiency_report,
    fit_full,
    fit_joint_pairwise,
    full_negloglik,
    trivariate_gaussian_cdf,
    trivariate_pmf,
)
from .simulate import (
    ReplicationStudy,
    ScenarioConfig,
    run_replication_study,
    scenario_from_dict,
    scenario_to_dict,
    simulate_system,
    trivariate_gaussian_scenario,
    trivariate_gumbel_scenario,
)

__all__ = [name for name in dir() if not name.startswith("_")]
