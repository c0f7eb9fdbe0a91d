"""Network-contagion Value-at-Risk toolkit.

Pipeline: empirical-copula marginal transforms, PC-stable discovery of the
contemporaneous contagion network, least-squares SEM estimation with
AIC lag selection, analytic and copula VaR forecasting next to four
standard benchmarks, a seven-statistic backtesting battery, and a
simulation harness for synthetic contagion studies.
"""

__version__ = "0.1.0"

from .backtest import (
    BacktestConfig,
    BacktestReport,
    HitSeries,
    backtest_report,
    christoffersen_cc,
    deviation_and_ql,
    dq_test,
    hit_series,
    kupiec_uc,
    rolling_backtest,
)
from .discovery import (
    CausalGraph,
    CITestConfig,
    discover_graph,
    enumerate_parent_sets,
    fisher_z_ci_test,
    orient_cpdag,
    pc_stable_skeleton,
)
from .engines import (
    GarchFit,
    VaRForecast,
    fhs_var,
    fit_garch11,
    garch_var,
    hist_var,
    neco_var_gaussian,
    neco_var_general,
    varcovar_var,
)
from .errors import (
    CalibrationError,
    DegenerateSeries,
    DomainError,
    DuplicateLabel,
    FitError,
    InsufficientData,
    InvalidInit,
    InvalidSample,
    NecoVarError,
    NumericalError,
    PanelFormatError,
    WindowError,
)
from .marginals import (
    EmpiricalMarginal,
    LatentPanel,
    fit_marginal,
    marginal_cdf,
    marginal_quantile,
    standard_normal_cdf,
    standard_normal_quantile,
    to_latent,
)
from .panel import ReturnPanel, WindowPlan, make_windows, parse_panel_csv, summarize
from .sem import (
    ModelEnsemble,
    SemModel,
    conditional_distribution,
    fit_sem,
    necof,
    select_lags,
)
from .simulate import (
    SimConfig,
    baseline_network,
    calibrate_contagion,
    random_dag,
    run_study,
    simulate_sem,
    timing_study,
)
