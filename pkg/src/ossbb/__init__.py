"""Monte Carlo pricing of continuously monitored up-and-out calls.

Brownian bridge and one-step survival estimators, pathwise and
finite-difference Greeks, multilevel Monte Carlo and a closed-form GBM oracle.
"""
__version__ = "0.1.0"

from .analytic import BsParams, bs_barrier_greeks, bs_call, bs_put, bs_up_and_out_call, reference_price
from .estimators import (
    EstimatorReport,
    SimConfig,
    price_bb,
    price_discrete_baseline,
    price_european,
    price_oss_bb,
)
from .greeks import GreekRequest, bb_pathwise_greeks, fd_greek, oss_pathwise_greeks, stability_scan
from .mlmc import LevelStats, MaxLevelExceeded, MlmcConfig, level_estimator, mlmc_price
from .model import CEV, GBM, OptionSpec, gbm_model, payoff_q, reference_case
from .convergence import InsufficientPrecision, weak_order
