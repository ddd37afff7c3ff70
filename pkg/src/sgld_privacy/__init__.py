"""Membership-privacy leakage of SGD/SGLD-trained classifiers."""

from .errors import (ConfigError, EncodingError, InputError, NumericError, ParseError,
                     ScheduleError, SgldPrivacyError, ShapeError, StateError)
from .net_core import (LossBound, MlpArchitecture, ModelParams, Sample, backward, forward,
                       init_params, nll_loss)
from .optimizers import GaussianPrior, OptimizerState, StepSchedule, validate_schedule
from .posterior import (EnsemblePredictor, PosteriorSampleSet, collect, ensemble_predict,
                        mc_estimate_tp, posterior_mean_loss)
from .experiment import ExperimentConfig, MetricsRecord, run_experiment, compare_strategies

__version__ = "0.1.0"
