"""Adaptive-width binning features for seismocardiogram event classification."""

from .binning import (BinPartition, FeatureVector, adaptive_partition, alpha_for_bin_count,
                      check_bin_variability, equal_partition, extract_features,
                      fit_partition_on_ensemble)
from .classifier import (ConfusionCounts, Metrics, RbfSvmModel, compute_metrics, cross_validate,
                         grid_search, kfold_split, predict, train_svm)
from .errors import ConvergenceError, ParameterError
from .events import EventWindow, LabeledEvent, label_by_lung_volume, matched_filter_detect, segment
from .signal_core import (SampledSignal, ensemble_average, integrate_flow, lowpass_filter,
                          population_std)

__version__ = "0.1.0"
