"""Discrete distribution modeling of tick-by-tick stock price changes.

Tick prices are held as exact integer multiples of the 0.01 minimum price
increment, price changes are bucketed into five classes, and per-transaction
class distributions are predicted with temporal convolutional networks
(plain and attention-pooled), an LSTM baseline, and GARCH-family maximum
likelihood baselines, all scored through a shared confusion-matrix harness.
"""

from tickdist.data import (
    CoarseLabel,
    StockDataset,
    TickSeries,
    WindowSample,
    WindowSet,
    build_windows,
    compute_log_returns,
    compute_price_changes,
    label_five_class,
    make_stock_dataset,
    map_to_three_class,
    parse_tick_file,
    split_train_test,
)
from tickdist.engine import ParameterSet, Tape, Tensor, adam_step
from tickdist.evaluate import (
    ConfusionMatrix,
    MetricsReport,
    best_precision_counts,
    classify,
    coarsen_predictions,
    confusion,
    macro_average,
    metrics,
)
from tickdist.garch import GarchFit, GarchParams, GarchSpec, fit_mle
from tickdist.models import ModelConfig, ModelKind, TrainConfig, TrainedModel, build, predict_test, train
from tickdist.synth import GarchSeriesSpec, MarkovSpec, RuleSpec, generate_synthetic_ticks

__version__ = "0.1.0"

__all__ = [
    "CoarseLabel",
    "ConfusionMatrix",
    "GarchFit",
    "GarchParams",
    "GarchSeriesSpec",
    "GarchSpec",
    "MarkovSpec",
    "MetricsReport",
    "ModelConfig",
    "ModelKind",
    "ParameterSet",
    "RuleSpec",
    "StockDataset",
    "Tape",
    "Tensor",
    "TickSeries",
    "TrainConfig",
    "TrainedModel",
    "WindowSample",
    "WindowSet",
    "adam_step",
    "best_precision_counts",
    "build",
    "build_windows",
    "classify",
    "coarsen_predictions",
    "compute_log_returns",
    "compute_price_changes",
    "confusion",
    "fit_mle",
    "generate_synthetic_ticks",
    "label_five_class",
    "macro_average",
    "make_stock_dataset",
    "map_to_three_class",
    "metrics",
    "parse_tick_file",
    "predict_test",
    "split_train_test",
    "train",
]
