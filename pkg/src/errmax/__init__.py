"""Active learning for neural-network regression surrogates: train against a
pluggable oracle, mine local maximizers of the squared error by gradient
ascent, and retrain on the enriched set with a weighted objective.
"""

from .config import RunConfig, load_config
from .data import LabeledSet, Normalizer, label, load_csv, merge, sample_uniform, save_csv
from .loop import (
    RoundConfig,
    RoundReport,
    evaluate,
    retrain,
    run_loop,
    trimmed_metrics,
    weighted_loss,
)
from .mining import AscentConfig, AscentResult, ascend, dedup, mine, select_seeds
from .mlp import MlpModel, TrainConfig, init_mlp, train
from .oracles import (
    BarrierInputs,
    FdConfig,
    OracleSpec,
    barrier_price,
    fd_gradient,
    make_barrier_oracle,
    make_synthetic_oracle,
    mc_reference_price,
    vanilla_call_price,
)

__version__ = "0.1.0"

__all__ = [
    "AscentConfig",
    "AscentResult",
    "BarrierInputs",
    "FdConfig",
    "LabeledSet",
    "MlpModel",
    "Normalizer",
    "OracleSpec",
    "RoundConfig",
    "RoundReport",
    "RunConfig",
    "TrainConfig",
    "ascend",
    "barrier_price",
    "dedup",
    "evaluate",
    "fd_gradient",
    "init_mlp",
    "label",
    "load_config",
    "load_csv",
    "make_barrier_oracle",
    "make_synthetic_oracle",
    "mc_reference_price",
    "merge",
    "mine",
    "retrain",
    "run_loop",
    "sample_uniform",
    "save_csv",
    "select_seeds",
    "train",
    "trimmed_metrics",
    "vanilla_call_price",
    "weighted_loss",
]
