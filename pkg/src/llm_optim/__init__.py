"""Optimizing agent behaviour through text feedback: environments, optimizer loop, backends and sweeps."""

from .core import ChatMessage, Feedback, FeedbackKind, HistoryBuffer, InteractionRecord, Trace
from .env_numeric import FUNCTIONS, get_function
from .env_poem import PoemConstraint, score_poem
from .harness import ExperimentConfig, cumulative_regret, run_experiment, simple_regret
from .optimizer import NumericTask, OptimizerConfig, PoemTask, run_spo

__version__ = "0.1.0"

__all__ = [
    "ChatMessage",
    "Feedback",
    "FeedbackKind",
    "HistoryBuffer",
    "InteractionRecord",
    "Trace",
    "FUNCTIONS",
    "get_function",
    "PoemConstraint",
    "score_poem",
    "ExperimentConfig",
    "cumulative_regret",
    "run_experiment",
    "simple_regret",
    "NumericTask",
    "OptimizerConfig",
    "PoemTask",
    "run_spo",
]
