"""Black-box LLM personalization with a shared base and per-user heads.

Retrieve-then-rerank selects useful user history for the prompt; an adapter
picks the best of several sampled generations. Both scorers share one base
across users and keep a small head per user.
"""

from .datamodel import Dataset, HistoryItem, TaskSpec, UserRecord, load_dataset, make_synthetic_task, split_users
from .factorized import FactorizedModel, TextEncoderConfig, TrainConfig
from .metrics import MetricReport

__version__ = "0.1.0"

__all__ = [
    "Dataset", "HistoryItem", "TaskSpec", "UserRecord", "load_dataset", "make_synthetic_task",
    "split_users", "FactorizedModel", "TextEncoderConfig", "TrainConfig", "MetricReport",
]
