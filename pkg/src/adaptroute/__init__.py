"""Training-free LoRA adapter routing.

Adapters are organised into a catalog of representative tasks, each task is
paired with its best adapter under an evaluation budget, queries are routed
to their top-K most similar tasks, and the paired adapters are fused in
output space with the retrieval probabilities as weights.
"""

__version__ = "0.1.0"

from .catalog import Catalog, Regime, TaskRecord, ValidationItem, load_catalog, remove_for_regime, save_catalog
from .encoders import INSTRUCTION, EncoderSpec, HashingEncoder, PrecomputedEncoder
from .fusion import RoutingDecision, compose_lorahub, compose_output_space, compose_param_interp, route
from .linalg import LayerDelta, LoraAdapter, ToyBackend, forward, lora_delta, matvec
from .metrics import MetricKind, score
from .pairing import ShConfig, build_pairing, exhaustive_pairing, successive_halving, uniform_selection
from .retrieval import build_task_representation, cosine, retrieve

__all__ = [
    "Catalog",
    "EncoderSpec",
    "HashingEncoder",
    "INSTRUCTION",
    "LayerDelta",
    "LoraAdapter",
    "MetricKind",
    "PrecomputedEncoder",
    "Regime",
    "RoutingDecision",
    "ShConfig",
    "TaskRecord",
    "ToyBackend",
    "ValidationItem",
    "build_pairing",
    "build_task_representation",
    "compose_lorahub",
    "compose_output_space",
    "compose_param_interp",
    "cosine",
    "exhaustive_pairing",
    "forward",
    "load_catalog",
    "lora_delta",
    "matvec",
    "remove_for_regime",
    "retrieve",
    "route",
    "save_catalog",
    "score",
    "successive_halving",
    "uniform_selection",
]
