"""Sign-consensus checkpoint merging, quadruple extraction scoring and a toy trainer."""

from .checkpoint import Checkpoint, Tensor, load_checkpoint, save_checkpoint, validate_compatible
from .consensus import ConsensusSigns, elect_sign
from .merging import MergeConfig, merge_models, merge_task_vectors
from .metrics import Quadruple, SampleExtraction, ScoreReport, parse_quadruples, score
from .pruning import PruneConfig, PrunedTaskVector, layer_mask, prune_task_vector
from .task_vector import TaskVector, apply_task_vector, build_task_vector

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "Tensor",
    "load_checkpoint",
    "save_checkpoint",
    "validate_compatible",
    "TaskVector",
    "build_task_vector",
    "apply_task_vector",
    "PruneConfig",
    "PrunedTaskVector",
    "layer_mask",
    "prune_task_vector",
    "ConsensusSigns",
    "elect_sign",
    "MergeConfig",
    "merge_task_vectors",
    "merge_models",
    "Quadruple",
    "SampleExtraction",
    "ScoreReport",
    "parse_quadruples",
    "score",
]
