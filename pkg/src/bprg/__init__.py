"""Bidirectional pruning-regrowth for small neural networks."""

from .data import Dataset, RngState, load_idx, minibatches, rng_next, save_idx, synth_blobs
from .errors import (
    BprgError,
    ConfigError,
    DimensionError,
    FormatError,
    InputError,
    NumericError,
    UsageError,
)
from .model import LayerSpec, Model, ParamId, build_model, forward, prunable_slots
from .sparsity import (
    CRITERIA,
    MaskSet,
    PruneSchedule,
    RegrowSchedule,
    apply_masks,
    dense_saliency,
    global_magnitude_mask,
    keep_count,
    masked_step,
    regrow_apply,
    regrow_candidates,
    schedule_sparsity_at,
)
from .tensor import (
    OptimizerState,
    Tape,
    Tensor,
    backward,
    conv2d,
    finite_difference_gradient,
    matmul,
    relu,
    sgd_momentum_step,
    softmax_cross_entropy_mean,
)
from .trajectory import (
    ExperimentConfig,
    TrajectoryRecord,
    evaluate_accuracy,
    run_bidirectional,
    run_prune_phase,
    run_regrow_phase,
    train_epochs,
)

__version__ = "0.1.0"
