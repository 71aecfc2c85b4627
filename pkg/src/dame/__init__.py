"""Duration-aware matryoshka speaker embeddings.

Nested prefix embeddings trained with duration-aligned large-margin losses,
plus a synthetic duration-aware benchmark and an EER evaluation harness.
"""

from .encoder import EncoderParams, Utterance, encode, encoder_gradients, prefix
from .errors import DameError
from .evaluation import EvalReport, ScoreSet, compute_eer, cosine_score, evaluate
from .margin_head import HeadBank, MarginConfig, make_gt_heads, margin_loss, tie_heads
from .numerics import GradCheckReport, RngStream, grad_check, l2_normalize, seeded_rng
from .objective import (
    AlignmentWeights,
    alignment_weights,
    band_boundaries,
    dame_loss,
    multi_prefix_loss,
)
from .schedules import ScheduleConfig, alpha_at, lr_at, margin_at
from .specs import DurationSet, PrefixSpec
from .synthdata import (
    Dataset,
    GeneratorConfig,
    InstanceBatch,
    SpeakerProfile,
    TrialList,
    build_trials,
    generate_dataset,
    make_population,
    sample_instance_batch,
    sample_utterance,
)
from .trainer import (
    PRESETS,
    RunConfig,
    TrainLog,
    load_checkpoint,
    resolve_preset,
    save_checkpoint,
    sgd_step,
    train_ft,
    train_gt,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentWeights",
    "Dataset",
    "DameError",
    "DurationSet",
    "EncoderParams",
    "EvalReport",
    "GeneratorConfig",
    "GradCheckReport",
    "HeadBank",
    "InstanceBatch",
    "MarginConfig",
    "PRESETS",
    "PrefixSpec",
    "RngStream",
    "RunConfig",
    "ScheduleConfig",
    "ScoreSet",
    "SpeakerProfile",
    "TrainLog",
    "TrialList",
    "alignment_weights",
    "alpha_at",
    "band_boundaries",
    "build_trials",
    "compute_eer",
    "cosine_score",
    "dame_loss",
    "encode",
    "encoder_gradients",
    "evaluate",
    "generate_dataset",
    "grad_check",
    "l2_normalize",
    "load_checkpoint",
    "lr_at",
    "make_gt_heads",
    "make_population",
    "margin_at",
    "margin_loss",
    "multi_prefix_loss",
    "prefix",
    "resolve_preset",
    "sample_instance_batch",
    "sample_utterance",
    "save_checkpoint",
    "seeded_rng",
    "sgd_step",
    "tie_heads",
    "train_ft",
    "train_gt",
]
