"""Training loops for every regime and baseline.

General training (GT) initializes the encoder and independent per-prefix
heads from the run seed and optimizes with plain SGD under the alpha,
margin-warm-up, and constant-LR schedules. Fine-tuning (FT) loads a
pretrained encoder plus full-dimension head, ties the prefix heads to the
leading rows of that head, and optimizes with fixed alpha and margins under
geometric LR decay; gradients from all prefixes accumulate into the shared
matrix before each update.

The baseline modes are degenerate configurations of the same loop:
fixed-duration baseline (one duration, one full head), VLT (two durations,
one full head), plain MRL (uniform alignment weights, one shared margin),
LMFT (one long duration, large fixed margin), and D-ALMFT (per-duration
margins on a single collapsed full-dimension head).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import margin_head as mh
from .encoder import (
    EncoderParams,
    encode,
    encoder_from_bytes,
    encoder_gradients,
    encoder_to_bytes,
    init_encoder_params,
)
from .errors import (
    CheckpointError,
    ConfigError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from .margin_head import (
    HeadBank,
    MarginConfig,
    headbank_from_bytes,
    headbank_to_bytes,
    make_gt_heads,
    margin_loss,
    tie_heads,
)
from .numerics import RngStream, substream
from .objective import (
    SCHEME_D_ALMFT,
    SCHEME_HW,
    SCHEME_PLAIN_MRL,
    SCHEME_SW,
    AlignmentWeights,
    alignment_weights,
    dame_loss,
    dame_loss_coefficient,
    multi_prefix_loss,
)
from .schedules import (
    REGIME_FT,
    REGIME_GT,
    ScheduleConfig,
    alpha_at,
    lr_at,
    margin_at,
)
from .specs import DurationSet, PrefixSpec
from .synthdata import Dataset, InstanceBatch, sample_instance_batch

CHECKPOINT_MAGIC = b"DAMECKP1"

SCHEME_BASELINE = "baseline"
SCHEME_VLT = "VLT"
SCHEME_LMFT = "LMFT"

GT_SCHEMES = (SCHEME_BASELINE, SCHEME_VLT, SCHEME_PLAIN_MRL, SCHEME_SW, SCHEME_HW)
FT_SCHEMES = (SCHEME_SW, SCHEME_HW, SCHEME_LMFT, SCHEME_D_ALMFT)

# Table-style presets: nesting dimension set, duration set (seconds), and
# final per-prefix margins for each encoder family and weighting scheme.
PRESETS: dict[str, dict] = {
    "resnet34-sw": dict(scheme=SCHEME_SW, dims=(32, 64, 128, 256),
                        durations=(1.0, 2.0), margins=(0.0, 0.1, 0.2, 0.2)),
    "ecapa-sw": dict(scheme=SCHEME_SW, dims=(24, 48, 96, 192),
                     durations=(1.0, 2.0), margins=(0.0, 0.0, 0.1, 0.2)),
    "eres2netv2-sw": dict(scheme=SCHEME_SW, dims=(24, 48, 96, 192),
                          durations=(1.0, 2.0), margins=(0.0, 0.0, 0.1, 0.2)),
    "resnet34-hw": dict(scheme=SCHEME_HW, dims=(64, 128, 256),
                        durations=(1.0, 2.0, 6.0), margins=(0.0, 0.2, 0.5)),
    "ecapa-hw": dict(scheme=SCHEME_HW, dims=(48, 96, 192),
                     durations=(1.0, 2.0, 6.0), margins=(0.0, 0.2, 0.5)),
    "eres2netv2-hw": dict(scheme=SCHEME_HW, dims=(48, 96, 192),
                          durations=(1.0, 2.0, 3.0), margins=(0.0, 0.2, 0.4)),
}


@dataclass(frozen=True)
class RunConfig:
    regime: str
    scheme: str
    prefix_spec: PrefixSpec
    duration_set: DurationSet
    final_margins: tuple[float, ...]  # per prefix; per duration for D-ALMFT
    scale: float = 30.0
    hidden_dim: int = 64
    speakers_per_batch: int = 32
    epochs: int = 60
    lr: float = 0.01
    lr_end: float | None = None  # FT only; defaults to lr/10
    alpha_start: float = 1.0
    alpha_end: float = 0.5
    alpha_end_epoch: int = 50
    margin_warm_start_epoch: int = 30
    margin_warm_end_epoch: int = 40
    margin_ramp_base: float = 1000.0
    ft_alpha: float = 0.5
    seed: int = 0
    pretrained_checkpoint: str | None = None
    head_frozen: bool = False

    def __post_init__(self):
        j, k = len(self.duration_set), len(self.prefix_spec)
        if self.regime == REGIME_GT:
            if self.scheme not in GT_SCHEMES:
                raise ConfigError(f"scheme {self.scheme!r} not valid for GT")
        elif self.regime == REGIME_FT:
            if self.scheme not in FT_SCHEMES:
                raise ConfigError(f"scheme {self.scheme!r} not valid for FT")
            if not self.pretrained_checkpoint:
                raise ConfigError("FT regime requires a pretrained checkpoint")
        else:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.scheme == SCHEME_HW and j != k:
            raise ConfigError(f"HW requires J=K, got J={j}, K={k}")
        if self.scheme == SCHEME_SW and not j < k:
            raise ConfigError(f"SW requires J<K, got J={j}, K={k}")
        if self.scheme in (SCHEME_BASELINE, SCHEME_LMFT) and (j != 1 or k != 1):
            raise ConfigError(f"{self.scheme} uses one duration and one head")
        if self.scheme == SCHEME_VLT and (k != 1 or j < 2):
            raise ConfigError("VLT uses one full-dimension head and J>=2 durations")
        if self.scheme == SCHEME_D_ALMFT:
            if k != 1 or j < 2:
                raise ConfigError("D-ALMFT uses one collapsed head and J>=2 durations")
            if len(self.final_margins) != j:
                raise ConfigError("D-ALMFT needs one margin per duration")
        elif len(self.final_margins) != k:
            raise ConfigError(
                f"need one margin per prefix: {k} prefixes, {len(self.final_margins)} margins"
            )
        if self.speakers_per_batch < 1 or self.epochs < 1:
            raise ConfigError("speakers_per_batch and epochs must be positive")

    @property
    def embed_dim(self) -> int:
        return self.prefix_spec.full_dim

    def schedule(self) -> ScheduleConfig:
        j = len(self.duration_set)
        if self.scheme == SCHEME_D_ALMFT:
            margins = {self.prefix_spec.full_dim: max(self.final_margins)}
        else:
            margins = dict(zip(self.prefix_spec.dims, self.final_margins))
        # single-duration schemes have no non-longest term; alpha is pinned to 1
        alpha_start = 1.0 if j == 1 else self.alpha_start
        alpha_end = 1.0 if j == 1 else self.alpha_end
        lr_end = self.lr_end if self.lr_end is not None else self.lr / 10.0
        return ScheduleConfig(
            regime=self.regime,
            total_epochs=self.epochs,
            final_margins=margins,
            alpha_start=alpha_start,
            alpha_end=alpha_end,
            alpha_end_epoch=self.alpha_end_epoch,
            margin_warm_start_epoch=self.margin_warm_start_epoch,
            margin_warm_end_epoch=self.margin_warm_end_epoch,
            margin_ramp_base=self.margin_ramp_base,
            lr_start=self.lr,
            lr_end=lr_end,
            ft_alpha=1.0 if j == 1 else self.ft_alpha,
        )

    def weights(self) -> AlignmentWeights:
        j, k = len(self.duration_set), len(self.prefix_spec)
        if self.scheme == SCHEME_HW:
            return alignment_weights(SCHEME_HW, j, k)
        if self.scheme == SCHEME_SW:
            return alignment_weights(SCHEME_SW, j, k)
        if self.scheme == SCHEME_D_ALMFT:
            return alignment_weights(SCHEME_D_ALMFT, j, 1)
        if self.scheme in (SCHEME_BASELINE, SCHEME_LMFT):
            return alignment_weights(SCHEME_HW, 1, 1)
        # VLT and plain MRL: uniform supervision
        return alignment_weights(SCHEME_PLAIN_MRL, j, k)

    def margin_slots(self) -> tuple[str, ...]:
        """Column names for the per-epoch margin values in the train log."""
        if self.scheme == SCHEME_D_ALMFT:
            return tuple(f"t{s:g}" for s in self.duration_set)
        return tuple(f"d{d}" for d in self.prefix_spec)


def resolve_preset(name: str, regime: str, **overrides) -> RunConfig:
    """Build a RunConfig from a named preset row; overrides win."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    row = PRESETS[name]
    base = dict(
        regime=regime,
        scheme=row["scheme"],
        prefix_spec=PrefixSpec(row["dims"]),
        duration_set=DurationSet(row["durations"]),
        final_margins=row["margins"],
    )
    if regime == REGIME_FT:
        base.update(epochs=30, lr=1e-4, lr_end=1e-5)
    base.update(overrides)
    return RunConfig(**base)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    alpha: float
    lr: float
    margins: tuple[float, ...]
    loss: float


@dataclass
class TrainLog:
    margin_slots: tuple[str, ...]
    records: list[EpochRecord] = field(default_factory=list)
    checkpoint_path: str | None = None

    def to_csv(self) -> str:
        header = ["epoch", "alpha", "lr"]
        header += [f"margin_{name}" for name in self.margin_slots]
        header.append("loss")
        lines = [",".join(header)]
        for r in self.records:
            cells = [str(r.epoch), repr(r.alpha), repr(r.lr)]
            cells += [repr(m) for m in r.margins]
            cells.append(repr(r.loss))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


@dataclass
class BatchGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    heads: list[np.ndarray] | np.ndarray  # per-prefix list (separate) or (D, C)


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """Elementwise p - lr*g."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeMismatchError(
            f"params shape {params.shape} != grads shape {grads.shape}"
        )
    return params - lr * grads


def _margin_matrix(cfg: RunConfig, sched: ScheduleConfig, epoch: int) -> list[list[float]]:
    """Margin used by the (duration j, prefix k) loss at one epoch."""
    j_count = len(cfg.duration_set)
    if cfg.scheme == SCHEME_D_ALMFT:
        return [[cfg.final_margins[j]] for j in range(j_count)]
    per_prefix = [margin_at(epoch, d, sched) for d in cfg.prefix_spec]
    return [list(per_prefix) for _ in range(j_count)]


def batch_loss_and_grads(
    enc: EncoderParams,
    bank: HeadBank,
    batch: InstanceBatch,
    weights: AlignmentWeights,
    alpha: float,
    margin_matrix: list[list[float]],
    scale: float,
    collect_chunk_upstreams: bool = False,
):
    """DAME loss over a batch and its analytic parameter gradients.

    Accumulation order is fixed (instances, then durations, then prefixes)
    so training trajectories are bitwise reproducible. Returns
    (loss, BatchGrads) and, when requested, the per-chunk upstream gradients
    that flowed into the encoder.
    """
    spec = bank.prefix_spec
    dims = spec.dims
    k_count = len(dims)
    i_count = len(batch.instances)
    j_count = weights.num_durations
    full_dim = spec.full_dim

    g_w1 = np.zeros_like(enc.w1)
    g_b1 = np.zeros_like(enc.b1)
    g_w2 = np.zeros_like(enc.w2)
    g_b2 = np.zeros_like(enc.b2)
    if bank.mode == mh.MODE_SEPARATE:
        g_heads: list[np.ndarray] | np.ndarray = [
            np.zeros_like(bank.head(k)) for k in range(k_count)
        ]
    else:
        g_heads = np.zeros_like(bank.tied_weight)

    per_prefix = np.zeros((i_count, j_count, k_count))
    upstreams = [] if collect_chunk_upstreams else None

    for i, inst in enumerate(batch.instances):
        if len(inst.chunks) != j_count:
            raise ShapeMismatchError(
                f"instance has {len(inst.chunks)} chunks, expected {j_count}"
            )
        for j, chunk in enumerate(inst.chunks):
            z = encode(chunk, enc)
            coeff = dame_loss_coefficient(j, j_count, i_count, alpha)
            upstream = np.zeros(full_dim)
            for k in range(k_count):
                cfg_k = MarginConfig(scale, {dims[k]: margin_matrix[j][k]})
                loss_k, grad_z, grad_w = margin_loss(
                    z[: dims[k]], bank, k, inst.speaker_id, cfg_k
                )
                per_prefix[i, j, k] = loss_k
                w_jk = coeff * weights.c[j, k]
                if w_jk != 0.0:
                    upstream[: dims[k]] += w_jk * grad_z
                    if bank.mode == mh.MODE_SEPARATE:
                        g_heads[k] += w_jk * grad_w  # type: ignore[index]
                    else:
                        g_heads[: dims[k], :] += w_jk * grad_w  # type: ignore[index]
            if upstreams is not None:
                upstreams.append(((i, j), upstream.copy()))
            if np.any(upstream):
                eg = encoder_gradients(chunk, enc, upstream)
                g_w1 += eg.w1
                g_b1 += eg.b1
                g_w2 += eg.w2
                g_b2 += eg.b2

    multi = np.array(
        [
            [multi_prefix_loss(per_prefix[i, j], weights.c[j]) for j in range(j_count)]
            for i in range(i_count)
        ]
    )
    total = dame_loss(multi, alpha)
    grads = BatchGrads(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2, heads=g_heads)
    if collect_chunk_upstreams:
        return total, grads, upstreams
    return total, grads


def _apply_updates(
    enc: EncoderParams, bank: HeadBank, grads: BatchGrads, lr: float, head_frozen: bool
) -> EncoderParams:
    new_enc = EncoderParams(
        w1=sgd_step(enc.w1, grads.w1, lr),
        b1=sgd_step(enc.b1, grads.b1, lr),
        w2=sgd_step(enc.w2, grads.w2, lr),
        b2=sgd_step(enc.b2, grads.b2, lr),
    )
    if not head_frozen:
        if bank.mode == mh.MODE_SEPARATE:
            for k in range(len(bank.prefix_spec)):
                bank.set_head(k, sgd_step(bank.head(k), grads.heads[k], lr))
        else:
            bank.set_tied_weight(sgd_step(bank.tied_weight, grads.heads, lr))
    return new_enc


def _speaker_batches(order: np.ndarray, speakers_per_batch: int) -> list[list[int]]:
    return [
        [int(s) for s in order[start : start + speakers_per_batch]]
        for start in range(0, len(order), speakers_per_batch)
    ]


def _run_epochs(
    cfg: RunConfig,
    dataset: Dataset,
    enc: EncoderParams,
    bank: HeadBank,
    epoch_callback=None,
) -> tuple[EncoderParams, HeadBank, TrainLog]:
    sched = cfg.schedule()
    weights = cfg.weights()
    speakers = np.array(sorted(dataset.by_speaker))
    batch_rng = substream(cfg.seed, "batching")
    log = TrainLog(margin_slots=cfg.margin_slots())

    for epoch in range(cfg.epochs):
        alpha = alpha_at(epoch, sched)
        lr = lr_at(epoch, sched)
        margins = _margin_matrix(cfg, sched, epoch)
        order = batch_rng.permutation(speakers)
        losses = []
        for spk_ids in _speaker_batches(order, cfg.speakers_per_batch):
            batch = sample_instance_batch(dataset, cfg.duration_set, spk_ids, batch_rng)
            loss, grads = batch_loss_and_grads(
                enc, bank, batch, weights, alpha, margins, cfg.scale
            )
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch)
            enc = _apply_updates(enc, bank, grads, lr, cfg.head_frozen)
            losses.append(loss)
        logged_margins = (
            tuple(m[0] for m in margins)
            if cfg.scheme == SCHEME_D_ALMFT
            else tuple(margins[0])
        )
        log.records.append(
            EpochRecord(
                epoch=epoch,
                alpha=alpha,
                lr=lr,
                margins=logged_margins,
                loss=float(np.mean(losses)),
            )
        )
        if epoch_callback is not None:
            epoch_callback(epoch, enc, bank)
    return enc, bank, log


def train_gt(
    cfg: RunConfig, dataset: Dataset, epoch_callback=None
) -> tuple[EncoderParams, HeadBank, TrainLog]:
    """Train the encoder and independent per-prefix heads from scratch."""
    if cfg.regime != REGIME_GT:
        raise ConfigError(f"train_gt requires the GT regime, got {cfg.regime}")
    num_classes = len(dataset.by_speaker)
    enc = init_encoder_params(
        dataset.config.feat_dim, cfg.hidden_dim, cfg.embed_dim,
        substream(cfg.seed, "enc-init"),
    )
    bank = make_gt_heads(
        cfg.prefix_spec, num_classes,
        RngStream(seed=cfg.seed, gen=substream(cfg.seed, "head-init")),
    )
    return _run_epochs(cfg, dataset, enc, bank, epoch_callback)


def train_ft(
    cfg: RunConfig, dataset: Dataset, epoch_callback=None
) -> tuple[EncoderParams, HeadBank, TrainLog]:
    """Fine-tune a pretrained encoder with heads tied to its full head."""
    if cfg.regime != REGIME_FT:
        raise ConfigError(f"train_ft requires the FT regime, got {cfg.regime}")
    enc, pre_bank = load_checkpoint(cfg.pretrained_checkpoint)
    full = (
        pre_bank.tied_weight
        if pre_bank.mode == mh.MODE_TIED
        else pre_bank.head(len(pre_bank.prefix_spec) - 1)
    )
    if full.shape[0] != cfg.embed_dim:
        raise ConfigError(
            f"pretrained head has {full.shape[0]} rows, run config expects {cfg.embed_dim}"
        )
    bank = tie_heads(full.copy(), cfg.prefix_spec)
    return _run_epochs(cfg, dataset, enc, bank, epoch_callback)


# --- checkpoints ------------------------------------------------------------
# Layout: magic "DAMECKP1", u32 section count, then per section an 8-byte tag,
# u64 offset, u64 length (offsets from file start), then the section blobs.
# Sections are the encoder ("DAMEENC1") and head bank ("DAMEHEAD") flat files.


def save_checkpoint(path: str | Path, enc: EncoderParams, bank: HeadBank) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    sections = [
        (b"DAMEENC1", encoder_to_bytes(enc)),
        (b"DAMEHEAD", headbank_to_bytes(bank)),
    ]
    header_len = 8 + 4 + len(sections) * 24
    toc = [CHECKPOINT_MAGIC, struct.pack("<I", len(sections))]
    offset = header_len
    for tag, blob in sections:
        toc.append(tag + struct.pack("<QQ", offset, len(blob)))
        offset += len(blob)
    payload = b"".join(toc) + b"".join(blob for _, blob in sections)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, HeadBank]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 12 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    (count,) = struct.unpack("<I", blob[8:12])
    sections = {}
    off = 12
    for _ in range(count):
        if len(blob) < off + 24:
            raise CheckpointError(f"truncated checkpoint table in {path}")
        tag = blob[off : off + 8]
        start, length = struct.unpack("<QQ", blob[off + 8 : off + 24])
        if start + length > len(blob):
            raise CheckpointError(f"checkpoint section out of bounds in {path}")
        sections[tag] = blob[start : start + length]
        off += 24
    try:
        enc = encoder_from_bytes(sections[b"DAMEENC1"])
        bank = headbank_from_bytes(sections[b"DAMEHEAD"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} is missing section {exc}") from exc
    return enc, bank
