"""Small trainable encoder: affine -> tanh -> affine over mean-pooled frames.

The encoder maps a variable-length frame sequence (T x F) to a full embedding
z in R^D. Pooling happens before the nonlinearity, so the duration mechanism
is transparent: the pooled mean of T noisy frames has noise scaled by 1/sqrt(T).
Embeddings are NOT normalized here; normalization lives inside the margin loss
and the scoring backend.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ShapeMismatchError
from .specs import PrefixSpec

ENCODER_MAGIC = b"DAMEENC1"


@dataclass(frozen=True)
class Utterance:
    frames: np.ndarray  # (T, F) float64
    speaker_id: int
    source_id: str

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class EncoderParams:
    w1: np.ndarray  # (F, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, D)
    b2: np.ndarray  # (D,)

    @property
    def feat_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[1]

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2.ravel(), self.b2]
        )

    @staticmethod
    def from_vector(vec: np.ndarray, feat_dim: int, hidden_dim: int, embed_dim: int) -> "EncoderParams":
        f, h, d = feat_dim, hidden_dim, embed_dim
        sizes = [f * h, h, h * d, d]
        if vec.size != sum(sizes):
            raise ShapeMismatchError(
                f"parameter vector has {vec.size} entries, expected {sum(sizes)}"
            )
        parts = np.split(np.asarray(vec, dtype=np.float64), np.cumsum(sizes)[:-1])
        return EncoderParams(
            w1=parts[0].reshape(f, h).copy(),
            b1=parts[1].copy(),
            w2=parts[2].reshape(h, d).copy(),
            b2=parts[3].copy(),
        )


@dataclass(frozen=True)
class EncoderGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    frames: np.ndarray  # gradient w.r.t. the input frames, (T, F)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])


def init_encoder_params(
    feat_dim: int, hidden_dim: int, embed_dim: int, rng: np.random.Generator
) -> EncoderParams:
    """Gaussian init scaled by 1/sqrt(fan-in); zero biases."""
    w1 = rng.normal(0.0, 1.0 / np.sqrt(feat_dim), size=(feat_dim, hidden_dim))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), size=(hidden_dim, embed_dim))
    return EncoderParams(w1=w1, b1=np.zeros(hidden_dim), w2=w2, b2=np.zeros(embed_dim))


def pooled_mean(frames: np.ndarray) -> np.ndarray:
    # Columns are summed in sorted order so the pooled mean is bitwise
    # invariant to any permutation of the frames.
    return np.sort(frames, axis=0).sum(axis=0) / frames.shape[0]


def encode(u: Utterance, p: EncoderParams) -> np.ndarray:
    """Full embedding z = tanh(mean_t(frames) @ W1 + b1) @ W2 + b2."""
    if u.frames.ndim != 2 or u.frames.shape[1] != p.feat_dim:
        raise ShapeMismatchError(
            f"utterance has feature dim {u.frames.shape[-1] if u.frames.ndim == 2 else '?'}, "
            f"encoder expects {p.feat_dim}"
        )
    pooled = pooled_mean(u.frames)
    hidden = np.tanh(pooled @ p.w1 + p.b1)
    return hidden @ p.w2 + p.b2


def encoder_gradients(
    u: Utterance, p: EncoderParams, upstream: np.ndarray
) -> EncoderGrads:
    """Analytic chain-rule gradients of upstream . encode(u, p).

    The pooled-mean stage distributes the input gradient equally over the
    T frames, scaled by 1/T.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (p.embed_dim,):
        raise ShapeMismatchError(
            f"upstream has shape {upstream.shape}, expected ({p.embed_dim},)"
        )
    if not np.all(np.isfinite(upstream)):
        raise ShapeMismatchError("upstream gradient contains non-finite entries")
    if u.frames.shape[1] != p.feat_dim:
        raise ShapeMismatchError("utterance feature dim disagrees with encoder")

    t = u.frames.shape[0]
    pooled = pooled_mean(u.frames)
    hidden = np.tanh(pooled @ p.w1 + p.b1)

    g_b2 = upstream.copy()
    g_w2 = np.outer(hidden, upstream)
    g_hidden = p.w2 @ upstream
    g_pre = g_hidden * (1.0 - hidden * hidden)
    g_b1 = g_pre
    g_w1 = np.outer(pooled, g_pre)
    g_pooled = p.w1 @ g_pre
    g_frames = np.tile(g_pooled / t, (t, 1))
    return EncoderGrads(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2, frames=g_frames)


def prefix(z: np.ndarray, d: int, spec: PrefixSpec) -> np.ndarray:
    """Leading d entries of z, for d in the active nesting set."""
    spec.index_of(d)  # raises InvalidPrefixError when d is not nested
    return z[:d]


# --- serialization ---------------------------------------------------------
# Flat binary layout: magic "DAMEENC1", then F,H,D as u32 LE, then
# W1, b1, W2, b2 as f64 LE in declaration order.


def encoder_to_bytes(p: EncoderParams) -> bytes:
    header = ENCODER_MAGIC + struct.pack(
        "<III", p.feat_dim, p.hidden_dim, p.embed_dim
    )
    body = np.concatenate(
        [p.w1.ravel(), p.b1, p.w2.ravel(), p.b2]
    ).astype("<f8").tobytes()
    return header + body


def encoder_from_bytes(blob: bytes) -> EncoderParams:
    if len(blob) < 20 or blob[:8] != ENCODER_MAGIC:
        raise CheckpointError("bad encoder magic")
    f, h, d = struct.unpack("<III", blob[8:20])
    expected = (f * h + h + h * d + d) * 8
    body = blob[20:]
    if len(body) != expected:
        raise CheckpointError(
            f"encoder payload has {len(body)} bytes, expected {expected}"
        )
    vec = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return EncoderParams.from_vector(vec, f, h, d)
