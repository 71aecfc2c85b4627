"""Large-margin classifier heads over prefix embeddings.

The per-prefix loss is softmax cross-entropy over angular logits: the target
class logit is s*cos(theta_y + m), every other class keeps s*cos(theta_c),
with both the embedding and the head columns l2-normalized inside the loss.
Gradients are differentiated analytically through the normalization, so the
loss consumes the raw (unnormalized) prefix embedding and head columns.

Head banks come in two modes: `separate` (one independent W_k per prefix,
used when training from scratch) and `tied` (every prefix head is a live view
onto the leading d_k rows of one shared full-dimension matrix, used when
fine-tuning a pretrained head).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CheckpointError,
    InvalidPrefixError,
    LabelOutOfRangeError,
    ShapeMismatchError,
    ZeroVectorError,
)
from .numerics import ZERO_NORM_THRESHOLD, RngStream
from .specs import PrefixSpec

HEADBANK_MAGIC = b"DAMEHEAD"

MODE_SEPARATE = "separate"
MODE_TIED = "tied"

# sin(theta) is clamped here in the target-logit derivative; the exact
# derivative diverges as theta -> 0 for m > 0.
_SIN_FLOOR = 1e-12


@dataclass(frozen=True)
class MarginConfig:
    """Logit scale s and additive angular margins per prefix dimension."""

    scale: float
    margins: dict[int, float]  # d_k -> m_{d_k}, radians

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        for d, m in self.margins.items():
            if not 0.0 <= m <= 1.0:
                raise ValueError(f"margin for d={d} must lie in [0, 1], got {m}")

    def margin_for(self, d: int) -> float:
        if d not in self.margins:
            raise InvalidPrefixError(f"no margin configured for prefix dimension {d}")
        return self.margins[d]


class HeadBank:
    """Per-prefix classifier weights, independent or tied.

    separate: one (d_k x C) matrix per prefix.
    tied: a single (D x C) matrix; head(k) is a numpy view of its leading
    d_k rows, so mutating the shared matrix is observed by every head.
    """

    def __init__(
        self,
        mode: str,
        prefix_spec: PrefixSpec,
        num_classes: int,
        separate_weights: list[np.ndarray] | None = None,
        tied_weight: np.ndarray | None = None,
    ):
        if mode not in (MODE_SEPARATE, MODE_TIED):
            raise ValueError(f"unknown head bank mode {mode!r}")
        self.mode = mode
        self.prefix_spec = prefix_spec
        self.num_classes = int(num_classes)
        if mode == MODE_SEPARATE:
            if separate_weights is None or len(separate_weights) != len(prefix_spec):
                raise ShapeMismatchError("separate mode needs one matrix per prefix")
            for d, w in zip(prefix_spec, separate_weights):
                if w.shape != (d, num_classes):
                    raise ShapeMismatchError(
                        f"head for d={d} has shape {w.shape}, expected {(d, num_classes)}"
                    )
            self._weights = separate_weights
            self._tied = None
        else:
            if tied_weight is None:
                raise ShapeMismatchError("tied mode needs the shared weight matrix")
            if tied_weight.shape != (prefix_spec.full_dim, num_classes):
                raise ShapeMismatchError(
                    f"tied weight has shape {tied_weight.shape}, expected "
                    f"{(prefix_spec.full_dim, num_classes)}"
                )
            self._weights = None
            self._tied = tied_weight

    @property
    def tied_weight(self) -> np.ndarray:
        if self._tied is None:
            raise ShapeMismatchError("bank is not in tied mode")
        return self._tied

    def set_tied_weight(self, w: np.ndarray) -> None:
        if self._tied is None:
            raise ShapeMismatchError("bank is not in tied mode")
        if w.shape != self._tied.shape:
            raise ShapeMismatchError("tied weight shape cannot change")
        self._tied = w

    def head(self, k: int) -> np.ndarray:
        """Weight matrix for prefix index k. In tied mode this is a view."""
        if not 0 <= k < len(self.prefix_spec):
            raise InvalidPrefixError(
                f"prefix index {k} out of range for {self.prefix_spec.dims}"
            )
        if self.mode == MODE_SEPARATE:
            return self._weights[k]  # type: ignore[index]
        return self._tied[: self.prefix_spec.dims[k], :]  # type: ignore[index]

    def set_head(self, k: int, w: np.ndarray) -> None:
        if self.mode != MODE_SEPARATE:
            raise ShapeMismatchError("only separate-mode heads can be replaced")
        if w.shape != self._weights[k].shape:  # type: ignore[index]
            raise ShapeMismatchError("head shape cannot change")
        self._weights[k] = w  # type: ignore[index]


def make_gt_heads(spec: PrefixSpec, num_classes: int, rng: RngStream) -> HeadBank:
    """Independent Gaussian heads, entries scaled by 1/sqrt(d_k).

    The scaling keeps initial logit variance comparable across prefixes so no
    band dominates early training.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    weights = [
        rng.gen.normal(0.0, 1.0 / math.sqrt(d), size=(d, num_classes)) for d in spec
    ]
    return HeadBank(MODE_SEPARATE, spec, num_classes, separate_weights=weights)


def tie_heads(w: np.ndarray, spec: PrefixSpec) -> HeadBank:
    """Share one full-dimension matrix among all prefixes via leading-row views."""
    if w.ndim != 2 or w.shape[0] != spec.full_dim:
        raise ShapeMismatchError(
            f"tied weight must have {spec.full_dim} rows, got shape {w.shape}"
        )
    return HeadBank(MODE_TIED, spec, w.shape[1], tied_weight=w)


def margin_loss(
    z_prefix: np.ndarray,
    bank: HeadBank,
    k: int,
    y: int,
    cfg: MarginConfig,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Additive-angular-margin cross-entropy for one prefix embedding.

    Returns (loss, grad wrt the unnormalized z_prefix, grad wrt the head
    matrix). In tied mode the weight gradient covers only the leading d_k
    rows; the caller accumulates across prefixes.

    When theta_y + m exceeds pi the target logit falls back to the monotone
    surrogate cos(theta_y) - m*sin(m), which keeps the loss decreasing in
    cos(theta_y) everywhere.
    """
    w = bank.head(k)
    d = bank.prefix_spec.dims[k]
    z_prefix = np.asarray(z_prefix, dtype=np.float64)
    if z_prefix.shape != (d,):
        raise ShapeMismatchError(
            f"prefix embedding has shape {z_prefix.shape}, expected ({d},)"
        )
    if not 0 <= y < bank.num_classes:
        raise LabelOutOfRangeError(f"label {y} outside [0, {bank.num_classes})")
    m = cfg.margin_for(d)
    s = cfg.scale

    z_norm = float(np.linalg.norm(z_prefix))
    if z_norm < ZERO_NORM_THRESHOLD:
        raise ZeroVectorError("prefix embedding has zero norm")
    w_norms = np.linalg.norm(w, axis=0)
    if np.any(w_norms < ZERO_NORM_THRESHOLD):
        raise ZeroVectorError("a head column has zero norm")

    z_hat = z_prefix / z_norm
    w_hat = w / w_norms
    cos = w_hat.T @ z_hat  # (C,)

    cos_y = float(np.clip(cos[y], -1.0, 1.0))
    sin_y = math.sqrt(max(1.0 - cos_y * cos_y, 0.0))
    cos_m, sin_m = math.cos(m), math.sin(m)

    logits = s * cos
    # theta_y + m > pi  <=>  cos(theta_y) < cos(pi - m) = -cos(m)
    overflow = cos_y < -cos_m
    if overflow:
        logits[y] = s * (cos_y - m * sin_m)
        dlogit_y_dcos = s
    else:
        logits[y] = s * (cos_y * cos_m - sin_y * sin_m)
        dlogit_y_dcos = s * (cos_m + sin_m * cos_y / max(sin_y, _SIN_FLOOR))

    shift = logits.max()
    exp = np.exp(logits - shift)
    total = exp.sum()
    loss = float(shift + math.log(total) - logits[y])

    # dL/dlogit_c = p_c - 1{c=y}; fold in dlogit/dcos per class.
    g = exp / total
    g[y] -= 1.0
    q = g * s
    q[y] = g[y] * dlogit_y_dcos

    # dcos_c/dz = (w_hat_c - cos_c z_hat)/||z||, dcos_c/dw_c = (z_hat - cos_c w_hat_c)/||w_c||
    grad_z = (w_hat @ q - float(q @ cos) * z_hat) / z_norm
    grad_w = (np.outer(z_hat, q) - w_hat * (q * cos)[None, :]) / w_norms[None, :]
    return loss, grad_z, grad_w


def bank_to_vector(bank: HeadBank) -> np.ndarray:
    """Flatten all distinct head parameters (used by gradient checks)."""
    if bank.mode == MODE_SEPARATE:
        return np.concatenate([bank.head(k).ravel() for k in range(len(bank.prefix_spec))])
    return bank.tied_weight.ravel().copy()


def bank_from_vector(
    vec: np.ndarray, mode: str, spec: PrefixSpec, num_classes: int
) -> HeadBank:
    vec = np.asarray(vec, dtype=np.float64)
    if mode == MODE_SEPARATE:
        sizes = [d * num_classes for d in spec]
        if vec.size != sum(sizes):
            raise ShapeMismatchError(
                f"head vector has {vec.size} entries, expected {sum(sizes)}"
            )
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        weights = [p.reshape(d, num_classes).copy() for p, d in zip(parts, spec)]
        return HeadBank(MODE_SEPARATE, spec, num_classes, separate_weights=weights)
    expected = spec.full_dim * num_classes
    if vec.size != expected:
        raise ShapeMismatchError(f"head vector has {vec.size} entries, expected {expected}")
    return HeadBank(
        MODE_TIED, spec, num_classes,
        tied_weight=vec.reshape(spec.full_dim, num_classes).copy(),
    )


# --- serialization ---------------------------------------------------------
# Layout: magic "DAMEHEAD", mode byte (0 separate / 1 tied), u32 C, u32 K,
# K prefix dims as u32 LE, then the weights as f64 LE row-major: each W_k in
# order for separate mode, the single shared matrix for tied mode.


def headbank_to_bytes(bank: HeadBank) -> bytes:
    spec = bank.prefix_spec
    out = [HEADBANK_MAGIC]
    out.append(struct.pack("<BII", 0 if bank.mode == MODE_SEPARATE else 1,
                           bank.num_classes, len(spec)))
    out.append(struct.pack(f"<{len(spec)}I", *spec.dims))
    if bank.mode == MODE_SEPARATE:
        for k in range(len(spec)):
            out.append(bank.head(k).astype("<f8").tobytes())
    else:
        out.append(bank.tied_weight.astype("<f8").tobytes())
    return b"".join(out)


def headbank_from_bytes(blob: bytes) -> HeadBank:
    if len(blob) < 17 or blob[:8] != HEADBANK_MAGIC:
        raise CheckpointError("bad head bank magic")
    mode_byte, num_classes, k = struct.unpack("<BII", blob[8:17])
    if mode_byte not in (0, 1):
        raise CheckpointError(f"unknown head bank mode byte {mode_byte}")
    off = 17
    if len(blob) < off + 4 * k:
        raise CheckpointError("truncated head bank dims")
    dims = struct.unpack(f"<{k}I", blob[off : off + 4 * k])
    off += 4 * k
    spec = PrefixSpec(dims)
    body = blob[off:]
    if mode_byte == 0:
        expected = sum(d * num_classes for d in dims) * 8
        if len(body) != expected:
            raise CheckpointError(
                f"head bank payload has {len(body)} bytes, expected {expected}"
            )
        weights = []
        pos = 0
        for d in dims:
            n = d * num_classes * 8
            weights.append(
                np.frombuffer(body[pos : pos + n], dtype="<f8")
                .astype(np.float64)
                .reshape(d, num_classes)
            )
            pos += n
        return HeadBank(MODE_SEPARATE, spec, num_classes, separate_weights=weights)
    expected = spec.full_dim * num_classes * 8
    if len(body) != expected:
        raise CheckpointError(
            f"head bank payload has {len(body)} bytes, expected {expected}"
        )
    w = (
        np.frombuffer(body, dtype="<f8")
        .astype(np.float64)
        .reshape(spec.full_dim, num_classes)
    )
    return HeadBank(MODE_TIED, spec, num_classes, tied_weight=w)
