"""Duration-dimension alignment weights and the nested-loss aggregation.

Prefixes {1..K} are partitioned into J contiguous bands by b_j = floor(j*K/J).
A chunk of duration rank j supervises its in-band prefixes at weight 1;
out-of-band prefixes get gamma_k, which is 0 under hard weighting (HW, J = K)
and 2^-(K-k+1) under soft weighting (SW, J < K). The batch loss weights the
longest chunk by alpha and spreads 1-alpha uniformly over the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDurationsError,
    InvalidShapeError,
    SchemeShapeMismatchError,
)

SCHEME_HW = "HW"
SCHEME_SW = "SW"
SCHEME_PLAIN_MRL = "plain-MRL"
SCHEME_D_ALMFT = "D-ALMFT"

_BANDED_SCHEMES = (SCHEME_HW, SCHEME_SW)


@dataclass(frozen=True)
class AlignmentWeights:
    scheme: str
    num_durations: int  # J
    num_prefixes: int  # K
    c: np.ndarray  # (J, K)
    boundaries: np.ndarray  # (J+1,) ints, only meaningful for banded schemes


def band_boundaries(j_count: int, k_count: int) -> np.ndarray:
    """Band edges b_0..b_J with b_j = floor(j*K/J); requires 1 <= J <= K."""
    if j_count < 1 or k_count < 1 or j_count > k_count:
        raise InvalidShapeError(f"need 1 <= J <= K, got J={j_count}, K={k_count}")
    return (np.arange(j_count + 1, dtype=np.int64) * k_count) // j_count


def sw_gamma(k_count: int, decay_base: float = 2.0) -> np.ndarray:
    """Off-band weights gamma_k = base^-(K-k+1), increasing with k."""
    k = np.arange(1, k_count + 1, dtype=np.float64)
    return decay_base ** -(k_count - k + 1.0)


def alignment_weights(
    scheme: str, j_count: int, k_count: int, decay_base: float = 2.0
) -> AlignmentWeights:
    """The (J x K) weight matrix c for the given scheme.

    HW requires J = K (identity coupling); SW requires J < K. plain-MRL is
    all-ones of any shape (every duration supervises every prefix equally);
    D-ALMFT is the J x 1 all-ones column over a collapsed single-head spec.
    """
    if j_count < 1 or k_count < 1:
        raise SchemeShapeMismatchError(f"J and K must be positive, got {j_count}, {k_count}")

    if scheme == SCHEME_PLAIN_MRL:
        c = np.ones((j_count, k_count))
        bounds = _boundaries_or_empty(j_count, k_count)
        return AlignmentWeights(scheme, j_count, k_count, c, bounds)

    if scheme == SCHEME_D_ALMFT:
        if k_count != 1:
            raise SchemeShapeMismatchError(
                f"D-ALMFT uses a single collapsed head, got K={k_count}"
            )
        c = np.ones((j_count, 1))
        return AlignmentWeights(scheme, j_count, 1, c, np.array([0, 1], dtype=np.int64))

    if scheme == SCHEME_HW:
        if j_count != k_count:
            raise SchemeShapeMismatchError(f"HW requires J=K, got J={j_count}, K={k_count}")
    elif scheme == SCHEME_SW:
        if not j_count < k_count:
            raise SchemeShapeMismatchError(f"SW requires J<K, got J={j_count}, K={k_count}")
    else:
        raise SchemeShapeMismatchError(f"unknown weighting scheme {scheme!r}")

    bounds = band_boundaries(j_count, k_count)
    gamma = (
        np.zeros(k_count) if scheme == SCHEME_HW else sw_gamma(k_count, decay_base)
    )
    c = np.tile(gamma, (j_count, 1))
    cols = np.arange(1, k_count + 1)
    for j in range(1, j_count + 1):
        in_band = (cols > bounds[j - 1]) & (cols <= bounds[j])
        c[j - 1, in_band] = 1.0
    return AlignmentWeights(scheme, j_count, k_count, c, bounds)


def _boundaries_or_empty(j_count: int, k_count: int) -> np.ndarray:
    if j_count <= k_count:
        return band_boundaries(j_count, k_count)
    return np.array([], dtype=np.int64)


def multi_prefix_loss(per_prefix_losses: np.ndarray, c_row: np.ndarray) -> float:
    """Weighted sum over prefixes: sum_k c_{j,k} * L_{j,k}."""
    losses = np.asarray(per_prefix_losses, dtype=np.float64)
    row = np.asarray(c_row, dtype=np.float64)
    if losses.shape != row.shape:
        raise InvalidShapeError(
            f"loss vector {losses.shape} and weight row {row.shape} disagree"
        )
    return float(losses @ row)


def dame_loss(multi_prefix: np.ndarray, alpha: float) -> float:
    """Batch aggregation over instances i and duration ranks j.

    (1/I) sum_i [ alpha * L_{i,J} + (1-alpha)/(J-1) * sum_{j<J} L_{i,j} ].
    With J = 1 the second term is undefined; alpha must then be 1 and the
    result is the plain mean of the single column.
    """
    table = np.atleast_2d(np.asarray(multi_prefix, dtype=np.float64))
    num_instances, j_count = table.shape
    if j_count == 1:
        if alpha != 1.0:
            raise DegenerateDurationsError(
                f"J=1 requires alpha=1, got alpha={alpha}"
            )
        return float(table[:, 0].mean())
    longest = table[:, -1]
    rest = table[:, :-1].sum(axis=1)
    per_instance = alpha * longest + (1.0 - alpha) / (j_count - 1) * rest
    return float(per_instance.sum() / num_instances)


def dame_loss_coefficient(
    j: int, j_count: int, num_instances: int, alpha: float
) -> float:
    """d(dame_loss)/dL_{i,j}: the closed-form weight on one chunk's loss."""
    if j == j_count - 1:
        return alpha / num_instances
    return (1.0 - alpha) / ((j_count - 1) * num_instances)
