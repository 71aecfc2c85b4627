"""Dense float64 numerics: normalization, seeded RNG streams, and a
central-difference gradient oracle.

All exported computation is 64-bit and deterministic: identical inputs and
seeds give bitwise-identical outputs. Randomness comes exclusively from
PCG64 streams derived from explicit seeds.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ZeroVectorError

RNG_ALGORITHM = "pcg64"

ZERO_NORM_THRESHOLD = 1e-30


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||. Raises ZeroVectorError if ||v|| < 1e-30."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < ZERO_NORM_THRESHOLD:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm!r}")
    return v / norm


@dataclass(frozen=True)
class RngStream:
    """A seeded PCG64 stream. Same seed, same draw sequence, bitwise."""

    seed: int
    algorithm: str = RNG_ALGORITHM
    gen: np.random.Generator = field(compare=False, repr=False, default=None)  # type: ignore[assignment]


def seeded_rng(seed: int) -> RngStream:
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return RngStream(seed=seed, gen=gen)


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Derive an independent PCG64 stream keyed by (seed, path).

    Path components are folded into the SeedSequence spawn key (strings via
    crc32), so streams are independent of the order in which they are
    created. Used to make per-speaker / per-utterance generation order-free.
    """
    key = tuple(
        zlib.crc32(p.encode("utf-8")) if isinstance(p, str) else int(p) for p in path
    )
    ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    worst_coordinate: int
    passed: bool


def grad_check(
    f: Callable[[np.ndarray], float],
    x: np.ndarray | Sequence[float] | float,
    analytic_grad: np.ndarray | Sequence[float] | float,
    eps: float = 1e-5,
    tol: float = 1e-5,
) -> GradCheckReport:
    """Check analytic_grad against central differences of f at x.

    Per-coordinate relative error uses max(1, |analytic|, |numeric|) as the
    denominator; the check passes iff the worst coordinate is below tol.
    Raises NonFiniteError if any probe evaluation of f is NaN/Inf.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps!r}")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    analytic = np.atleast_1d(np.asarray(analytic_grad, dtype=np.float64))
    if analytic.shape != x.shape:
        raise ValueError(f"gradient shape {analytic.shape} != point shape {x.shape}")

    numeric = np.empty_like(x)
    for i in range(x.size):
        probe = x.copy()
        probe[i] = x[i] + eps
        f_plus = float(f(probe))
        probe[i] = x[i] - eps
        f_minus = float(f(probe))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"probe evaluation at coordinate {i} is not finite")
        numeric[i] = (f_plus - f_minus) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    max_rel = float(rel[worst])
    return GradCheckReport(
        max_relative_error=max_rel, worst_coordinate=worst, passed=max_rel < tol
    )
