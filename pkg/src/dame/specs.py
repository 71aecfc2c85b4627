"""Nesting dimension sets and chunk duration sets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

from .errors import InvalidPrefixError


@dataclass(frozen=True)
class PrefixSpec:
    """Ordered nesting dimensions d_1 < ... < d_K; d_K is the full dimension."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("prefix spec must contain at least one dimension")
        if any(d <= 0 for d in dims):
            raise ValueError(f"prefix dimensions must be positive, got {dims}")
        if any(a >= b for a, b in zip(dims, dims[1:])):
            raise ValueError(f"prefix dimensions must be strictly increasing, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def full_dim(self) -> int:
        return self.dims[-1]

    def __len__(self) -> int:
        return len(self.dims)

    def __iter__(self) -> Iterator[int]:
        return iter(self.dims)

    def __contains__(self, d: int) -> bool:
        return d in self.dims

    def index_of(self, d: int) -> int:
        """Index k of dimension d, raising InvalidPrefixError if d is not nested."""
        try:
            return self.dims.index(d)
        except ValueError:
            raise InvalidPrefixError(f"{d} is not in the nesting set {self.dims}") from None


@dataclass(frozen=True)
class DurationSet:
    """Ordered chunk durations in seconds, l_1 < ... < l_J."""

    seconds: tuple[float, ...]

    def __post_init__(self):
        secs = tuple(float(s) for s in self.seconds)
        if not secs:
            raise ValueError("duration set must contain at least one duration")
        if any(s <= 0 for s in secs):
            raise ValueError(f"durations must be positive, got {secs}")
        if any(a >= b for a, b in zip(secs, secs[1:])):
            raise ValueError(f"durations must be strictly increasing, got {secs}")
        object.__setattr__(self, "seconds", secs)

    def __len__(self) -> int:
        return len(self.seconds)

    def __iter__(self) -> Iterator[float]:
        return iter(self.seconds)

    def frames(self, fps: int) -> tuple[int, ...]:
        """Chunk lengths in frames at the given frame rate."""
        return tuple(int(round(s * fps)) for s in self.seconds)


def prefix_spec(dims: Sequence[int]) -> PrefixSpec:
    return PrefixSpec(tuple(dims))


def duration_set(seconds: Sequence[float]) -> DurationSet:
    return DurationSet(tuple(seconds))
