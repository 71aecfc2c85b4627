"""Epoch-indexed training schedules.

General training: alpha decays linearly from 1.0 to 0.5 by a configured
epoch, margins warm up from 0 on a steep exponential ramp, and the learning
rate is constant. Fine-tuning: alpha and margins are fixed and the learning
rate decays geometrically between its endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidPrefixError

REGIME_GT = "GT"
REGIME_FT = "FT"


@dataclass(frozen=True)
class ScheduleConfig:
    regime: str
    total_epochs: int
    final_margins: dict[int, float]  # d_k -> m_{d_k}
    alpha_start: float = 1.0
    alpha_end: float = 0.5
    alpha_end_epoch: int = 50
    margin_warm_start_epoch: int = 30
    margin_warm_end_epoch: int = 40
    margin_ramp_base: float = 1000.0
    lr_start: float = 0.01
    lr_end: float = 0.01
    ft_alpha: float = 0.5

    def __post_init__(self):
        if self.regime not in (REGIME_GT, REGIME_FT):
            raise ValueError(f"unknown regime {self.regime!r}")
        if not (0.0 <= self.alpha_end <= self.alpha_start <= 1.0):
            raise ValueError("need 0 <= alpha_end <= alpha_start <= 1")
        if not self.margin_warm_start_epoch < self.margin_warm_end_epoch:
            raise ValueError("need warm-start < warm-end")
        if self.regime == REGIME_GT and self.margin_warm_end_epoch > self.total_epochs:
            raise ValueError("warm-end must not exceed total epochs")
        if self.margin_ramp_base <= 1.0:
            raise ValueError("margin ramp base must exceed 1")


def alpha_at(epoch: int, cfg: ScheduleConfig) -> float:
    """GT: linear from alpha_start at epoch 0 to alpha_end at alpha_end_epoch,
    constant after. FT: constant ft_alpha."""
    if cfg.regime == REGIME_FT:
        return cfg.ft_alpha
    if epoch <= 0:
        return cfg.alpha_start
    if epoch >= cfg.alpha_end_epoch:
        return cfg.alpha_end
    t = epoch / cfg.alpha_end_epoch
    return cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) * t


def margin_at(epoch: int, d_k: int, cfg: ScheduleConfig) -> float:
    """GT: 0 before the warm-up window, the final margin after it, and the
    exponential ramp m*(B^t - 1)/(B - 1) inside it. FT: constant final margin."""
    if d_k not in cfg.final_margins:
        raise InvalidPrefixError(f"no final margin configured for d={d_k}")
    m_final = cfg.final_margins[d_k]
    if cfg.regime == REGIME_FT:
        return m_final
    if epoch <= cfg.margin_warm_start_epoch:
        return 0.0
    if epoch >= cfg.margin_warm_end_epoch:
        return m_final
    t = (epoch - cfg.margin_warm_start_epoch) / (
        cfg.margin_warm_end_epoch - cfg.margin_warm_start_epoch
    )
    b = cfg.margin_ramp_base
    return m_final * (b**t - 1.0) / (b - 1.0)


def lr_at(epoch: int, cfg: ScheduleConfig) -> float:
    """FT: geometric decay lr_start -> lr_end over total_epochs. GT: constant."""
    if cfg.regime == REGIME_GT:
        return cfg.lr_start
    if epoch <= 0:
        return cfg.lr_start
    if epoch >= cfg.total_epochs:
        return cfg.lr_end
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (epoch / cfg.total_epochs)


def margins_at(epoch: int, cfg: ScheduleConfig) -> dict[int, float]:
    """All per-prefix margins at one epoch."""
    return {d: margin_at(epoch, d, cfg) for d in sorted(cfg.final_margins)}
