"""Verification scoring and metrics.

Trials are scored by cosine similarity between encoder embeddings (optionally
truncated to a nesting prefix). EER sweeps thresholds over the sorted union
of scores: FRR(t) is the fraction of target scores below t, FAR(t) the
fraction of non-target scores at or above t (ties accept), and the equal
error rate is linearly interpolated between the two adjacent operating
points where FAR - FRR changes sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams, Utterance, encode
from .errors import InvalidPrefixError, NonFiniteError, ZeroVectorError
from .numerics import ZERO_NORM_THRESHOLD
from .specs import PrefixSpec
from .synthdata import SHORT_CONDITIONS, Dataset, TrialList

S_AVG = "s-avg"


@dataclass(frozen=True)
class ScoreSet:
    target_scores: np.ndarray
    nontarget_scores: np.ndarray

    def __post_init__(self):
        tgt = np.asarray(self.target_scores, dtype=np.float64)
        non = np.asarray(self.nontarget_scores, dtype=np.float64)
        if tgt.size == 0 or non.size == 0:
            raise ValueError("both score lists must be non-empty")
        if not (np.all(np.isfinite(tgt)) and np.all(np.isfinite(non))):
            raise NonFiniteError("scores must be finite")
        object.__setattr__(self, "target_scores", tgt)
        object.__setattr__(self, "nontarget_scores", non)


@dataclass(frozen=True)
class EvalRow:
    condition: str
    prefix_dim: int
    eer: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]

    def eer(self, condition: str, prefix_dim: int) -> float:
        for row in self.rows:
            if row.condition == condition and row.prefix_dim == prefix_dim:
                return row.eer
        raise KeyError(f"no row for ({condition}, {prefix_dim})")

    def to_csv(self) -> str:
        lines = ["condition,prefix_dim,eer"]
        for row in self.rows:
            lines.append(f"{row.condition},{row.prefix_dim},{row.eer!r}")
        return "\n".join(lines) + "\n"


def cosine_score(e1: np.ndarray, e2: np.ndarray) -> float:
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    n1 = float(np.linalg.norm(e1))
    n2 = float(np.linalg.norm(e2))
    if n1 < ZERO_NORM_THRESHOLD or n2 < ZERO_NORM_THRESHOLD:
        raise ZeroVectorError("cannot score a zero embedding")
    return float(np.clip(e1 @ e2 / (n1 * n2), -1.0, 1.0))


def compute_eer(scores: ScoreSet) -> float:
    """Equal error rate with linear interpolation at the FAR/FRR crossing.

    Operating points are the sorted unique scores plus one sentinel above the
    maximum (where FRR=1, FAR=0), so a sign change always exists.
    """
    tgt = np.sort(scores.target_scores)
    non = np.sort(scores.nontarget_scores)
    thresholds = np.unique(np.concatenate([tgt, non]))
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)

    frr = np.searchsorted(tgt, thresholds, side="left") / tgt.size
    far = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    diff = far - frr  # non-increasing, starts at 1, ends at -1

    idx = int(np.argmax(diff <= 0.0))
    if diff[idx] == 0.0:
        return float(frr[idx])
    lam = diff[idx - 1] / (diff[idx - 1] - diff[idx])
    return float(frr[idx - 1] + lam * (frr[idx] - frr[idx - 1]))


def _embedding(
    cache: dict, dataset: Dataset, utt_id: str, num_frames: int, params: EncoderParams
) -> np.ndarray:
    key = (utt_id, num_frames)
    z = cache.get(key)
    if z is None:
        u = dataset.utterances[utt_id]
        clipped = Utterance(
            frames=u.frames[:num_frames], speaker_id=u.speaker_id, source_id=u.source_id
        )
        z = encode(clipped, params)
        cache[key] = z
    return z


def score_trials(
    params: EncoderParams,
    dataset: Dataset,
    trial_list: TrialList,
    prefix_dim: int | None = None,
    cache: dict | None = None,
) -> ScoreSet:
    """Cosine scores for one condition, optionally on a leading prefix."""
    if cache is None:
        cache = {}
    tgt, non = [], []
    for tr in trial_list.trials:
        e = _embedding(cache, dataset, tr.enroll_id, tr.enroll_frames, params)
        t = _embedding(cache, dataset, tr.test_id, tr.test_frames, params)
        if prefix_dim is not None:
            e = e[:prefix_dim]
            t = t[:prefix_dim]
        (tgt if tr.is_target else non).append(cosine_score(e, t))
    return ScoreSet(np.array(tgt), np.array(non))


def evaluate(
    params: EncoderParams,
    dataset: Dataset,
    trials: dict[str, TrialList],
    spec: PrefixSpec,
    prefixes_to_report: tuple[int, ...] | None = None,
) -> EvalReport:
    """EER per condition and requested prefix, plus macro-average rows.

    The s-avg row for each prefix is the unweighted mean of the four short
    condition EERs. Scoring always runs on the leading prefix of the full
    embedding, so the full-dimension rows match plain encode-and-score.
    """
    if prefixes_to_report is None:
        prefixes_to_report = (spec.full_dim,)
    for d in prefixes_to_report:
        if d not in spec:
            raise InvalidPrefixError(f"{d} is not in the nesting set {spec.dims}")

    conditions = [c for c in ("f-f", "5-5", "5-3", "5-2", "5-1") if c in trials]
    conditions += [c for c in sorted(trials) if c not in conditions]

    cache: dict = {}
    eers: dict[tuple[str, int], float] = {}
    rows = []
    for cond in conditions:
        for d in prefixes_to_report:
            scores = score_trials(params, dataset, trials[cond], prefix_dim=d, cache=cache)
            eer = compute_eer(scores)
            eers[(cond, d)] = eer
            rows.append(EvalRow(condition=cond, prefix_dim=d, eer=eer))
    if all(c in trials for c in SHORT_CONDITIONS):
        for d in prefixes_to_report:
            mean = float(np.mean([eers[(c, d)] for c in SHORT_CONDITIONS]))
            rows.append(EvalRow(condition=S_AVG, prefix_dim=d, eer=mean))
    return EvalReport(rows=tuple(rows))
