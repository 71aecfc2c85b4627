"""Synthetic duration-aware speaker population.

Each speaker is a pair of unit-norm trait vectors: a coarse block observed
with low frame noise and a fine block observed with much higher noise. The
temporal mean of T frames estimates the traits with error proportional to
1/sqrt(T), so short chunks recover only coarse identity while long chunks
also recover fine identity. That gradient of evidence versus duration is
what the nested-embedding training is meant to exploit.

Generation is deterministic per (seed, speaker, utterance-index): every
utterance draws from an independently derived RNG substream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import Utterance
from .errors import CheckpointError, InsufficientUtterancesError, InvalidDurationError
from .numerics import substream
from .specs import DurationSet

FRAMES_MAGIC = b"DAMEDAT1"

CONDITIONS = ("f-f", "5-5", "5-3", "5-2", "5-1")
SHORT_CONDITIONS = ("5-5", "5-3", "5-2", "5-1")

# enroll/test frame counts per condition at the default fps of 20
CONDITION_FRAMES = {
    "f-f": (400, 400),
    "5-5": (100, 100),
    "5-3": (100, 60),
    "5-2": (100, 40),
    "5-1": (100, 20),
}


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: int
    coarse_trait: np.ndarray  # unit norm, length F_c
    fine_trait: np.ndarray  # unit norm, length F - F_c

    @property
    def traits(self) -> np.ndarray:
        return np.concatenate([self.coarse_trait, self.fine_trait])


@dataclass(frozen=True)
class GeneratorConfig:
    num_speakers: int = 64
    feat_dim: int = 48
    coarse_dim: int = 24
    sigma_coarse: float = 0.5
    sigma_fine: float = 2.0
    frames_per_second: int = 20
    utterances_per_speaker: int = 8
    utterance_frames: int = 400
    trials_per_speaker: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.num_speakers < 2:
            raise ValueError("need >= 2 speakers")
        if not 0 < self.coarse_dim < self.feat_dim:
            raise ValueError("need 0 < coarse_dim < feat_dim")
        if not self.sigma_fine > self.sigma_coarse > 0:
            raise ValueError("need sigma_fine > sigma_coarse > 0")


@dataclass(frozen=True)
class Instance:
    speaker_id: int
    chunks: tuple[Utterance, ...]  # one per duration, shortest first


@dataclass(frozen=True)
class InstanceBatch:
    instances: tuple[Instance, ...]


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_id: str
    is_target: bool
    enroll_frames: int
    test_frames: int


@dataclass(frozen=True)
class TrialList:
    condition: str
    trials: tuple[Trial, ...]


@dataclass
class Dataset:
    config: GeneratorConfig
    profiles: list[SpeakerProfile]
    utterances: dict[str, Utterance] = field(default_factory=dict)
    # per speaker, utterance ids in generation order
    by_speaker: dict[int, list[str]] = field(default_factory=dict)


def make_population(cfg: GeneratorConfig) -> list[SpeakerProfile]:
    """C speaker profiles with i.i.d. Gaussian traits, block-normalized."""
    profiles = []
    for spk in range(cfg.num_speakers):
        rng = substream(cfg.seed, "profile", spk)
        coarse = rng.normal(size=cfg.coarse_dim)
        fine = rng.normal(size=cfg.feat_dim - cfg.coarse_dim)
        coarse /= np.linalg.norm(coarse)
        fine /= np.linalg.norm(fine)
        profiles.append(SpeakerProfile(spk, coarse, fine))
    return profiles


def sample_utterance(
    profile: SpeakerProfile,
    duration_frames: int,
    cfg: GeneratorConfig,
    rng: np.random.Generator,
    source_id: str = "",
) -> Utterance:
    """Frames = concatenated traits plus per-block i.i.d. Gaussian noise."""
    if duration_frames < 1:
        raise InvalidDurationError(f"duration must be >= 1 frame, got {duration_frames}")
    noise = rng.standard_normal((duration_frames, cfg.feat_dim))
    noise[:, : cfg.coarse_dim] *= cfg.sigma_coarse
    noise[:, cfg.coarse_dim :] *= cfg.sigma_fine
    frames = profile.traits[None, :] + noise
    return Utterance(frames=frames, speaker_id=profile.speaker_id,
                     source_id=source_id or f"u{profile.speaker_id:03d}_x")


def utterance_id(speaker_id: int, utt_index: int) -> str:
    return f"u{speaker_id:03d}_{utt_index:02d}"


def generate_dataset(cfg: GeneratorConfig) -> Dataset:
    """The full utterance pool: utterances_per_speaker per speaker."""
    profiles = make_population(cfg)
    ds = Dataset(config=cfg, profiles=profiles)
    for profile in profiles:
        ids = []
        for idx in range(cfg.utterances_per_speaker):
            uid = utterance_id(profile.speaker_id, idx)
            rng = substream(cfg.seed, "utt", profile.speaker_id, idx)
            ds.utterances[uid] = sample_utterance(
                profile, cfg.utterance_frames, cfg, rng, source_id=uid
            )
            ids.append(uid)
        ds.by_speaker[profile.speaker_id] = ids
    return ds


def crop_chunk(u: Utterance, num_frames: int, rng: np.random.Generator) -> Utterance:
    """Random-offset crop of num_frames frames from a source utterance."""
    total = u.num_frames
    if num_frames > total:
        raise InvalidDurationError(
            f"chunk of {num_frames} frames exceeds source length {total}"
        )
    offset = int(rng.integers(0, total - num_frames + 1))
    return Utterance(
        frames=u.frames[offset : offset + num_frames],
        speaker_id=u.speaker_id,
        source_id=u.source_id,
    )


def sample_instance_batch(
    dataset: Dataset,
    durations: DurationSet,
    speaker_ids: list[int],
    rng: np.random.Generator,
) -> InstanceBatch:
    """One instance per listed speaker: J chunks cropped from J distinct
    source utterances of that speaker, chunk j truncated to l_j * fps frames."""
    cfg = dataset.config
    chunk_frames = durations.frames(cfg.frames_per_second)
    j_count = len(chunk_frames)
    instances = []
    for spk in speaker_ids:
        pool = dataset.by_speaker[spk]
        if len(pool) < j_count:
            raise InsufficientUtterancesError(
                f"speaker {spk} has {len(pool)} utterances, needs {j_count}"
            )
        chosen = rng.choice(len(pool), size=j_count, replace=False)
        chunks = tuple(
            crop_chunk(dataset.utterances[pool[int(src)]], nf, rng)
            for src, nf in zip(chosen, chunk_frames)
        )
        instances.append(Instance(speaker_id=spk, chunks=chunks))
    return InstanceBatch(instances=tuple(instances))


def build_trials(dataset: Dataset) -> dict[str, TrialList]:
    """Duration-conditioned verification trials over the utterance pool.

    Five conditions (full-full plus the 5s-vs-short grid), each with
    trials_per_speaker target and as many non-target trials per speaker.
    Enroll and test never share a source utterance.
    """
    cfg = dataset.config
    rng = substream(cfg.seed, "trials")
    speakers = sorted(dataset.by_speaker)
    # one shared trial topology across conditions: same pairs, different crops
    pairs: list[tuple[str, str, bool]] = []
    for pos, spk in enumerate(speakers):
        pool = dataset.by_speaker[spk]
        for _ in range(cfg.trials_per_speaker):
            a, b = rng.choice(len(pool), size=2, replace=False)
            pairs.append((pool[int(a)], pool[int(b)], True))
            j = int(rng.integers(0, len(speakers) - 1))
            if j >= pos:
                j += 1
            test_pool = dataset.by_speaker[speakers[j]]
            enroll = pool[int(rng.integers(0, len(pool)))]
            test = test_pool[int(rng.integers(0, len(test_pool)))]
            pairs.append((enroll, test, False))

    out = {}
    for cond in CONDITIONS:
        enroll_frames, test_frames = CONDITION_FRAMES[cond]
        trials = tuple(
            Trial(enroll_id=e, test_id=t, is_target=tgt,
                  enroll_frames=enroll_frames, test_frames=test_frames)
            for e, t, tgt in pairs
        )
        out[cond] = TrialList(condition=cond, trials=trials)
    return out


# --- persistence -----------------------------------------------------------
# manifest.txt: one line per utterance "utterance-id speaker-id frame-count".
# frames.bin: magic "DAMEDAT1" then, per utterance in manifest order, T and F
# as u32 LE followed by T*F float64 LE frames.
# trials_<condition>.txt: "<label 0|1> <enroll-id> <test-id> <enroll-frames>
# <test-frames>" per line.


def save_dataset(dataset: Dataset, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = [uid for spk in sorted(dataset.by_speaker) for uid in dataset.by_speaker[spk]]
    with open(out_dir / "manifest.txt", "w", encoding="utf-8", newline="\n") as fh:
        for uid in order:
            u = dataset.utterances[uid]
            fh.write(f"{uid} {u.speaker_id} {u.num_frames}\n")
    with open(out_dir / "frames.bin", "wb") as fh:
        fh.write(FRAMES_MAGIC)
        for uid in order:
            u = dataset.utterances[uid]
            t, f = u.frames.shape
            fh.write(struct.pack("<II", t, f))
            fh.write(u.frames.astype("<f8").tobytes())


def load_dataset(data_dir: Path, cfg: GeneratorConfig | None = None) -> Dataset:
    data_dir = Path(data_dir)
    manifest = (data_dir / "manifest.txt").read_text(encoding="utf-8").splitlines()
    entries = []
    for line in manifest:
        if not line.strip():
            continue
        uid, spk, count = line.split()
        entries.append((uid, int(spk), int(count)))

    blob = (data_dir / "frames.bin").read_bytes()
    if blob[:8] != FRAMES_MAGIC:
        raise CheckpointError(f"bad frames magic in {data_dir / 'frames.bin'}")
    off = 8
    utterances: dict[str, Utterance] = {}
    by_speaker: dict[int, list[str]] = {}
    for uid, spk, count in entries:
        t, f = struct.unpack("<II", blob[off : off + 8])
        off += 8
        if t != count:
            raise CheckpointError(f"frame count mismatch for {uid}")
        n = t * f * 8
        frames = np.frombuffer(blob[off : off + n], dtype="<f8").astype(np.float64)
        frames = frames.reshape(t, f)
        off += n
        utterances[uid] = Utterance(frames=frames, speaker_id=spk, source_id=uid)
        by_speaker.setdefault(spk, []).append(uid)

    if cfg is None:
        feat_dim = next(iter(utterances.values())).frames.shape[1] if utterances else 48
        cfg = GeneratorConfig(num_speakers=max(len(by_speaker), 2), feat_dim=feat_dim)
    return Dataset(config=cfg, profiles=[], utterances=utterances, by_speaker=by_speaker)


def save_trials(trials: dict[str, TrialList], out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cond, tl in trials.items():
        path = out_dir / f"trials_{cond}.txt"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tr in tl.trials:
                fh.write(
                    f"{1 if tr.is_target else 0} {tr.enroll_id} {tr.test_id} "
                    f"{tr.enroll_frames} {tr.test_frames}\n"
                )


def load_trials(data_dir: Path) -> dict[str, TrialList]:
    data_dir = Path(data_dir)
    out = {}
    for path in sorted(data_dir.glob("trials_*.txt")):
        cond = path.stem[len("trials_") :]
        trials = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            label, enroll, test, ef, tf = line.split()
            trials.append(
                Trial(
                    enroll_id=enroll,
                    test_id=test,
                    is_target=label == "1",
                    enroll_frames=int(ef),
                    test_frames=int(tf),
                )
            )
        out[cond] = TrialList(condition=cond, trials=tuple(trials))
    return out
