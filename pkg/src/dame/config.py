"""Strict key=value run configuration with [data], [train], [eval] sections.

Unknown sections, unknown keys, duplicate keys, and malformed lines all fail
with their line number. Blank lines and full-line comments (# or ;) are
ignored. Values are plain scalars or comma-separated lists.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .specs import DurationSet, PrefixSpec
from .synthdata import GeneratorConfig
from .trainer import RunConfig, resolve_preset


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    return float(text)


def _str(text: str) -> str:
    return text


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in text.split(",") if p.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p.strip()) for p in text.split(",") if p.strip())


DATA_KEYS = {
    "num_speakers": _int,
    "feat_dim": _int,
    "coarse_dim": _int,
    "sigma_coarse": _float,
    "sigma_fine": _float,
    "frames_per_second": _int,
    "utterances_per_speaker": _int,
    "utterance_frames": _int,
    "trials_per_speaker": _int,
    "seed": _int,
    "out_dir": _str,
}

TRAIN_KEYS = {
    "regime": _str,
    "scheme": _str,
    "preset": _str,
    "prefix_spec": _int_list,
    "duration_set": _float_list,
    "margins": _float_list,
    "scale": _float,
    "hidden_dim": _int,
    "speakers_per_batch": _int,
    "epochs": _int,
    "lr": _float,
    "lr_end": _float,
    "alpha_start": _float,
    "alpha_end": _float,
    "alpha_end_epoch": _int,
    "margin_warm_start_epoch": _int,
    "margin_warm_end_epoch": _int,
    "margin_ramp_base": _float,
    "ft_alpha": _float,
    "seed": _int,
    "checkpoint": _str,
    "head_frozen": _bool,
    "data_dir": _str,
    "out_dir": _str,
}

EVAL_KEYS = {
    "checkpoint": _str,
    "data_dir": _str,
    "prefixes": _int_list,
    "out": _str,
}

SECTIONS = {"data": DATA_KEYS, "train": TRAIN_KEYS, "eval": EVAL_KEYS}

CANONICAL_SCHEMES = {
    "sw": "SW",
    "hw": "HW",
    "plain-mrl": "plain-MRL",
    "mrl": "plain-MRL",
    "baseline": "baseline",
    "vlt": "VLT",
    "lmft": "LMFT",
    "d-almft": "D-ALMFT",
}


@dataclass
class CliConfig:
    """Parsed sections: raw string values plus the line each came from."""

    values: dict[str, dict[str, str]]
    lines: dict[str, dict[str, int]]
    text: str

    def get(self, section: str, key: str, default=None):
        raw = self.values.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            return SECTIONS[section][key](raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(
                f"bad value for {section}.{key}: {exc}",
                line=self.lines[section][key],
            ) from None

    def has(self, section: str, key: str) -> bool:
        return key in self.values.get(section, {})

    def set_override(self, section: str, key: str, value: str) -> None:
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}")
        if key not in SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        self.values.setdefault(section, {})[key] = value
        self.lines.setdefault(section, {})[key] = 0


def parse_config(text: str) -> CliConfig:
    values: dict[str, dict[str, str]] = {}
    lines: dict[str, dict[str, int]] = {}
    section: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]", line=lineno)
            section = name
            values.setdefault(name, {})
            lines.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", line=lineno)
        if section is None:
            raise ConfigError("key outside any section", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", line=lineno)
        if key in values[section]:
            raise ConfigError(f"duplicate key {key!r} in section [{section}]", line=lineno)
        values[section][key] = value
        lines[section][key] = lineno
    return CliConfig(values=values, lines=lines, text=text)


def load_config(path: str | Path) -> CliConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def canonical_scheme(name: str) -> str:
    low = name.strip().lower()
    if low not in CANONICAL_SCHEMES:
        raise ConfigError(
            f"unknown scheme {name!r}; known: {sorted(set(CANONICAL_SCHEMES.values()))}"
        )
    return CANONICAL_SCHEMES[low]


def build_generator_config(cfg: CliConfig) -> GeneratorConfig:
    kwargs = {}
    for key in DATA_KEYS:
        if key == "out_dir":
            continue
        if cfg.has("data", key):
            kwargs[key] = cfg.get("data", key)
    try:
        return GeneratorConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_run_config(cfg: CliConfig, overrides: dict | None = None) -> RunConfig:
    """RunConfig from the [train] section; explicit overrides win over keys."""
    overrides = dict(overrides or {})
    regime = overrides.pop("regime", cfg.get("train", "regime", "GT"))

    fields: dict = {}
    direct = [
        "scale", "hidden_dim", "speakers_per_batch", "epochs", "lr", "lr_end",
        "alpha_start", "alpha_end", "alpha_end_epoch",
        "margin_warm_start_epoch", "margin_warm_end_epoch", "margin_ramp_base",
        "ft_alpha", "seed", "head_frozen",
    ]
    for key in direct:
        if cfg.has("train", key):
            fields[key] = cfg.get("train", key)
    if cfg.has("train", "checkpoint"):
        fields["pretrained_checkpoint"] = cfg.get("train", "checkpoint")
    for key, value in overrides.items():
        fields[key] = value

    preset = fields.pop("preset", None) or cfg.get("train", "preset")
    try:
        if preset:
            return resolve_preset(preset, regime, **fields)
        if cfg.has("train", "scheme"):
            fields.setdefault("scheme", canonical_scheme(cfg.get("train", "scheme")))
        if cfg.has("train", "prefix_spec"):
            fields.setdefault("prefix_spec", PrefixSpec(cfg.get("train", "prefix_spec")))
        if cfg.has("train", "duration_set"):
            fields.setdefault("duration_set", DurationSet(cfg.get("train", "duration_set")))
        if cfg.has("train", "margins"):
            fields.setdefault("final_margins", cfg.get("train", "margins"))
        missing = [
            name
            for name in ("scheme", "prefix_spec", "duration_set", "final_margins")
            if name not in fields
        ]
        if missing:
            raise ConfigError(
                f"[train] needs a preset or explicit {', '.join(missing)}"
            )
        return RunConfig(regime=regime, **fields)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
