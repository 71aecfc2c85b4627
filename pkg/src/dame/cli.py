"""Operator surface: dataset generation, training, evaluation, alignment
weight inspection, and the built-in selftest.

Exit codes: 0 success, 1 selftest failure, 2 config error, 3 IO error,
4 numerical failure. Flags override config keys.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import selftest as st
from .config import (
    CliConfig,
    build_generator_config,
    build_run_config,
    canonical_scheme,
    load_config,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DameError,
    InvalidPrefixError,
    NonFiniteLossError,
    SchemeShapeMismatchError,
)
from .evaluation import evaluate
from .objective import alignment_weights
from .schedules import REGIME_FT
from .specs import PrefixSpec
from .synthdata import build_trials, generate_dataset, load_dataset, load_trials, save_dataset, save_trials
from .trainer import load_checkpoint, save_checkpoint, train_ft, train_gt

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _echo_config(cfg: CliConfig, out_dir: Path) -> None:
    # the consumed config is preserved verbatim for provenance
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.echo.txt").write_text(cfg.text, encoding="utf-8")


def _apply_sets(cfg: CliConfig, sets: list[str]) -> None:
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        target, _, value = item.partition("=")
        section, _, key = target.partition(".")
        cfg.set_override(section.strip(), key.strip(), value.strip())


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    _apply_sets(cfg, args.set or [])
    gen_cfg = build_generator_config(cfg)
    out_dir = Path(args.out or cfg.get("data", "out_dir") or "data")
    dataset = generate_dataset(gen_cfg)
    trials = build_trials(dataset)
    save_dataset(dataset, out_dir)
    save_trials(trials, out_dir)
    _echo_config(cfg, out_dir)
    num_utts = len(dataset.utterances)
    print(f"speakers: {gen_cfg.num_speakers}")
    print(f"utterances: {num_utts}")
    for cond in sorted(trials):
        tl = trials[cond]
        n_target = sum(1 for t in tl.trials if t.is_target)
        print(f"trials {cond}: {len(tl.trials)} ({n_target} target)")
    print(f"wrote dataset to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    _apply_sets(cfg, args.set or [])
    overrides: dict = {}
    if args.preset:
        overrides["preset"] = args.preset
    if args.checkpoint:
        overrides["pretrained_checkpoint"] = args.checkpoint
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    run_cfg = build_run_config(cfg, overrides)

    data_dir = args.data_dir or cfg.get("train", "data_dir")
    if not data_dir:
        raise ConfigError("[train] needs data_dir (or --data-dir)")
    if not (Path(data_dir) / "manifest.txt").exists():
        raise IOError(f"no dataset at {data_dir}; run gen-data first")
    dataset = load_dataset(Path(data_dir))

    out_dir = Path(args.out or cfg.get("train", "out_dir") or "run")
    out_dir.mkdir(parents=True, exist_ok=True)
    train = train_ft if run_cfg.regime == REGIME_FT else train_gt
    enc, bank, log = train(run_cfg, dataset)
    ckpt_path = out_dir / "checkpoint.bin"
    save_checkpoint(ckpt_path, enc, bank)
    log.checkpoint_path = str(ckpt_path)
    (out_dir / "train_log.csv").write_text(log.to_csv(), encoding="utf-8")
    _echo_config(cfg, out_dir)
    print(f"trained {run_cfg.regime}/{run_cfg.scheme} for {run_cfg.epochs} epochs")
    print(f"final loss: {log.records[-1].loss!r}")
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else CliConfig({}, {}, "")
    if args.config:
        _apply_sets(cfg, args.set or [])
    ckpt = args.checkpoint or cfg.get("eval", "checkpoint")
    if not ckpt:
        raise ConfigError("eval needs a checkpoint (--checkpoint or [eval] checkpoint)")
    data_dir = args.data_dir or cfg.get("eval", "data_dir")
    if not data_dir:
        raise ConfigError("eval needs the dataset directory (--data-dir or [eval] data_dir)")

    enc, bank = load_checkpoint(ckpt)
    dataset = load_dataset(Path(data_dir))
    trials = load_trials(Path(data_dir))
    if not trials:
        raise IOError(f"no trial lists found in {data_dir}")

    spec = bank.prefix_spec
    if args.prefixes:
        prefixes = tuple(int(p) for p in args.prefixes.split(","))
    else:
        prefixes = cfg.get("eval", "prefixes") or (spec.full_dim,)
    report = evaluate(enc, dataset, trials, spec, tuple(prefixes))
    csv_text = report.to_csv()

    out = args.out or cfg.get("eval", "out")
    if out:
        out_path = Path(out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(csv_text, encoding="utf-8")
        if cfg.text:
            _echo_config(cfg, out_path.parent)
        print(f"wrote report to {out_path}")
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def cmd_dump_weights(args) -> int:
    scheme = canonical_scheme(args.scheme)
    weights = alignment_weights(scheme, args.J, args.K, decay_base=args.decay_base)
    lines = ["j\\k," + ",".join(str(k) for k in range(1, weights.num_prefixes + 1))]
    for j in range(weights.num_durations):
        lines.append(f"{j + 1}," + ",".join(repr(v) for v in weights.c[j]))
    print("\n".join(lines))
    return EXIT_OK


def cmd_selftest(args) -> int:
    ok, lines = st.run_selftest(
        tolerance=args.tolerance, probes=args.probes, tamper=args.tamper
    )
    for line in lines:
        print(line)
    if ok:
        print("selftest: all checks passed")
        return EXIT_OK
    failed = [l for l in lines if l.startswith("FAIL")]
    print(f"selftest: {len(failed)} check(s) failed")
    return EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dame",
        description="Duration-aware nested speaker embeddings: data, training, scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset and trial lists")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides [data] out_dir)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train or fine-tune a model")
    p.add_argument("--config", required=True)
    p.add_argument("--preset", help="named configuration preset")
    p.add_argument("--checkpoint", help="pretrained checkpoint (FT regimes)")
    p.add_argument("--data-dir", help="dataset directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score trials and report EER per condition")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--data-dir")
    p.add_argument("--prefixes", help="comma-separated prefix dims to report")
    p.add_argument("--out", help="report CSV path (default: stdout)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-weights", help="print the alignment weight matrix as CSV")
    p.add_argument("--scheme", required=True)
    p.add_argument("--J", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--decay-base", type=float, default=2.0)
    p.set_defaults(func=cmd_dump_weights)

    p = sub.add_parser("selftest", help="run gradient, alignment, and EER oracles")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--tamper", choices=st.TAMPER_TARGETS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidPrefixError, SchemeShapeMismatchError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
