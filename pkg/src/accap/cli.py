"""Command-line entry point: ``accap <command> [flags]``.

A run directory holds the checkpoints of one training pipeline::

    policy.ckpt reward.ckpt value.ckpt         supervised stages
    policy_joint.ckpt value_joint.ckpt         actor-critic stage
    train.log                                  key=value epoch lines
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import gradcheck
from .config import ConfigError, RunConfig, field_types, load_config_file, resolve
from .data import FEATURE_DIM, Corpus, generate_corpus, load_corpus, save_corpus
from .decoding import decode
from .metrics import corpus_report
from .policy_net import PolicyNet
from .reward import RewardModel
from .training import joint_train, pretrain_policy, pretrain_value, train_reward
from .value_net import ValueNet

STAGES = ("policy", "reward", "value", "joint")
REQUIRES = {"policy": (), "reward": (), "value": ("policy", "reward"), "joint": ("policy", "reward", "value")}
# per-model offsets so the three networks never share an init stream
SEED_OFFSET = {"policy": 0, "reward": 100, "value": 200}


class CliError(Exception):
    """User-facing failure; printed without a traceback."""


class DependencyError(CliError):
    pass


class ConsistencyError(CliError):
    pass


# ---------------------------------------------------------------- helpers


def _ckpt_path(run: Path, name: str) -> Path:
    return run / f"{name}.ckpt"


def _load_model(run: Path, name: str, kind: str, corpus: Corpus | None = None):
    path = _ckpt_path(run, name)
    if not path.exists():
        stage = name.replace("_joint", "")
        raise DependencyError(f"missing {stage} checkpoint {path}; run `accap train --stage "
                              f"{'joint' if name.endswith('_joint') else stage}` first")
    try:
        model, header = ckpt.load(path, kind=kind)
    except ckpt.CheckpointError as exc:
        raise CliError(f"{path}: {exc}") from None
    if corpus is not None and header.get("vocab") != corpus.vocab.tokens:
        raise ConsistencyError(f"{path}: checkpoint vocabulary does not match the corpus vocabulary")
    return model, header


def _read_corpus(path: str) -> Corpus:
    try:
        return load_corpus(path)
    except FileNotFoundError:
        raise CliError(f"corpus file not found: {path}") from None


def _config(args) -> RunConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {k: getattr(args, k) for k in field_types() if getattr(args, k, None) is not None}
    return resolve(file_values, flags, getattr(args, "preset", None))


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    p.add_argument("--config", help="flat JSON file of config values")
    p.add_argument("--preset", help="named preset (desk, wide512)")
    for name, t in field_types().items():
        if name in skip:
            continue
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=t, default=None,
                       help=f"override {name} (default {getattr(RunConfig(), name)})")


def _add_decoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--decoder", choices=("greedy", "beam", "sample"), default="beam")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--beta", type=float, default=0.4)
    p.add_argument("--max-len", type=int, default=16)
    p.add_argument("--seed", type=int, default=0, help="sampling seed (sample decoder only)")
    p.add_argument("--policy", choices=("auto", "supervised", "joint"), default="auto",
                   help="which policy checkpoint to decode with (auto prefers joint)")


def _decoding_models(run: Path, which: str, corpus: Corpus | None):
    joint_ok = _ckpt_path(run, "policy_joint").exists()
    use_joint = which == "joint" or (which == "auto" and joint_ok)
    policy, header = _load_model(run, "policy_joint" if use_joint else "policy", "policy", corpus)
    value_name = "value_joint" if use_joint and _ckpt_path(run, "value_joint").exists() else "value"
    value = _load_model(run, value_name, "value", corpus)[0] if _ckpt_path(run, value_name).exists() else None
    return policy, value, header


# ---------------------------------------------------------------- commands


def cmd_datagen(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(f"{out} exists; pass --force to overwrite")
    if not out.parent.exists():
        raise FileNotFoundError(f"output directory does not exist: {out.parent}")
    corpus = generate_corpus(args.seed, args.n)
    save_corpus(corpus, out)
    print(f"wrote {len(corpus.examples)} scenes (vocab {len(corpus.vocab)}) to {out}")
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    corpus = _read_corpus(args.corpus)
    run = Path(args.out)
    run.mkdir(parents=True, exist_ok=True)
    stage = args.stage
    for dep in REQUIRES[stage]:
        if not _ckpt_path(run, dep).exists():
            raise DependencyError(f"stage {stage} requires the {dep} checkpoint ({_ckpt_path(run, dep)}); "
                                  f"run `accap train --stage {dep}` first")
    V = len(corpus.vocab)
    vocab = corpus.vocab.tokens
    log_file = open(run / "train.log", "a", encoding="utf-8")

    def logger(line: str) -> None:
        log_file.write(line + "\n")
        log_file.flush()
        print(line)

    try:
        if stage == "policy":
            policy = PolicyNet.init(V, config.d_h, config.d_e, seed=config.seed + SEED_OFFSET["policy"],
                                    scale=config.init_scale)
            pretrain_policy(policy, corpus, config, logger)
            ckpt.save(_ckpt_path(run, "policy"), policy, stage="policy", epoch=config.policy_epochs,
                      seed=config.seed, vocab=vocab)
        elif stage == "reward":
            model = RewardModel.init(V, config.d_emb, config.d_e, seed=config.seed + SEED_OFFSET["reward"],
                                     scale=config.init_scale, margin=config.margin, alpha=config.alpha)
            train_reward(model, corpus, config, logger)
            ckpt.save(_ckpt_path(run, "reward"), model, stage="reward", epoch=config.reward_epochs,
                      seed=config.seed, vocab=vocab)
        elif stage == "value":
            policy, _ = _load_model(run, "policy", "policy", corpus)
            reward_model, _ = _load_model(run, "reward", "reward", corpus)
            value = ValueNet.init(V, config.d_h, config.d_e, hidden_layers=config.value_hidden_layers,
                                  seed=config.seed + SEED_OFFSET["value"], scale=config.init_scale)
            pretrain_value(value, policy, reward_model, corpus, config, logger)
            ckpt.save(_ckpt_path(run, "value"), value, stage="value", epoch=config.value_epochs,
                      seed=config.seed, vocab=vocab)
        else:
            policy, _ = _load_model(run, "policy", "policy", corpus)
            reward_model, _ = _load_model(run, "reward", "reward", corpus)
            value, _ = _load_model(run, "value", "value", corpus)
            joint_train(policy, value, reward_model, corpus, config, logger)
            for name, model in (("policy_joint", policy), ("value_joint", value)):
                ckpt.save(_ckpt_path(run, name), model, stage="joint", epoch=config.joint_epochs,
                          seed=config.seed, vocab=vocab)
    finally:
        log_file.close()
    return 0


def _parse_feature(text: str) -> np.ndarray:
    try:
        values = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise CliError(f"--feature must be {FEATURE_DIM} numbers, got {text!r}") from None
    if len(values) != FEATURE_DIM:
        raise CliError(f"--feature must have {FEATURE_DIM} values, got {len(values)}")
    return np.array(values)


def cmd_caption(args) -> int:
    run = Path(args.run)
    if args.feature is not None:
        policy, value, header = _decoding_models(run, args.policy, None)
        from .data import Vocab

        vocab = Vocab(header["vocab"])
        features = [_parse_feature(args.feature)]
    else:
        if args.corpus is None:
            raise CliError("caption needs --corpus or --feature")
        corpus = _read_corpus(args.corpus)
        policy, value, _ = _decoding_models(run, args.policy, corpus)
        vocab = corpus.vocab
        examples = corpus.split(args.split)
        if args.index is not None:
            if not 0 <= args.index < len(examples):
                raise CliError(f"--index {args.index} outside split {args.split} of size {len(examples)}")
            examples = [examples[args.index]]
        features = [e.feature for e in examples]
    rng = np.random.default_rng(args.seed)
    for f in features:
        ids = decode(policy, value, f, decoder=args.decoder, k=args.k, beta=args.beta,
                     max_len=args.max_len, rng=rng)
        print(vocab.decode(ids))
    return 0


def cmd_eval(args) -> int:
    corpus = _read_corpus(args.corpus)
    run = Path(args.run)
    policy, value, _ = _decoding_models(run, args.policy, corpus)
    reward_model, _ = _load_model(run, "reward", "reward", corpus)
    report = corpus_report(policy, value, corpus.split(args.split), reward_model, decoder=args.decoder,
                           k=args.k, beta=args.beta, max_len=args.max_len)
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_checks(seed=args.seed, d_h=args.d_h, V=args.vocab_size, eps=args.eps,
                                   inject_fault=args.inject_fault)
    print(gradcheck.format_table(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_inspect(args) -> int:
    try:
        print(ckpt.describe(args.checkpoint))
    except ckpt.CheckpointError as exc:
        raise CliError(f"{args.checkpoint}: {exc}") from None
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="accap", description="Actor-critic captioning on a synthetic scene corpus.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic corpus file")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n", type=int, default=2000, help="number of scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="overwrite an existing file")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", choices=STAGES, required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="run directory for checkpoints and train.log")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="decode captions with trained checkpoints")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--corpus")
    p.add_argument("--feature", help=f"{FEATURE_DIM} comma-separated feature values")
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int)
    _add_decoder_flags(p)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("eval", help="score decoded captions on a split")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    _add_decoder_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every objective")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-h", type=int, default=4)
    p.add_argument("--vocab-size", type=int, default=6)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--inject-fault", choices=gradcheck.OBJECTIVES, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="print a checkpoint header")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"accap {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, ValueError)) and not isinstance(exc, CliError) else 1


if __name__ == "__main__":
    sys.exit(main())
