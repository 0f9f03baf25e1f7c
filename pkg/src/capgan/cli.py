"""Command-line interface.

Subcommands cover the full workflow: prepare-data, pretrain (generator
MLE), pretrain-d, pretrain-se, train-gan, generate, evaluate. Options
resolve as command-line flags over a YAML config file over built-in
defaults; every training command writes the merged configuration back
into its run directory so a run is reproducible from its artifacts alone.

Errors exit nonzero with a single machine-parseable line on stderr:
``error: category=<category>: <message>``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .corpus import (
    CorpusError,
    build_vocabulary,
    generate_synthetic_corpus,
    load_dataset,
    save_dataset,
)
from .decoding import DecodeConfig, generate_diverse_set, read_captions, write_captions
from .metrics import evaluate_captions
from .models import (
    CheckpointError,
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    SemanticEvaluator,
    SemanticEvaluatorConfig,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from .seeding import substream
from .text import EmptyCaptionError, Vocabulary, normalize_and_tokenize
from .training import (
    TrainConfig,
    TrainingDiverged,
    adversarial_train,
    d_pretrain,
    mle_pretrain,
    semantic_pretrain,
)

DEFAULTS = {
    "seed": 0,
    "batch_size": 32,
    "learning_rate": 1e-4,
    "lam": 0.5,
    "mle_epochs": 25,
    "d_pretrain_epochs": 5,
    "se_pretrain_epochs": 25,
    "adversarial_epochs": 30,
    "t_max": 22,
    "min_count": 1,
    "beam_size": 5,
    "n_captions": 5,
    "d_model": 128,
    "n_layers": 2,
    "n_heads": 4,
    "d_ff": 256,
    "noise_dim": 64,
    "dropout": 0.1,
    "d_embed_dim": 64,
    "d_hidden_dim": 128,
    "se_embed_dim": 64,
    "se_hidden_dim": 128,
    "se_out_dim": 128,
}

LAMBDA_SWEEP_DEFAULT = "1.0,0.7,0.5,0.3,0.0"


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# -- config plumbing ----------------------------------------------------------


def _resolve_config(args) -> dict:
    """flags > YAML config file > defaults."""
    cfg = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = yaml.safe_load(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise CliError("config", f"cannot read config {config_path}: {exc}")
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise CliError("config", f"{config_path}: top level must be a mapping")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise CliError("config", f"{config_path}: unknown keys {unknown}")
        cfg.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _write_merged_config(cfg: dict, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(
        yaml.safe_dump(cfg, sort_keys=True), encoding="utf-8"
    )


def _train_config(cfg: dict, **overrides) -> TrainConfig:
    fields = (
        "lam", "mle_epochs", "d_pretrain_epochs", "se_pretrain_epochs",
        "adversarial_epochs", "batch_size", "learning_rate", "seed", "t_max",
    )
    kwargs = {f: cfg[f] for f in fields}
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


# -- shared loading -----------------------------------------------------------


def _load_splits(data_dir) -> tuple:
    data_dir = Path(data_dir)
    train_manifest = data_dir / "train.json"
    eval_manifest = data_dir / "evaluation.json"
    if not train_manifest.exists():
        raise CliError("corpus", f"no train manifest at {train_manifest}")
    train = load_dataset(train_manifest, "train")
    evaluation = None
    if eval_manifest.exists():
        evaluation = load_dataset(eval_manifest, "evaluation")
    return train, evaluation


def _load_or_build_vocab(run_dir: Path, train, min_count: int) -> Vocabulary:
    vocab_path = run_dir / "vocab.txt"
    if vocab_path.exists():
        return Vocabulary.load(vocab_path)
    vocab = build_vocabulary(train, min_count=min_count)
    run_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(vocab_path)
    return vocab


def _data_feat_dim(train) -> int:
    return train.records[0].features.shape[1]


def _build_generator(vocab, cfg: dict, feat_dim: int) -> Generator:
    config = GeneratorConfig(
        vocab_size=len(vocab), feat_dim=feat_dim, d_model=cfg["d_model"],
        n_layers=cfg["n_layers"], n_heads=cfg["n_heads"], d_ff=cfg["d_ff"],
        noise_dim=cfg["noise_dim"], t_max=cfg["t_max"], dropout=cfg["dropout"],
    )
    return Generator(config, substream(cfg["seed"], "generator-init"))


def _build_discriminator(vocab, cfg: dict) -> Discriminator:
    config = DiscriminatorConfig(
        vocab_size=len(vocab), embed_dim=cfg["d_embed_dim"],
        hidden_dim=cfg["d_hidden_dim"],
    )
    return Discriminator(config, substream(cfg["seed"], "discriminator-init"))


def _build_semantic(vocab, cfg: dict, feat_dim: int) -> SemanticEvaluator:
    config = SemanticEvaluatorConfig(
        vocab_size=len(vocab), feat_dim=feat_dim, embed_dim=cfg["se_embed_dim"],
        hidden_dim=cfg["se_hidden_dim"], out_dim=cfg["se_out_dim"],
    )
    return SemanticEvaluator(config, substream(cfg["seed"], "semantic-init"))


def _restore_generator(path) -> tuple[Generator, dict]:
    arrays, meta = load_checkpoint(path, expected_kind="generator")
    gen = Generator(GeneratorConfig(**meta["config"]), substream(0, "generator-init"))
    restore_model(gen, arrays)
    return gen, meta


def _restore_into(model, path, kind: str) -> dict:
    arrays, meta = load_checkpoint(path, expected_kind=kind)
    restore_model(model, arrays)
    return meta


# -- subcommands --------------------------------------------------------------


def cmd_prepare_data(args) -> int:
    out_dir = Path(args.out)
    train_manifest = out_dir / "train.json"
    if train_manifest.exists() and not args.force:
        raise CliError(
            "usage", f"{train_manifest} exists; pass --force to overwrite"
        )
    if args.import_train:
        train = load_dataset(args.import_train, "train")
        evaluation = load_dataset(args.import_eval, "evaluation") if args.import_eval else None
    else:
        train, evaluation = generate_synthetic_corpus(
            seed=args.seed if args.seed is not None else DEFAULTS["seed"],
            n_clips=args.clips,
            n_classes=args.classes,
            feat_dim=args.feat_dim,
            eval_fraction=args.eval_fraction,
        )
    save_dataset(train, out_dir, "train.json")
    if evaluation is not None:
        save_dataset(evaluation, out_dir, "evaluation.json")
    n_eval = len(evaluation.records) if evaluation is not None else 0
    print(f"wrote {len(train.records)} train / {n_eval} evaluation clips to {out_dir}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    run_dir = Path(args.run)
    train, evaluation = _load_splits(args.data)
    vocab = _load_or_build_vocab(run_dir, train, cfg["min_count"])
    feat_dim = _data_feat_dim(train)
    gen = _build_generator(vocab, cfg, feat_dim)
    start_epoch = 1
    final_ckpt = run_dir / "generator_mle_final.ckpt"
    if args.resume:
        if not final_ckpt.exists():
            raise CliError("usage", f"--resume: no checkpoint at {final_ckpt}")
        meta = _restore_into(gen, final_ckpt, "generator")
        start_epoch = meta["epoch"] + 1
    _write_merged_config(cfg, run_dir)
    config = _train_config(cfg)
    log = mle_pretrain(
        gen, train, evaluation, vocab, config, out_dir=run_dir,
        start_epoch=start_epoch,
    )
    log.save_jsonl(run_dir / "mle_log.jsonl")
    last = log.records[-1] if log.records else {}
    print(
        f"mle pretraining done: epochs {start_epoch}..{config.mle_epochs}, "
        f"final loss {last.get('mle_loss', float('nan')):.4f}"
    )
    return 0


def cmd_pretrain_d(args) -> int:
    cfg = _resolve_config(args)
    run_dir = Path(args.run)
    train, _ = _load_splits(args.data)
    vocab = _load_or_build_vocab(run_dir, train, cfg["min_count"])
    gen_ckpt = Path(args.generator) if args.generator else run_dir / "generator_mle_final.ckpt"
    gen, _ = _restore_generator(gen_ckpt)
    d = _build_discriminator(vocab, cfg)
    d_ckpt = run_dir / "discriminator_pretrained.ckpt"
    start_epoch = 1
    if args.resume:
        if not d_ckpt.exists():
            raise CliError("usage", f"--resume: no checkpoint at {d_ckpt}")
        meta = _restore_into(d, d_ckpt, "discriminator")
        start_epoch = meta["epoch"] + 1
    _write_merged_config(cfg, run_dir)
    config = _train_config(cfg)
    log = d_pretrain(d, gen, train, vocab, config, start_epoch=start_epoch)
    save_checkpoint(d_ckpt, d, {"epoch": config.d_pretrain_epochs, "seed": cfg["seed"],
                                "stage": "d-pretrain"})
    log.save_jsonl(run_dir / "d_log.jsonl")
    last = log.records[-1] if log.records else {}
    print(f"discriminator pretraining done: loss {last.get('d_loss', float('nan')):.4f}")
    return 0


def cmd_pretrain_se(args) -> int:
    cfg = _resolve_config(args)
    run_dir = Path(args.run)
    train, _ = _load_splits(args.data)
    vocab = _load_or_build_vocab(run_dir, train, cfg["min_count"])
    feat_dim = _data_feat_dim(train)
    se = _build_semantic(vocab, cfg, feat_dim)
    se_ckpt = run_dir / "semantic_evaluator.ckpt"
    start_epoch = 1
    if args.resume:
        if not se_ckpt.exists():
            raise CliError("usage", f"--resume: no checkpoint at {se_ckpt}")
        meta = _restore_into(se, se_ckpt, "semantic")
        start_epoch = meta["epoch"] + 1
    _write_merged_config(cfg, run_dir)
    config = _train_config(cfg)
    log = semantic_pretrain(se, train, vocab, config, start_epoch=start_epoch)
    save_checkpoint(se_ckpt, se, {"epoch": config.se_pretrain_epochs, "seed": cfg["seed"],
                                  "stage": "se-pretrain"})
    log.save_jsonl(run_dir / "se_log.jsonl")
    last = log.records[-1] if log.records else {}
    print(f"semantic evaluator pretraining done: loss {last.get('se_loss', float('nan')):.4f}")
    return 0


def cmd_train_gan(args) -> int:
    cfg = _resolve_config(args)
    run_dir = Path(args.run)
    train, evaluation = _load_splits(args.data)
    vocab = _load_or_build_vocab(run_dir, train, cfg["min_count"])
    if args.lambda_sweep:
        try:
            lambdas = [float(v) for v in args.lambda_sweep.split(",") if v.strip()]
        except ValueError:
            raise CliError("usage", f"bad --lambda-sweep value {args.lambda_sweep!r}")
    else:
        lambdas = [cfg["lam"]]
    gen_ckpt = Path(args.generator) if args.generator else run_dir / "generator_mle_final.ckpt"
    d_ckpt = Path(args.discriminator) if args.discriminator else run_dir / "discriminator_pretrained.ckpt"
    se_ckpt = Path(args.semantic) if args.semantic else run_dir / "semantic_evaluator.ckpt"
    for path in (gen_ckpt, d_ckpt, se_ckpt):
        if not path.exists():
            raise CliError("checkpoint", f"missing pretrained checkpoint {path}")

    for lam in lambdas:
        tag = f"ablation_{args.ablation}" if args.ablation else f"lambda_{lam:g}"
        out_dir = run_dir / "gan" / tag
        # fresh copies per lambda so sweep runs are independent
        gen, _ = _restore_generator(gen_ckpt)
        d = _build_discriminator(vocab, cfg)
        _restore_into(d, d_ckpt, "discriminator")
        feat_dim = _data_feat_dim(train)
        se = _build_semantic(vocab, cfg, feat_dim)
        _restore_into(se, se_ckpt, "semantic")
        config = _train_config(cfg, lam=lam, ablation=args.ablation)
        run_cfg = dict(cfg, lam=config.lam)
        _write_merged_config(run_cfg, out_dir)
        log, oracles = adversarial_train(
            gen, d, se, train, evaluation, vocab, config, out_dir=out_dir
        )
        log.save_jsonl(out_dir / "train_log.jsonl")
        log.save_reward_csv(out_dir / "rewards.csv")
        last = log.records[-1] if log.records else {}
        note = ""
        if config.lam == 0.0:
            note = " (conventional RL: discriminator and semantic evaluator never queried)"
        print(
            f"{tag}: {config.adversarial_epochs} epochs, "
            f"mean reward {last.get('mean_reward', float('nan')):.4f}{note}"
        )
    return 0


def cmd_generate(args) -> int:
    run_dir = Path(args.run)
    vocab_path = run_dir / "vocab.txt"
    if not vocab_path.exists():
        raise CliError("usage", f"no vocabulary at {vocab_path}; run pretrain first")
    vocab = Vocabulary.load(vocab_path)
    ckpt = Path(args.checkpoint) if args.checkpoint else run_dir / "generator_mle_final.ckpt"
    gen, _ = _restore_generator(ckpt)
    train, evaluation = _load_splits(args.data)
    split = train if args.split == "train" else evaluation
    if split is None:
        raise CliError("corpus", f"no {args.split} split in {args.data}")
    decode = DecodeConfig(
        beam_size=args.beam_size, max_length=gen.config.t_max,
        n_captions=args.n, seed=args.seed if args.seed is not None else 0,
    )
    rng = substream(decode.seed, "generate-noise")
    rows = []
    underfilled = 0
    for record in split.records:
        features = record.features[None]
        feat_lengths = np.array([record.features.shape[0]])
        seqs, scores, flagged = generate_diverse_set(
            gen, features, feat_lengths, decode, rng, mode=args.mode
        )
        underfilled += bool(flagged)
        rows.append(
            {
                "clip_id": record.clip_id,
                "captions": [" ".join(vocab.decode(s)) for s in seqs],
                "scores": [round(float(s), 6) for s in scores],
            }
        )
    out_path = Path(args.out) if args.out else run_dir / f"captions_{args.mode}.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_captions(out_path, rows)
    note = f" ({underfilled} clips underfilled)" if underfilled else ""
    print(f"wrote {len(rows)} clips x {args.n} captions to {out_path}{note}")
    return 0


def cmd_evaluate(args) -> int:
    train, evaluation = _load_splits(args.data)
    split = train if args.split == "train" else evaluation
    if split is None:
        raise CliError("corpus", f"no {args.split} split in {args.data}")
    references = {r.clip_id: r.references for r in split.records}
    rows = read_captions(args.captions)
    generated = {}
    for row in rows:
        try:
            generated[row["clip_id"]] = [
                normalize_and_tokenize(c) for c in row["captions"]
            ]
        except EmptyCaptionError as exc:
            raise CliError("evaluation", f"clip {row['clip_id']}: {exc}")
    try:
        report = evaluate_captions(generated, references)
    except ValueError as exc:
        raise CliError("evaluation", str(exc))
    print(report.to_table(), end="")
    if args.out_json:
        Path(args.out_json).write_text(report.to_json(), encoding="utf-8")
    if args.per_clip_csv:
        report.write_per_clip_csv(args.per_clip_csv)
    return 0


# -- parser -------------------------------------------------------------------


def _add_train_options(p, epochs_dest: str):
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--run", required=True, help="run directory for artifacts")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--epochs", type=int, dest=epochs_dest, help="epoch count override")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--t-max", type=int, dest="t_max")
    p.add_argument("--resume", action="store_true", help="continue from the saved checkpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capgan",
        description="Conditional-GAN audio captioning: data, training, decoding, metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="create or import a dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--synthetic", action="store_true", help="generate a synthetic corpus (default)")
    p.add_argument("--import-train", help="existing train manifest to import")
    p.add_argument("--import-eval", help="existing evaluation manifest to import")
    p.add_argument("--seed", type=int)
    p.add_argument("--clips", type=int, default=60)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--feat-dim", type=int, default=64, dest="feat_dim")
    p.add_argument("--eval-fraction", type=float, default=0.25, dest="eval_fraction")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("pretrain", help="MLE pretraining of the caption generator")
    _add_train_options(p, "mle_epochs")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("pretrain-d", help="pretrain the discriminator")
    _add_train_options(p, "d_pretrain_epochs")
    p.add_argument("--generator", help="generator checkpoint (default: run dir MLE final)")
    p.set_defaults(func=cmd_pretrain_d)

    p = sub.add_parser("pretrain-se", help="pretrain the semantic evaluator")
    _add_train_options(p, "se_pretrain_epochs")
    p.set_defaults(func=cmd_pretrain_se)

    p = sub.add_parser("train-gan", help="adversarial training with self-critical updates")
    _add_train_options(p, "adversarial_epochs")
    p.add_argument("--lambda", type=float, dest="lam", help="reward mixing weight")
    p.add_argument(
        "--lambda-sweep", nargs="?", const=LAMBDA_SWEEP_DEFAULT, dest="lambda_sweep",
        help=f"comma-separated lambdas, one run per value (default {LAMBDA_SWEEP_DEFAULT})",
    )
    p.add_argument("--ablation", choices=("nd", "se", "le"))
    p.add_argument("--generator", help="generator checkpoint")
    p.add_argument("--discriminator", help="discriminator checkpoint")
    p.add_argument("--semantic", help="semantic evaluator checkpoint")
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("generate", help="decode captions for a split")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--checkpoint", help="generator checkpoint (default: run dir MLE final)")
    p.add_argument("--split", choices=("train", "evaluation"), default="evaluation")
    p.add_argument("--mode", choices=("mle", "gan"), default="gan")
    p.add_argument("-n", "--n", type=int, default=5, help="captions per clip")
    p.add_argument("--beam-size", type=int, default=5, dest="beam_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output JSONL path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="accuracy and diversity metrics for generated captions")
    p.add_argument("--captions", required=True, help="JSONL from the generate command")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "evaluation"), default="evaluation")
    p.add_argument("--out-json", dest="out_json", help="write the metric report as JSON")
    p.add_argument("--per-clip-csv", dest="per_clip_csv", help="write per-clip metrics as CSV")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: category={exc.category}: {exc}", file=sys.stderr)
        return 2
    except CorpusError as exc:
        print(f"error: category=corpus: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"error: category=checkpoint: {exc}", file=sys.stderr)
        return 4
    except TrainingDiverged as exc:
        print(f"error: category=diverged: {exc}", file=sys.stderr)
        return 5
    except FileNotFoundError as exc:
        print(f"error: category=usage: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
