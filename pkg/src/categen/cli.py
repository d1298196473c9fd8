"""Command-line experiment surface: preprocess, pretrain, train, generate, evaluate, augment."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from . import evaluation
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import CorpusError, Dataset, Vocabulary, decode, encode, load_dataset, make_batch
from .corpus import LabeledSentence
from .generator import GenerationContext, Generator
from .discriminator import Discriminator
from .seeding import derive_seed, numpy_rng, torch_generator
from .training import (
    TrainingDiverged,
    adversarial_train,
    load_models,
    pretrain_discriminator,
    pretrain_generator,
    save_train_state,
)

REPORT_VERSION = "categen-report v1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        raise UsageError(f"{self.prog}: {message}")


def _load(args) -> ExperimentConfig:
    config = load_config(args.config, overrides=args.set or [])
    torch.set_num_threads(config.threads)
    return config


def _dataset(config: ExperimentConfig) -> Dataset:
    return load_dataset(
        config.data.train, config.data.valid, config.data.test,
        max_len=config.data.max_len, min_freq=config.data.min_freq,
    )


def _preprocess_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / "preprocess"


def _check_preprocessed(config: ExperimentConfig, dataset: Dataset) -> None:
    vocab_path = _preprocess_dir(config) / "vocab.txt"
    if not vocab_path.exists():
        raise UsageError(f"missing {vocab_path}; run `categen preprocess` first")
    stored = Vocabulary.load(vocab_path)
    if stored.id_to_token != dataset.vocab.id_to_token:
        raise UsageError(f"{vocab_path} no longer matches the configured corpus; rerun preprocess")


def _build_models(config: ExperimentConfig, dataset: Dataset) -> tuple[Generator, Discriminator]:
    torch.manual_seed(derive_seed(config.seed, "init/generator"))
    gen = Generator(config.generator_config(dataset.vocab.size, dataset.n_categories))
    torch.manual_seed(derive_seed(config.seed, "init/discriminator"))
    disc = Discriminator(config.discriminator_config(dataset.vocab.size, dataset.n_categories))
    return gen, disc


def cmd_preprocess(args) -> int:
    config = _load(args)
    dataset = _dataset(config)
    out = _preprocess_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    dataset.vocab.save(out / "vocab.txt")
    for name in ("train", "valid", "test"):
        lines = []
        for sentence in dataset.split(name):
            ids = encode(sentence.tokens, dataset.vocab, dataset.max_len)
            lines.append(f"{sentence.category}\t{' '.join(map(str, ids))}")
        (out / f"{name}.ids.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "version": 1,
        "vocab_size": dataset.vocab.size,
        "n_categories": dataset.n_categories,
        "max_len": dataset.max_len,
        "min_freq": config.data.min_freq,
        "split_sizes": {name: len(dataset.split(name)) for name in ("train", "valid", "test")},
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"preprocessed corpus: V={dataset.vocab.size}, k={dataset.n_categories} -> {out}")
    return 0


def cmd_pretrain(args) -> int:
    config = _load(args)
    dataset = _dataset(config)
    _check_preprocessed(config, dataset)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    gen, disc = _build_models(config, dataset)
    training = config.training_config()
    schedule = config.schedule()

    g_lines, d_lines = [], []
    g_curve = pretrain_generator(gen, dataset, training, log=g_lines.append)
    d_curve = pretrain_discriminator(disc, gen, dataset, training, schedule, log=d_lines.append)
    (out / "pretrain_g_loss.tsv").write_text(
        "".join(f"{i}\t{v:.8f}\n" for i, v in enumerate(g_curve)), encoding="utf-8")
    (out / "pretrain_d_loss.tsv").write_text(
        "".join(f"{i}\t{v:.8f}\n" for i, v in enumerate(d_curve)), encoding="utf-8")
    save_train_state(out / "pretrained.ckpt", gen, disc, iteration=0, extra_meta={"stage": "pretrained"})
    print(f"pretraining done: final MLE loss {g_curve[-1]:.4f}, D loss {d_curve[-1]:.4f}")
    return 0


def _plateau_metric(config: ExperimentConfig, dataset: Dataset, noise_dim: int):
    if config.training.early_stop_every <= 0:
        return None
    contexts = evaluation.make_eval_contexts(
        dataset, noise_dim, n_contexts=4, batch_size=32, seed=config.seed, split="valid"
    )

    def metric(gen: Generator) -> float:
        return evaluation.nll_div(
            gen, contexts, n_samples=128,
            generator=torch_generator(config.seed, "early-stop/sampling"),
        )

    return metric


def cmd_train(args) -> int:
    config = _load(args)
    dataset = _dataset(config)
    out = Path(config.output_dir)
    pretrained = Path(args.checkpoint) if args.checkpoint else out / "pretrained.ckpt"
    if not pretrained.exists():
        raise UsageError(f"missing checkpoint {pretrained}; run `categen pretrain` first")
    gen, disc, _ = load_models(pretrained)
    training = config.training_config()
    checkpoint_dir = out / "checkpoints"
    checkpoint_dir.mkdir(parents=True, exist_ok=True)

    log_lines = ["iteration\tphase\tl_adv_g\tl_cls_g\tl_g\tl_adv_d\tl_cls_d\tl_d\tbeta"]
    result = adversarial_train(
        gen, disc, dataset, training,
        weights=config.weights(),
        schedule=config.schedule(),
        log_writer=log_lines.append,
        checkpoint_dir=checkpoint_dir,
        resume=args.resume,
        plateau_metric=_plateau_metric(config, dataset, gen.config.noise_dim),
    )
    (out / "train_log.tsv").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    save_train_state(out / "final.ckpt", gen, disc, iteration=training.adversarial_iterations,
                     extra_meta={"stage": "adversarial", "stopped_early": result.stopped_early})
    print(f"adversarial training done: {result.iterations_run} iterations"
          + (" (stopped early)" if result.stopped_early else ""))
    return 0


def _read_source_file(path: str, count: int) -> list[list[str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    sentences = [line.split() for line in lines]
    if len(sentences) < count:
        raise UsageError(f"{path} has {len(sentences)} sentences but {count} were requested")
    return sentences[:count]


def cmd_generate(args) -> int:
    config = _load(args)
    dataset = _dataset(config)
    checkpoint = Path(args.checkpoint) if args.checkpoint else Path(config.output_dir) / "final.ckpt"
    if not checkpoint.exists():
        raise UsageError(f"missing checkpoint {checkpoint}")
    gen, _, _ = load_models(checkpoint)
    if not 0 <= args.category < dataset.n_categories:
        raise UsageError(f"category {args.category} out of range [0, {dataset.n_categories})")
    if args.count < 1:
        raise UsageError("count must be >= 1")

    rng = numpy_rng(config.seed, "generate/source")
    noise_gen = torch_generator(config.seed, "generate/noise")
    sources = _read_source_file(args.source_file, args.count) if args.source_file else None

    lines = []
    position = 0
    while position < args.count:
        size = min(64, args.count - position)
        if sources is None:
            from .corpus import sample_batch
            src = sample_batch(dataset, "train", size, rng)
        else:
            chunk = [LabeledSentence(tokens=tuple(toks), category=0)
                     for toks in sources[position : position + size]]
            src = make_batch(chunk, dataset.vocab, dataset.max_len)
        ctx = GenerationContext(
            src=src,
            categories=torch.full((size,), args.category, dtype=torch.long),
            noise=torch.randn(size, gen.config.noise_dim, generator=noise_gen),
        )
        ids = gen.generate_discrete(ctx, mode=args.mode, generator=noise_gen)
        for row in ids:
            lines.append(f"{args.category}\t{' '.join(decode(row.tolist(), dataset.vocab))}")
        position += size

    out_path = Path(args.out) if args.out else Path(config.output_dir) / "generated.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} sentences to {out_path}")
    return 0


def _synthesize_labeled(config, dataset, gen) -> list[tuple[int, list[str]]]:
    synthesizer = evaluation.GeneratorSynthesizer(gen, dataset, mode=config.evaluation.generation_mode)
    rng = numpy_rng(config.seed, "evaluate/synthesis")
    pairs = []
    for category in range(dataset.n_categories):
        for tokens in synthesizer(category, config.evaluation.n_samples_per_category, rng):
            pairs.append((category, tokens))
    return pairs


def cmd_evaluate(args) -> int:
    config = _load(args)
    dataset = _dataset(config)
    checkpoint = Path(args.checkpoint) if args.checkpoint else Path(config.output_dir) / "final.ckpt"
    if not checkpoint.exists():
        raise UsageError(f"missing checkpoint {checkpoint}")
    gen, _, _ = load_models(checkpoint)

    pairs = _synthesize_labeled(config, dataset, gen)
    hypotheses = [tokens for _, tokens in pairs]
    references = [list(s.tokens) for s in dataset.test]
    bleu2 = evaluation.bleu_n(hypotheses, evaluation.BleuConfig(max_n=2, references=references))
    bleu3 = evaluation.bleu_n(hypotheses, evaluation.BleuConfig(max_n=3, references=references))

    contexts = evaluation.make_eval_contexts(
        dataset, gen.config.noise_dim, config.evaluation.nll_contexts,
        config.evaluation.nll_batch_size, config.seed,
    )
    nll = evaluation.nll_div(
        gen, contexts, config.evaluation.nll_samples,
        generator=torch_generator(config.seed, "evaluate/nll"),
    )

    checker_clf = evaluation.train_classifier(
        dataset.train, dataset.vocab, dataset.max_len, dataset.n_categories,
        config.classifier_config(), seed=derive_seed(config.seed, "evaluate/checker"),
    )
    fidelity = evaluation.category_fidelity(pairs, checker_clf.checker())

    report = [
        REPORT_VERSION,
        f"bleu2\t{bleu2:.6f}",
        f"bleu3\t{bleu3:.6f}",
        f"nll_div\t{nll:.6f}",
        f"category_fidelity\t{fidelity:.6f}",
        f"n_samples_per_category\t{config.evaluation.n_samples_per_category}",
        f"seed\t{config.seed}",
    ]
    out_path = Path(config.output_dir) / "evaluation_report.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(report) + "\n", encoding="utf-8")
    print("\n".join(report))
    return 0


def cmd_augment(args) -> int:
    config = _load(args)
    dataset = _dataset(config)
    checkpoint = Path(args.checkpoint) if args.checkpoint else Path(config.output_dir) / "final.ckpt"
    if not checkpoint.exists():
        raise UsageError(f"missing checkpoint {checkpoint}")
    gen, _, _ = load_models(checkpoint)

    synthesizer = evaluation.GeneratorSynthesizer(gen, dataset, mode=config.evaluation.generation_mode)
    report = evaluation.augmentation_eval(
        dataset, synthesizer, config.augment.n_synth_per_class,
        runs=config.augment.runs, config=config.classifier_config(), seed=config.seed,
    )
    lines = [
        REPORT_VERSION,
        "baseline_accuracies\t" + ",".join(f"{v:.6f}" for v in report.baseline_accuracies),
        "augmented_accuracies\t" + ",".join(f"{v:.6f}" for v in report.augmented_accuracies),
        f"mean_delta\t{report.mean_delta:.6f}",
        f"t_statistic\t{report.t_statistic:.6f}",
        f"p_value\t{report.p_value:.6f}",
        f"significant\t{str(report.significant).lower()}",
        f"degenerate\t{str(report.degenerate).lower()}",
        f"runs\t{report.runs}",
        f"seed\t{config.seed}",
    ]
    out_path = Path(config.output_dir) / "augment_report.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="categen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. training.batch_size=16")

    p = sub.add_parser("preprocess", help="build vocabulary and encoded split artifacts")
    common(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("pretrain", help="MLE-pretrain the generator, then the discriminator")
    common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="adversarial training from the pretrained checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="starting checkpoint (default: <output_dir>/pretrained.ckpt)")
    p.add_argument("--resume", help="trainer checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="emit conditioned sentences for one category")
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint (default: <output_dir>/final.ckpt)")
    p.add_argument("--category", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--mode", choices=("sample", "argmax"), default="sample")
    p.add_argument("--source-file", help="tokenized sentences to condition on, one per line")
    p.add_argument("--out", help="output path (default: <output_dir>/generated.txt)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="BLEU, diversity NLL and category fidelity report")
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint (default: <output_dir>/final.ckpt)")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("augment", help="train/test augmentation accuracy protocol")
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint (default: <output_dir>/final.ckpt)")
    p.set_defaults(fn=cmd_augment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (UsageError, ConfigError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, RuntimeError, ValueError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
