"""Evaluation: BLEU authenticity, sample-diversity NLL, a downstream
transformer classifier, the augmentation-accuracy protocol, and the paired t-test."""
from __future__ import annotations

import collections
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from scipy import stats
from torch import nn
from torch.nn import functional as F

from .corpus import PAD_ID, Dataset, LabeledSentence, Vocabulary, decode, make_batch, sample_batch
from .generator import GenerationContext, Generator
from .layers import SinusoidalPositionalEncoding, encoder_stack, init_small, run_encoder
from .seeding import derive_seed, numpy_rng, torch_generator
from .training import TrainingDiverged, sample_context

TokenList = Sequence[str]


# --- BLEU ---------------------------------------------------------------------


@dataclass
class BleuConfig:
    max_n: int
    references: Sequence[TokenList]

    def validate(self) -> None:
        if self.max_n not in (2, 3):
            raise ValueError("max_n must be 2 or 3")
        if not self.references:
            raise ValueError("reference corpus must be non-empty")


def _ngram_counts(tokens: TokenList, n: int) -> collections.Counter:
    return collections.Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _pooled_max_counts(references: Sequence[TokenList], max_n: int) -> list[dict]:
    """Per order n, the max count of each n-gram over all references (clip limits)."""
    pooled = []
    for n in range(1, max_n + 1):
        limits: dict = {}
        for ref in references:
            for gram, count in _ngram_counts(ref, n).items():
                if count > limits.get(gram, 0):
                    limits[gram] = count
        pooled.append(limits)
    return pooled


def sentence_bleu(hypothesis: TokenList, config: BleuConfig) -> float:
    """Geometric mean of clipped n-gram precisions times the brevity penalty.

    Orders with zero matches get add-one smoothing on numerator and denominator.
    An empty hypothesis scores 0.
    """
    config.validate()
    return _sentence_bleu(
        list(hypothesis),
        _pooled_max_counts(config.references, config.max_n),
        [len(r) for r in config.references],
        config.max_n,
    )


def _sentence_bleu(hyp: list, limits: list[dict], ref_lengths: list[int], max_n: int) -> float:
    c = len(hyp)
    if c == 0:
        return 0.0
    log_precision = 0.0
    for n in range(1, max_n + 1):
        counts = _ngram_counts(hyp, n)
        total = sum(counts.values())
        matched = sum(min(cnt, limits[n - 1].get(gram, 0)) for gram, cnt in counts.items())
        if matched == 0:
            matched, total = matched + 1, total + 1
        log_precision += math.log(matched / total)
    r = min(ref_lengths, key=lambda length: (abs(length - c), length))
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(log_precision / max_n)


def bleu_n(hypotheses: Sequence[TokenList], config: BleuConfig) -> float:
    """Mean sentence-level score against the pooled reference corpus."""
    config.validate()
    if not hypotheses:
        raise ValueError("hypotheses must be non-empty")
    limits = _pooled_max_counts(config.references, config.max_n)
    ref_lengths = [len(r) for r in config.references]
    return sum(
        _sentence_bleu(list(h), limits, ref_lengths, config.max_n) for h in hypotheses
    ) / len(hypotheses)


# --- diversity ----------------------------------------------------------------


def nll_div(
    gen,
    contexts: Sequence[GenerationContext],
    n_samples: int,
    generator: torch.Generator | None = None,
) -> float:
    """Mean per-token negative log-likelihood of the model's own sampled sentences.

    Tokens emitted as PAD are excluded from both the sum and the count; higher
    values mean more diverse output.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not contexts:
        raise ValueError("contexts must be non-empty")
    values: list[float] = []
    while len(values) < n_samples:
        for ctx in contexts:
            ids, log_probs = gen.generate_discrete(
                ctx, mode="sample", generator=generator, return_log_probs=True
            )
            mask = ids.ne(PAD_ID)
            counts = mask.sum(dim=1).clamp(min=1)
            per_sentence = -(log_probs * mask.to(log_probs.dtype)).sum(dim=1) / counts
            values.extend(per_sentence.tolist())
            if len(values) >= n_samples:
                break
    return float(np.mean(values[:n_samples]))


def make_eval_contexts(
    dataset: Dataset,
    noise_dim: int,
    n_contexts: int,
    batch_size: int,
    seed: int,
    split: str = "train",
) -> list[GenerationContext]:
    """Seeded conditioning batches for metric computation."""
    rng = numpy_rng(seed, f"eval-contexts/{split}")
    noise_gen = torch_generator(seed, f"eval-contexts/{split}/noise")
    return [
        sample_context(dataset, split, batch_size, noise_dim, rng, noise_gen)
        for _ in range(n_contexts)
    ]


# --- downstream classifier ------------------------------------------------------


@dataclass
class ClassifierConfig:
    embed_dim: int = 64
    n_layers: int = 2
    n_attn_heads: int = 2
    attn_hidden: int = 64
    ffn_hidden: int = 256
    learning_rate: float = 1e-4
    batch_size: int = 32
    train_steps: int = 500

    def validate(self) -> None:
        if any(d < 1 for d in (self.embed_dim, self.n_layers, self.n_attn_heads,
                               self.attn_hidden, self.ffn_hidden, self.batch_size, self.train_steps)):
            raise ValueError("all classifier dimensions and counts must be >= 1")
        if self.attn_hidden != self.embed_dim:
            raise ValueError("attn_hidden must equal embed_dim")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class TextClassifier(nn.Module):
    """Embedding, encoder layers, max-pool over non-PAD positions, linear head."""

    def __init__(self, vocab_size: int, n_categories: int, max_len: int, config: ClassifierConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.max_len = max_len
        self.embedding = nn.Embedding(vocab_size, config.embed_dim)
        self.positional = SinusoidalPositionalEncoding(config.embed_dim, max_len)
        self.layers = encoder_stack(config.embed_dim, config.n_attn_heads, config.ffn_hidden, config.n_layers)
        self.head = nn.Linear(config.embed_dim, n_categories)
        init_small(self)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        pad_mask = ids.eq(PAD_ID)
        h = self.positional(self.embedding(ids))
        h = run_encoder(self.layers, h, pad_mask)
        h = h.masked_fill(pad_mask.unsqueeze(-1), float("-inf"))
        return self.head(h.max(dim=1).values)


@dataclass
class TrainedClassifier:
    model: TextClassifier
    vocab: Vocabulary = field(repr=False)
    n_categories: int = 2

    def predict(self, sentences: Sequence[LabeledSentence]) -> torch.Tensor:
        batch = make_batch(list(sentences), self.vocab, self.model.max_len)
        with torch.no_grad():
            return self.model(batch.ids).argmax(dim=-1)

    def accuracy(self, sentences: Sequence[LabeledSentence]) -> float:
        if not sentences:
            raise ValueError("cannot score an empty split")
        predicted = self.predict(sentences)
        actual = torch.tensor([s.category for s in sentences])
        return float(predicted.eq(actual).float().mean())

    def checker(self) -> Callable[[TokenList], int]:
        """Category oracle over raw token lists, for fidelity measurement."""

        def check(tokens: TokenList) -> int:
            sentence = LabeledSentence(tokens=tuple(tokens), category=0)
            return int(self.predict([sentence])[0])

        return check


def train_classifier(
    train: Sequence[LabeledSentence],
    vocab: Vocabulary,
    max_len: int,
    n_categories: int,
    config: ClassifierConfig,
    seed: int = 0,
) -> TrainedClassifier:
    """Cross-entropy training over uniformly sampled batches; deterministic per seed."""
    if n_categories < 2:
        raise ValueError("classification needs at least 2 categories")
    if not train:
        raise ValueError("empty training set")
    config.validate()
    torch.manual_seed(derive_seed(seed, "classifier/init"))
    model = TextClassifier(vocab.size, n_categories, max_len, config)
    rng = numpy_rng(seed, "classifier/data")
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    train = list(train)
    for step in range(config.train_steps):
        idx = rng.integers(0, len(train), size=config.batch_size)
        batch = make_batch([train[i] for i in idx], vocab, max_len)
        logits = model(batch.ids)
        loss = F.cross_entropy(logits, batch.categories)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"classifier loss became non-finite at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return TrainedClassifier(model=model, vocab=vocab, n_categories=n_categories)


# --- paired t-test ---------------------------------------------------------------


@dataclass
class TTestResult:
    t_statistic: float
    p_value: float
    significant: bool
    degenerate: bool
    df: int


def paired_t_test(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> TTestResult:
    """Two-sided paired t-test on d = a - b.

    Zero-variance differences are degenerate: zero mean gives t=0, p=1;
    nonzero mean is reported as significant with p -> 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("paired samples must be equal-length vectors of at least 2 runs")
    d = a - b
    df = len(d) - 1
    sd = float(d.std(ddof=1))
    mean = float(d.mean())
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, False, True, df)
        return TTestResult(math.copysign(math.inf, mean), 0.0, True, True, df)
    t = mean / (sd / math.sqrt(len(d)))
    p = 2.0 * float(stats.t.sf(abs(t), df))
    return TTestResult(t, p, p < alpha, False, df)


# --- fidelity and augmentation ---------------------------------------------------


def category_fidelity(
    generated: Sequence[tuple[int, TokenList]],
    checker: Callable[[TokenList], int],
) -> float:
    """Fraction of generated sentences whose checked category matches the request."""
    if not generated:
        raise ValueError("no generated sentences to check")
    hits = sum(1 for requested, tokens in generated if checker(tokens) == requested)
    return hits / len(generated)


class GeneratorSynthesizer:
    """Adapter from the trained generator to labeled token-list synthesis.

    Conditions on sentences sampled from the training split, requests the given
    category, decodes discrete samples, and skips empty decodes.
    """

    def __init__(self, gen: Generator, dataset: Dataset, mode: str = "sample", batch_size: int = 64):
        self.gen = gen
        self.dataset = dataset
        self.mode = mode
        self.batch_size = batch_size

    def __call__(self, category: int, n: int, rng: np.random.Generator) -> list[list[str]]:
        if not 0 <= category < self.dataset.n_categories:
            raise ValueError(f"category {category} out of range")
        noise_gen = torch.Generator()
        noise_gen.manual_seed(int(rng.integers(0, 2**63 - 1)))
        out: list[list[str]] = []
        for _ in range(50):
            if len(out) >= n:
                break
            size = min(self.batch_size, max(n - len(out), 1))
            src = sample_batch(self.dataset, "train", size, rng)
            ctx = GenerationContext(
                src=src,
                categories=torch.full((size,), category, dtype=torch.long),
                noise=torch.randn(size, self.gen.config.noise_dim, generator=noise_gen),
            )
            ids = self.gen.generate_discrete(ctx, mode=self.mode, generator=noise_gen)
            for row in ids:
                tokens = decode(row.tolist(), self.dataset.vocab)
                if tokens:
                    out.append(tokens)
        if len(out) < n:
            raise RuntimeError("generator kept producing empty sentences")
        return out[:n]


@dataclass
class AugmentationReport:
    baseline_accuracies: list[float]
    augmented_accuracies: list[float]
    mean_delta: float
    t_statistic: float
    p_value: float
    significant: bool
    degenerate: bool

    @property
    def runs(self) -> int:
        return len(self.baseline_accuracies)


def augmentation_eval(
    dataset: Dataset,
    synthesizer: Callable[[int, int, np.random.Generator], list[list[str]]],
    n_synth_per_class: int,
    runs: int = 10,
    config: ClassifierConfig | None = None,
    seed: int = 0,
) -> AugmentationReport:
    """Paired comparison of test accuracy with and without synthetic sentences.

    Each run trains two classifiers from the same seed: one on the real training
    split, one on the real split plus `n_synth_per_class` generated sentences per
    category, and scores both on the test split.
    """
    config = config or ClassifierConfig()
    baseline, augmented = [], []
    for run in range(runs):
        synth_rng = numpy_rng(seed, f"augment/run{run}/synth")
        synthetic = [
            LabeledSentence(tokens=tuple(tokens), category=category)
            for category in range(dataset.n_categories)
            for tokens in synthesizer(category, n_synth_per_class, synth_rng)
        ]
        clf_seed = derive_seed(seed, f"augment/run{run}/classifier")
        base = train_classifier(
            dataset.train, dataset.vocab, dataset.max_len, dataset.n_categories, config, seed=clf_seed
        )
        aug = train_classifier(
            list(dataset.train) + synthetic, dataset.vocab, dataset.max_len,
            dataset.n_categories, config, seed=clf_seed,
        )
        baseline.append(base.accuracy(dataset.test))
        augmented.append(aug.accuracy(dataset.test))
    test = paired_t_test(augmented, baseline)
    return AugmentationReport(
        baseline_accuracies=baseline,
        augmented_accuracies=augmented,
        mean_delta=float(np.mean(augmented) - np.mean(baseline)),
        t_statistic=test.t_statistic,
        p_value=test.p_value,
        significant=test.significant,
        degenerate=test.degenerate,
    )
