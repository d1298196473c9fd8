"""Loss functions, MLE/classification pre-training, and the adversarial loop
with label-flip stabilization."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import torch
from torch.nn import functional as F

from . import checkpoint as ckpt
from .corpus import PAD_ID, Batch, Dataset, sample_batch
from .discriminator import Discriminator, gradient_penalty
from .generator import GenerationContext, Generator, TemperatureSchedule
from .seeding import numpy_rng, torch_generator

PROB_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the offending values."""

    def __init__(self, message: str, report: "LossReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class LossWeights:
    adversarial: float = 1.0
    classification: float = 1.0

    def validate(self) -> None:
        if self.adversarial < 0 or self.classification < 0:
            raise ValueError("loss weights must be >= 0")
        if self.adversarial == 0 and self.classification == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class TrainingConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    g_steps: int = 1
    d_steps: int = 1
    pretrain_epochs_g: int = 50
    pretrain_epochs_d: int = 5
    adversarial_iterations: int = 2000
    label_flip_prob: float = 0.05
    checkpoint_every: int = 500
    early_stop_every: int = 0        # outer iterations between metric evaluations; 0 disables
    early_stop_patience: int = 3
    early_stop_min_delta: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        counts = (
            self.batch_size, self.g_steps, self.d_steps, self.pretrain_epochs_g,
            self.pretrain_epochs_d, self.adversarial_iterations, self.checkpoint_every,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all training counts must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.label_flip_prob < 0.5):
            raise ValueError("label_flip_prob must lie in [0, 0.5)")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.early_stop_every < 0 or self.early_stop_patience < 1:
            raise ValueError("invalid early-stop settings")


@dataclass
class LossReport:
    """All six loss terms for one update step; totals are the weighted sums."""

    l_adv_g: float
    l_cls_g: float
    l_g: float
    l_adv_d: float
    l_cls_d: float
    l_d: float

    @classmethod
    def compose(cls, l_adv_g, l_cls_g, l_adv_d, l_cls_d, weights: LossWeights) -> "LossReport":
        return cls(
            l_adv_g=l_adv_g,
            l_cls_g=l_cls_g,
            l_g=weights.adversarial * l_adv_g + weights.classification * l_cls_g,
            l_adv_d=l_adv_d,
            l_cls_d=l_cls_d,
            l_d=weights.adversarial * l_adv_d + weights.classification * l_cls_d,
        )

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in
                   (self.l_adv_g, self.l_cls_g, self.l_g, self.l_adv_d, self.l_cls_d, self.l_d))


class HistoryEntry(NamedTuple):
    iteration: int
    phase: str          # "g" or "d"
    report: LossReport
    beta: float


# --- loss formulas -----------------------------------------------------------


def _as_vector(values) -> torch.Tensor:
    t = torch.as_tensor(values)
    if t.numel() == 0:
        raise ValueError("empty batch")
    return t


def adv_loss_g(d_real_fake, d_real_real) -> torch.Tensor:
    """-mean(D_r(fake)) + mean(D_r(real)); the real term carries no generator gradient."""
    fake, real = _as_vector(d_real_fake), _as_vector(d_real_real)
    return -fake.mean() + real.mean()


def adv_loss_d(d_real_fake, d_real_real) -> torch.Tensor:
    """mean(D_r(fake)) - mean(D_r(real)); exact negation of the generator term."""
    fake, real = _as_vector(d_real_fake), _as_vector(d_real_real)
    return fake.mean() - real.mean()


def _class_nll(class_probs, categories) -> torch.Tensor:
    probs = torch.as_tensor(class_probs)
    cats = torch.as_tensor(categories, dtype=torch.long)
    if probs.numel() == 0:
        raise ValueError("empty batch")
    picked = probs.gather(-1, cats.unsqueeze(-1)).squeeze(-1)
    return -picked.clamp(min=PROB_FLOOR).log().mean()


def cls_loss_g(d_cls_fake, requested_categories) -> torch.Tensor:
    """Mean negative log-probability of the requested category on generated rows."""
    return _class_nll(d_cls_fake, requested_categories)


def cls_loss_d(d_cls_real, true_categories) -> torch.Tensor:
    """Mean negative log-probability of the ground-truth category on real rows."""
    return _class_nll(d_cls_real, true_categories)


def total_loss_g(l_adv, l_cls, weights: LossWeights):
    weights.validate()
    return weights.adversarial * l_adv + weights.classification * l_cls


def total_loss_d(l_adv, l_cls, weights: LossWeights):
    weights.validate()
    return weights.adversarial * l_adv + weights.classification * l_cls


class FlippedLabels(NamedTuple):
    real: torch.Tensor
    fake: torch.Tensor
    real_mask: torch.Tensor
    fake_mask: torch.Tensor


def flip_labels(
    real_targets,
    fake_targets,
    p: float,
    rng: np.random.Generator,
    masks: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> FlippedLabels:
    """Independently swap each example's real/fake target with probability p.

    Used only for the adversarial authenticity objective of the discriminator,
    never for the classification losses.
    """
    if not (0 <= p < 0.5):
        raise ValueError("flip probability must lie in [0, 0.5)")
    real = torch.as_tensor(real_targets, dtype=torch.float32)
    fake = torch.as_tensor(fake_targets, dtype=torch.float32)
    if masks is None:
        real_mask = torch.from_numpy(rng.random(real.shape[0]) < p)
        fake_mask = torch.from_numpy(rng.random(fake.shape[0]) < p)
    else:
        real_mask, fake_mask = masks
    return FlippedLabels(
        real=torch.where(real_mask, 1.0 - real, real),
        fake=torch.where(fake_mask, 1.0 - fake, fake),
        real_mask=real_mask,
        fake_mask=fake_mask,
    )


def _signed_wasserstein(d_real_scores, d_fake_scores, real_targets, fake_targets) -> torch.Tensor:
    """Difference-of-means objective with per-example real/fake targets.

    Target 0 (fake) contributes +score, target 1 (real) contributes -score, so
    all-default targets reproduce the plain discriminator adversarial loss.
    """
    fake_sign = 1.0 - 2.0 * fake_targets
    real_sign = 1.0 - 2.0 * real_targets
    return (fake_sign * d_fake_scores).mean() + (real_sign * d_real_scores).mean()


# --- pre-training ------------------------------------------------------------


def mle_loss(gen: Generator, batch: Batch, noise: torch.Tensor) -> torch.Tensor:
    """PAD-masked next-word cross-entropy with self-reconstruction conditioning."""
    logits = gen.teacher_forced_logits(batch.ids, batch.ids, batch.categories, noise)
    targets = batch.ids[:, 1:]
    mask = targets.ne(PAD_ID)
    ce = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none")
    return (ce * mask.reshape(-1).to(ce.dtype)).sum() / mask.sum().clamp(min=1)


def _steps_per_epoch(dataset: Dataset, batch_size: int) -> int:
    return max(1, math.ceil(len(dataset.train) / batch_size))


def _make_adam(module, config: TrainingConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        module.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
    )


def pretrain_generator(
    gen: Generator,
    dataset: Dataset,
    config: TrainingConfig,
    log: Callable[[str], None] | None = None,
) -> list[float]:
    """Teacher-forced MLE over the training split; returns per-epoch mean losses."""
    config.validate()
    rng = numpy_rng(config.seed, "pretrain-g/data")
    noise_gen = torch_generator(config.seed, "pretrain-g/noise")
    optimizer = _make_adam(gen, config)
    steps = _steps_per_epoch(dataset, config.batch_size)
    curve = []
    for epoch in range(config.pretrain_epochs_g):
        total = 0.0
        for _ in range(steps):
            batch = sample_batch(dataset, "train", config.batch_size, rng)
            noise = torch.randn(batch.size, gen.config.noise_dim, generator=noise_gen)
            loss = mle_loss(gen, batch, noise)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"MLE loss became non-finite at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss)
        curve.append(total / steps)
        if log:
            log(f"pretrain-g epoch {epoch} loss {curve[-1]:.6f}")
    return curve


def pretrain_discriminator(
    disc: Discriminator,
    gen: Generator,
    dataset: Dataset,
    config: TrainingConfig,
    schedule: TemperatureSchedule | None = None,
    log: Callable[[str], None] | None = None,
) -> list[float]:
    """Real/fake binary cross-entropy plus category classification on real rows."""
    config.validate()
    schedule = schedule or TemperatureSchedule()
    beta = schedule.beta_at(0)
    rng = numpy_rng(config.seed, "pretrain-d/data")
    noise_gen = torch_generator(config.seed, "pretrain-d/noise")
    optimizer = _make_adam(disc, config)
    vocab_size = disc.config.vocab_size
    steps = _steps_per_epoch(dataset, config.batch_size)
    curve = []
    for epoch in range(config.pretrain_epochs_d):
        total = 0.0
        for _ in range(steps):
            real = sample_batch(dataset, "train", config.batch_size, rng)
            ctx = sample_context(dataset, "train", config.batch_size, gen.config.noise_dim, rng, noise_gen)
            with torch.no_grad():
                fake_rows = gen.generate_relaxed(ctx, beta, generator=noise_gen)
            real_out = disc.discriminate(real.one_hot(vocab_size))
            fake_out = disc.discriminate(fake_rows)
            loss = (
                F.binary_cross_entropy(real_out.d_real, torch.ones_like(real_out.d_real))
                + F.binary_cross_entropy(fake_out.d_real, torch.zeros_like(fake_out.d_real))
                + cls_loss_d(real_out.d_cls, real.categories)
            )
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"discriminator pre-training loss non-finite at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss)
        curve.append(total / steps)
        if log:
            log(f"pretrain-d epoch {epoch} loss {curve[-1]:.6f}")
    return curve


def sample_context(
    dataset: Dataset,
    split: str,
    batch_size: int,
    noise_dim: int,
    rng: np.random.Generator,
    noise_gen: torch.Generator | None = None,
) -> GenerationContext:
    """Conditioned sentences from the split, uniform target categories, Gaussian noise."""
    src = sample_batch(dataset, split, batch_size, rng)
    categories = torch.from_numpy(
        rng.integers(0, dataset.n_categories, size=batch_size)
    ).long()
    noise = torch.randn(batch_size, noise_dim, generator=noise_gen)
    return GenerationContext(src=src, categories=categories, noise=noise)


# --- adversarial loop --------------------------------------------------------


@dataclass
class AdversarialResult:
    history: list[HistoryEntry]
    iterations_run: int
    stopped_early: bool = False


def _set_requires_grad(module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def _rng_meta(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {"kind": state["bit_generator"], "state": {k: str(v) for k, v in state["state"].items()}}


def _restore_rng(rng: np.random.Generator, meta: dict) -> None:
    state = rng.bit_generator.state
    if state["bit_generator"] != meta["kind"]:
        raise ValueError("checkpoint rng kind mismatch")
    state["state"] = {k: int(v) for k, v in meta["state"].items()}
    rng.bit_generator.state = state


def save_train_state(
    path: str | Path,
    gen: Generator,
    disc: Discriminator,
    opt_g: torch.optim.Optimizer | None = None,
    opt_d: torch.optim.Optimizer | None = None,
    np_rng: np.random.Generator | None = None,
    noise_gen: torch.Generator | None = None,
    iteration: int = 0,
    extra_meta: dict | None = None,
) -> None:
    arrays = {}
    arrays.update(ckpt.module_arrays(gen, "g"))
    arrays.update(ckpt.module_arrays(disc, "d"))
    if opt_g is not None:
        arrays.update(ckpt.optimizer_arrays(opt_g, "opt_g"))
    if opt_d is not None:
        arrays.update(ckpt.optimizer_arrays(opt_d, "opt_d"))
    if noise_gen is not None:
        arrays["rng/torch"] = noise_gen.get_state().numpy()
    meta = {
        "generator_config": asdict(gen.config),
        "discriminator_config": asdict(disc.config),
        "iteration": iteration,
    }
    if np_rng is not None:
        meta["numpy_rng"] = _rng_meta(np_rng)
    if extra_meta:
        meta.update(extra_meta)
    ckpt.save_archive(path, meta, arrays)


def load_models(path: str | Path) -> tuple[Generator, Discriminator, dict]:
    """Rebuild generator and discriminator from a checkpoint archive."""
    from .discriminator import DiscriminatorConfig
    from .generator import GeneratorConfig

    meta, arrays = ckpt.load_archive(path)
    gen = Generator(GeneratorConfig(**meta["generator_config"]))
    disc = Discriminator(DiscriminatorConfig(**meta["discriminator_config"]))
    ckpt.load_module_arrays(gen, arrays, "g")
    ckpt.load_module_arrays(disc, arrays, "d")
    return gen, disc, meta


def adversarial_train(
    gen: Generator,
    disc: Discriminator,
    dataset: Dataset,
    config: TrainingConfig,
    weights: LossWeights | None = None,
    schedule: TemperatureSchedule | None = None,
    log_writer: Callable[[str], None] | None = None,
    checkpoint_dir: str | Path | None = None,
    resume: str | Path | None = None,
    plateau_metric: Callable[[Generator], float] | None = None,
) -> AdversarialResult:
    """Alternating generator/discriminator updates on the weighted losses.

    Runs for a fixed iteration budget; optionally stops early when
    `plateau_metric` (higher is better) fails to improve for
    `early_stop_patience` consecutive evaluations. Label flipping perturbs the
    optimized discriminator authenticity objective only; reported losses are
    always the unflipped formulas.
    """
    config.validate()
    weights = weights or LossWeights()
    weights.validate()
    schedule = schedule or TemperatureSchedule(horizon=config.adversarial_iterations)
    schedule.validate()

    rng = numpy_rng(config.seed, "adversarial/data")
    noise_gen = torch_generator(config.seed, "adversarial/noise")
    opt_g = _make_adam(gen, config)
    opt_d = _make_adam(disc, config)
    start_iteration = 0
    if resume is not None:
        meta, arrays = ckpt.load_archive(resume)
        ckpt.load_module_arrays(gen, arrays, "g")
        ckpt.load_module_arrays(disc, arrays, "d")
        ckpt.load_optimizer_arrays(opt_g, arrays, "opt_g")
        ckpt.load_optimizer_arrays(opt_d, arrays, "opt_d")
        if "rng/torch" in arrays:
            noise_gen.set_state(torch.from_numpy(arrays["rng/torch"].copy()))
        if "numpy_rng" in meta:
            _restore_rng(rng, meta["numpy_rng"])
        start_iteration = int(meta["iteration"])

    vocab_size = disc.config.vocab_size
    history: list[HistoryEntry] = []
    best_metric = -math.inf
    stale_evals = 0
    stopped_early = False

    def emit(entry: HistoryEntry) -> None:
        history.append(entry)
        if log_writer:
            r = entry.report
            log_writer(
                f"{entry.iteration}\t{entry.phase}\t{r.l_adv_g:.8f}\t{r.l_cls_g:.8f}\t{r.l_g:.8f}"
                f"\t{r.l_adv_d:.8f}\t{r.l_cls_d:.8f}\t{r.l_d:.8f}\t{entry.beta:.6f}"
            )

    def checkpoint_now(iteration: int) -> None:
        if checkpoint_dir is None:
            return
        path = Path(checkpoint_dir) / f"checkpoint_{iteration:06d}.ckpt"
        save_train_state(path, gen, disc, opt_g, opt_d, rng, noise_gen, iteration)

    done = start_iteration
    for iteration in range(start_iteration, config.adversarial_iterations):
        beta = schedule.beta_at(iteration)

        _set_requires_grad(disc, False)
        for _ in range(config.g_steps):
            ctx = sample_context(dataset, "train", config.batch_size, gen.config.noise_dim, rng, noise_gen)
            real = sample_batch(dataset, "train", config.batch_size, rng)
            fake_rows = gen.generate_relaxed(ctx, beta, generator=noise_gen)
            fake_out = disc.discriminate(fake_rows)
            with torch.no_grad():
                real_out = disc.discriminate(real.one_hot(vocab_size))
            l_adv = adv_loss_g(fake_out.d_real, real_out.d_real)
            l_cls = cls_loss_g(fake_out.d_cls, ctx.categories)
            loss = total_loss_g(l_adv, l_cls, weights)
            report = LossReport.compose(
                float(l_adv), float(l_cls),
                float(adv_loss_d(fake_out.d_real.detach(), real_out.d_real)),
                float(cls_loss_d(real_out.d_cls, real.categories)),
                weights,
            )
            if not report.is_finite():
                raise TrainingDiverged(f"non-finite generator loss at iteration {iteration}: {report}", report)
            opt_g.zero_grad()
            loss.backward()
            opt_g.step()
            emit(HistoryEntry(iteration, "g", report, beta))
        _set_requires_grad(disc, True)

        _set_requires_grad(gen, False)
        for _ in range(config.d_steps):
            ctx = sample_context(dataset, "train", config.batch_size, gen.config.noise_dim, rng, noise_gen)
            real = sample_batch(dataset, "train", config.batch_size, rng)
            with torch.no_grad():
                fake_rows = gen.generate_relaxed(ctx, beta, generator=noise_gen)
            real_rows = real.one_hot(vocab_size)
            fake_out = disc.discriminate(fake_rows)
            real_out = disc.discriminate(real_rows)
            l_adv = adv_loss_d(fake_out.d_real, real_out.d_real)
            l_cls = cls_loss_d(real_out.d_cls, real.categories)
            flipped = flip_labels(
                torch.ones(real.size), torch.zeros(ctx.size), config.label_flip_prob, rng
            )
            l_adv_opt = _signed_wasserstein(real_out.d_real, fake_out.d_real, flipped.real, flipped.fake)
            loss = total_loss_d(l_adv_opt, l_cls, weights)
            if disc.config.gradient_penalty > 0:
                loss = loss + disc.config.gradient_penalty * gradient_penalty(
                    disc, real_rows, fake_rows, generator=noise_gen
                )
            report = LossReport.compose(
                float(adv_loss_g(fake_out.d_real, real_out.d_real)),
                float(cls_loss_g(fake_out.d_cls, ctx.categories)),
                float(l_adv), float(l_cls),
                weights,
            )
            if not report.is_finite():
                raise TrainingDiverged(f"non-finite discriminator loss at iteration {iteration}: {report}", report)
            opt_d.zero_grad()
            loss.backward()
            opt_d.step()
            emit(HistoryEntry(iteration, "d", report, beta))
        _set_requires_grad(gen, True)

        done = iteration + 1
        if config.checkpoint_every and done % config.checkpoint_every == 0:
            checkpoint_now(done)
        if plateau_metric is not None and config.early_stop_every and done % config.early_stop_every == 0:
            value = plateau_metric(gen)
            if value > best_metric + config.early_stop_min_delta:
                best_metric = value
                stale_evals = 0
            else:
                stale_evals += 1
                if stale_evals >= config.early_stop_patience:
                    stopped_early = True
                    break

    return AdversarialResult(
        history=history, iterations_run=done - start_iteration, stopped_early=stopped_early
    )
