"""Optimizer, learning-rate schedule, and the training loop."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import distill as distill_mod
from . import evaluation, frontend, rnnt
from .distill import DistillationConfig
from .frontend import AugmentPolicy, Utterance
from .model import Checkpoint, Model, ModelConfig, checkpoint_from_model, load_checkpoint, model_from_checkpoint

log = logging.getLogger(__name__)


class TrainError(Exception):
    pass


@dataclass
class ScheduleConfig:
    base_lr: float = 0.0001
    warmup: int = 10000
    decay_steps: int = 40000

    def validate(self):
        if self.warmup <= 0 or self.decay_steps <= 0:
            raise TrainError("warmup and decay_steps must be positive")


def learning_rate(step: int, config: ScheduleConfig) -> float:
    """Cubic warmup to base_lr, then a capped exponential decay."""
    config.validate()
    if step < config.warmup:
        lam = step / config.warmup
        return config.base_lr * lam ** 3 + 1e-7
    gamma = (step - config.warmup) / config.decay_steps
    return min(config.base_lr, 5.0 * config.base_lr * 0.9 ** gamma)


@dataclass
class TrainConfig:
    mode: str = "scratch"  # scratch | distill
    teacher_checkpoint: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    distill: DistillationConfig = field(default_factory=DistillationConfig)
    schedule: ScheduleConfig = field(default_factory=lambda: ScheduleConfig(warmup=500, decay_steps=2000))
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    grad_clip: float = 5.0

    def validate(self):
        if self.mode not in ("scratch", "distill"):
            raise TrainError(f"mode must be scratch or distill, got {self.mode!r}")
        if self.mode == "distill" and not self.teacher_checkpoint:
            raise TrainError("distill mode requires a teacher checkpoint")
        if self.batch_size < 1 or self.epochs < 1:
            raise TrainError("batch_size and epochs must be >= 1")
        self.model.validate()
        self.distill.validate()
        self.schedule.validate()
        self.augment.validate()


@dataclass
class TrainState:
    step: int = 0
    moments1: dict = field(default_factory=dict)
    moments2: dict = field(default_factory=dict)


def clip_gradient_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def optimizer_step(
    params: dict[str, dc.Tensor],
    grads: dict[str, np.ndarray],
    state: TrainState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> None:
    """Adam with bias correction; aborts (state untouched) on non-finite gradients."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient for parameter {name!r}; step aborted")
    t = state.step + 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.moments1.setdefault(name, np.zeros_like(p.data))
        v = state.moments2.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    state.step = t


@dataclass
class EpochMetrics:
    epoch: int
    step: int
    lr: float
    train_loss: float
    train_transducer_loss: float
    train_kd_loss: float
    dev_wer: float
    dev_ser: float

    def as_line(self) -> str:
        return "\t".join(
            [
                str(self.epoch),
                str(self.step),
                f"{self.lr:.6e}",
                f"{self.train_loss:.6f}",
                f"{self.train_transducer_loss:.6f}",
                f"{self.train_kd_loss:.6f}",
                f"{self.dev_wer:.2f}",
                f"{self.dev_ser:.2f}",
            ]
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[EpochMetrics]
    diverged: bool = False

    @property
    def log_lines(self) -> list[str]:
        return [m.as_line() for m in self.metrics]


def run_training(
    config: TrainConfig,
    train_set: list[Utterance],
    dev_set: list[Utterance] | None = None,
    log_every: int = 0,
) -> TrainResult:
    """Train a model from scratch or by distillation; deterministic given the seed."""
    config.validate()
    if not train_set:
        raise TrainError("training set is empty")

    teacher = None
    if config.mode == "distill":
        t_ckpt = load_checkpoint(config.teacher_checkpoint)
        if t_ckpt.config.vocab_size != config.model.vocab_size:
            raise TrainError(
                f"teacher vocab {t_ckpt.config.vocab_size} != student vocab {config.model.vocab_size}"
            )
        teacher = model_from_checkpoint(t_ckpt)

    model = Model(config.model, seed=config.seed)
    state = TrainState()
    order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 101]))
    aug_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 202]))
    alpha = config.distill.alpha if config.mode == "distill" else 0.0
    temperature = config.distill.temperature if config.mode == "distill" else 1.0

    metrics: list[EpochMetrics] = []
    last_good = checkpoint_from_model(model, step=0, seed=config.seed)
    n = len(train_set)

    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(n)
        epoch_total = epoch_trans = epoch_kd = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                total, trans, kd = _train_batch(
                    model, teacher, [train_set[i] for i in idx], config, state, aug_rng, alpha, temperature
                )
            except (dc.NumericError, TrainError) as e:
                log.warning("training diverged at step %d: %s", state.step, e)
                return TrainResult(checkpoint=last_good, metrics=metrics, diverged=True)
            epoch_total += total
            epoch_trans += trans
            epoch_kd += kd
            batches += 1
            if log_every and state.step % log_every == 0:
                log.info("step %d loss %.4f", state.step, total)
        last_good = checkpoint_from_model(model, step=state.step, seed=config.seed)

        dev_wer = dev_ser = float("nan")
        if dev_set:
            summary = evaluation.evaluate_corpus(model, dev_set, beam_size=1)
            dev_wer, dev_ser = summary.wer_percent, summary.ser_percent
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                step=state.step,
                lr=learning_rate(state.step, config.schedule),
                train_loss=epoch_total / batches,
                train_transducer_loss=epoch_trans / batches,
                train_kd_loss=epoch_kd / batches,
                dev_wer=dev_wer,
                dev_ser=dev_ser,
            )
        )
    return TrainResult(checkpoint=last_good, metrics=metrics)


def _train_batch(model, teacher, batch, config, state, aug_rng, alpha, temperature):
    tape_seed = int(np.random.SeedSequence([config.seed, 303, state.step]).generate_state(1)[0])
    with dc.Tape(seed=tape_seed):
        trans_terms = []
        kd_terms = []
        for utt in batch:
            feats = frontend.spec_augment(utt.features, config.augment, aug_rng)
            lat = model.lattice(feats, utt.labels, training=True, temperature=1.0)
            trans_terms.append(rnnt.transducer_loss_node(lat, utt.labels))
            if teacher is not None and alpha > 0.0:
                if temperature != 1.0:
                    student_lat = model_lattice_tempered(lat, temperature)
                else:
                    student_lat = lat
                with dc.no_grad():
                    t_lat = teacher.lattice(feats, utt.labels, training=False, temperature=temperature)
                kd_terms.append(distill_mod.kd_loss_node(t_lat.data, student_lat))

        inv_b = 1.0 / len(batch)
        trans_loss = dc.scale(_sum_scalars(trans_terms), inv_b)
        if kd_terms:
            kd_loss_t = dc.scale(_sum_scalars(kd_terms), inv_b)
            loss = dc.add(dc.scale(trans_loss, 1.0 - alpha), dc.scale(kd_loss_t, alpha))
            kd_value = kd_loss_t.item()
        else:
            loss = trans_loss
            kd_value = 0.0

        dc.zero_grads(model.params)
        dc.backpropagate(loss)
        grads = {name: p.grad for name, p in model.params.items() if p.grad is not None}
        clip_gradient_norm(grads, config.grad_clip)
        lr = learning_rate(state.step, config.schedule)
        optimizer_step(model.params, grads, state, lr)
        return loss.item(), trans_loss.item(), kd_value


def model_lattice_tempered(lattice: dc.Tensor, temperature: float) -> dc.Tensor:
    """Re-temper a log-prob lattice: scale the log-probs (as logits) and renormalize."""
    return dc.log_softmax(dc.scale(lattice, 1.0 / temperature), axis=-1)


def _sum_scalars(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = dc.add(acc, t)
    return acc
