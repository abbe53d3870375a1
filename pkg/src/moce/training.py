"""Desk-scale training loop with validation-loss early stopping."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import save_checkpoint
from .model import Model, forward_loss, pad_batch, token_accuracy
from .optim import AdamState, adam_step, inverse_sqrt_lr
from .synthetic import ParallelCorpus
from .tensor import no_grad
from .tokenizer import TokenSeq, encode

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    dropout: float = 0.1
    label_smoothing: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    batch_tokens: int = 4096
    warmup: int = 4000
    patience: int = 10
    checkpoint_interval: int = 5000
    valid_interval: int | None = None
    max_steps: int = 100_000
    average_last: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.lr < 0 or self.batch_tokens <= 0 or self.max_steps < 0:
            raise ValueError("lr must be >= 0, batch_tokens and max_steps positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def eval_every(self) -> int:
        return self.valid_interval or self.checkpoint_interval


@dataclass
class LogEntry:
    step: int
    train_loss: float
    valid_loss: float

    def line(self) -> str:
        return f"{self.step}\t{self.train_loss:.6f}\t{self.valid_loss:.6f}"


@dataclass
class TrainResult:
    model: Model
    log: list[LogEntry] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    stopped_early: bool = False
    steps: int = 0


def encode_corpus(corpus: ParallelCorpus, vocab) -> list[tuple[TokenSeq, TokenSeq]]:
    return [(encode(r.src_text, r.src_lang, vocab), encode(r.tgt_text, r.tgt_lang, vocab))
            for r in corpus]


def make_batches(pairs, batch_tokens: int, rng: np.random.Generator | None = None) -> list[list[int]]:
    """Group pair indices so that ``rows * longest sequence <= batch_tokens``.

    Pairs are length-sorted with a shuffled tie order, then the batch order is shuffled.
    """
    n = len(pairs)
    jitter = rng.permutation(n) if rng is not None else np.arange(n)
    lengths = np.array([max(len(s), len(t)) for s, t in pairs])
    order = np.lexsort((jitter, lengths))
    batches, cur, longest = [], [], 0
    for i in order:
        L = max(longest, lengths[i])
        if cur and L * (len(cur) + 1) > batch_tokens:
            batches.append(cur)
            cur, L = [], lengths[i]
        cur.append(int(i))
        longest = L
    if cur:
        batches.append(cur)
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def evaluate_loss(model: Model, pairs, batch_tokens: int, smoothing: float) -> float:
    """Token-weighted mean loss over ``pairs`` without dropout."""
    total, count = 0.0, 0
    with no_grad():
        for b in make_batches(pairs, batch_tokens):
            src = pad_batch([pairs[i][0] for i in b])
            tgt = pad_batch([pairs[i][1] for i in b])
            n = int((tgt[:, 1:] != 256).sum())
            total += float(forward_loss(model, src, tgt, smoothing).data) * n
            count += n
    return total / max(count, 1)


def evaluate_accuracy(model: Model, pairs, batch_tokens: int = 4096) -> float:
    correct = total = 0
    for b in make_batches(pairs, batch_tokens):
        c, t = token_accuracy(model, pad_batch([pairs[i][0] for i in b]),
                              pad_batch([pairs[i][1] for i in b]))
        correct += c
        total += t
    return correct / max(total, 1)


def train(model: Model, corpus: ParallelCorpus, config: TrainConfig,
          valid: ParallelCorpus | None = None, out_dir=None,
          should_stop: Callable[[int, Model], bool] | None = None) -> TrainResult:
    """Train in place with Adam and inverse-sqrt warmup.

    Validation runs every ``config.eval_every`` steps; training stops after
    ``patience`` consecutive validations without a new best loss. Checkpoints
    go to ``out_dir`` every ``checkpoint_interval`` steps and the loss log to
    ``out_dir/loss.log``. ``should_stop(step, model)``, if given, is asked
    after each validation and ends training when it returns true.
    """
    config.validate()
    model.config = dataclasses.replace(model.config, dropout=config.dropout)
    rng = np.random.default_rng(config.seed)
    pairs = encode_corpus(corpus, model.vocab)
    if not pairs:
        raise ValueError("empty training corpus")
    valid_pairs = encode_corpus(valid, model.vocab) if valid is not None and len(valid) else None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "loss.log").write_text("")

    state = AdamState(config.beta1, config.beta2, config.eps)
    result = TrainResult(model)
    best = math.inf
    bad = 0
    window: list[float] = []
    step = 0
    while step < config.max_steps:
        for b in make_batches(pairs, config.batch_tokens, rng):
            if step >= config.max_steps:
                break
            step += 1
            src = pad_batch([pairs[i][0] for i in b])
            tgt = pad_batch([pairs[i][1] for i in b])
            model.zero_grad()
            loss = forward_loss(model, src, tgt, config.label_smoothing, training=True, rng=rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at step {step} (batch of {len(b)} pairs, "
                    f"src len {src.shape[1]}, tgt len {tgt.shape[1]})")
            loss.backward()
            lr = inverse_sqrt_lr(step, config.lr, config.warmup)
            adam_step(model.params, {n: p.grad for n, p in model.params.items()}, state, lr)
            result.step_losses.append(value)
            window.append(value)

            if out is not None and step % config.checkpoint_interval == 0:
                path = out / f"checkpoint_{step}.moce"
                save_checkpoint(model, path, {"step": step})
                result.checkpoints.append(path)

            if step % config.eval_every == 0:
                vl = evaluate_loss(model, valid_pairs, config.batch_tokens, config.label_smoothing) \
                    if valid_pairs else float(np.mean(window))
                entry = LogEntry(step, float(np.mean(window)), vl)
                window = []
                result.log.append(entry)
                log.info("step %d train %.4f valid %.4f", step, entry.train_loss, vl)
                if out is not None:
                    with open(out / "loss.log", "a", encoding="utf-8") as f:
                        f.write(entry.line() + "\n")
                if vl < best:
                    best, bad = vl, 0
                else:
                    bad += 1
                if bad >= config.patience or (should_stop is not None and should_stop(step, model)):
                    result.stopped_early = True
                    result.steps = step
                    return result
    result.steps = step
    return result
