"""Optimisation: Adam, inverse-time learning-rate decay, dev-based model selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ck
from . import numerics as nx
from .corpus import Sentence, Vocabulary, batches_per_epoch, batchify, make_batch
from .decode import Prediction, decode_triplets
from .evaluate import ScoreReport, score
from .model import ModelConfig, TableSequenceModel, build_parameters

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    decay_rate: float = 0.05
    decay_step: int = 1000
    batch_size: int = 6
    max_steps: int = 5000
    eval_interval: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("lr", "decay_step", "batch_size", "eval_interval", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_steps < 0 or self.decay_rate < 0:
            raise ValueError("max_steps and decay_rate must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Staircase inverse-time decay: lr / (1 + rate * floor(step / decay_step))."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return cfg.lr / (1.0 + cfg.decay_rate * (step // cfg.decay_step))


def adam_step(params: dict[str, nx.Tensor], m: dict[str, np.ndarray], v: dict[str, np.ndarray],
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update (``t`` counts from 1); clears gradients."""
    for name, p in params.items():
        if p.grad is None:
            raise TrainingError(f"parameter {name} has no gradient")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        mi = m.setdefault(name, np.zeros_like(p.data))
        vi = v.setdefault(name, np.zeros_like(p.data))
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * (g * g)
        p.data -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        p.grad = None


# -------------------------------------------------------------- inference

def predict(model: TableSequenceModel, sentences: Sequence[Sentence], vocab: Vocabulary,
            batch_size: int = 16, keep_logits: bool = False):
    """Decode every sentence; optionally also return per-sentence logits."""
    preds: list[Prediction] = []
    logits = []
    for lo in range(0, len(sentences), batch_size):
        chunk = sentences[lo:lo + batch_size]
        batch = make_batch(chunk, vocab)
        seq, table = model.forward(batch, training=False)
        for b, s in enumerate(chunk):
            n = len(s)
            sl, tl = seq.data[b, :n], table.data[b, :n, :n]
            preds.append(decode_triplets(sl, tl))
            if keep_logits:
                logits.append((sl.copy(), tl.copy()))
    return (preds, logits) if keep_logits else preds


def evaluate_model(model, sentences, vocab, batch_size: int = 16) -> ScoreReport:
    preds = predict(model, sentences, vocab, batch_size)
    return score([p.triplets for p in preds], [s.triplets for s in sentences])


# ------------------------------------------------------------------ state

def model_from_checkpoint(ckpt: ck.Checkpoint, embeddings: np.ndarray) -> TableSequenceModel:
    cfg = ckpt.config
    template = build_parameters(cfg, np.random.default_rng(0))
    if set(template) != set(ckpt.params):
        missing = sorted(set(template) ^ set(ckpt.params))
        raise ck.CheckpointError(f"checkpoint parameters do not match the config: {missing[:5]}")
    for name, t in template.items():
        arr = ckpt.params[name]
        if arr.shape != t.shape:
            raise ck.CheckpointError(f"{name}: checkpoint shape {arr.shape} != expected {t.shape}")
        t.data = np.array(arr, dtype=nx.get_dtype())
    return TableSequenceModel(cfg, template, embeddings)


def snapshot(model, m, v, step, rng, best_f1, meta) -> ck.Checkpoint:
    return ck.Checkpoint(
        config=model.config,
        params={k: p.data.astype(np.float32) for k, p in model.params.items()},
        adam_m={k: a.astype(np.float32) for k, a in m.items()},
        adam_v={k: a.astype(np.float32) for k, a in v.items()},
        step=step, rng_state=rng.bit_generator.state, best_dev_f1=best_f1, meta=dict(meta))


@dataclass
class FitResult:
    best: ck.Checkpoint
    last: ck.Checkpoint
    log: list[dict] = field(default_factory=list)
    best_report: ScoreReport | None = None

    def log_lines(self) -> list[str]:
        return [" ".join(f"{k}={v}" for k, v in event.items()) for event in self.log]


def _largest_parameter(params: dict[str, nx.Tensor]) -> str:
    name, p = max(params.items(), key=lambda kv: float(np.nan_to_num(np.abs(kv[1].data), nan=np.inf).max()))
    return f"largest parameter {name} (max |x| = {float(np.abs(p.data).max()):.3e})"


def _epoch_batches(train, batch_size, vocab, seed, epoch):
    return batchify(train, batch_size, vocab, np.random.default_rng([seed, epoch]))


def fit(train: Sequence[Sentence], dev: Sequence[Sentence], model_cfg: ModelConfig,
        train_cfg: TrainConfig, embeddings: np.ndarray, vocab: Vocabulary,
        resume: ck.Checkpoint | None = None, stop_at_f1: float | None = None,
        on_event: Callable[[dict], None] | None = None) -> FitResult:
    """Train for ``max_steps`` batches and keep the best dev-F1 state.

    Batches for epoch ``e`` are shuffled by a generator seeded with
    ``(seed, e)``, so the data order depends only on the step count and a
    resumed run replays exactly.  Dropout draws from the run generator,
    whose state travels in every checkpoint.  ``stop_at_f1`` ends training
    early once dev F1 reaches that value.
    """
    tc = train_cfg
    meta = {"lr_schedule": "staircase_inverse_time", "lr": repr(tc.lr),
            "decay_rate": repr(tc.decay_rate), "decay_step": str(tc.decay_step),
            "batch_size": str(tc.batch_size), "eval_interval": str(tc.eval_interval),
            "seed": str(tc.seed)}
    rng = np.random.default_rng(tc.seed)
    if resume is None:
        model = TableSequenceModel.create(model_cfg, embeddings, rng)
        m, v, start = {}, {}, 0
    else:
        model = model_from_checkpoint(resume, embeddings)
        m = {k: np.array(a, dtype=nx.get_dtype()) for k, a in resume.adam_m.items()}
        v = {k: np.array(a, dtype=nx.get_dtype()) for k, a in resume.adam_v.items()}
        start = resume.step
        rng.bit_generator.state = resume.rng_state
    events: list[dict] = []

    def emit(event):
        events.append(event)
        if on_event is not None:
            on_event(event)

    def run_eval(step):
        try:
            report = evaluate_model(model, dev, vocab)
        except nx.NonFiniteError as exc:
            raise TrainingError(f"step {step} (dev evaluation): {exc}") from exc
        emit({"event": "eval", "step": step, "precision": f"{report.precision:.6f}",
              "recall": f"{report.recall:.6f}", "f1": f"{report.f1:.6f}"})
        return report

    if resume is None:
        best_report = run_eval(0)
        best_f1 = best_report.f1
        best = snapshot(model, m, v, 0, rng, best_f1, meta)
    else:
        best_f1, best_report = resume.best_dev_f1, None
        best = resume
    nb = batches_per_epoch(len(train), tc.batch_size)
    params = model.params
    cached_epoch, batches = None, None
    step = start
    while step < tc.max_steps:
        if stop_at_f1 is not None and best_f1 >= stop_at_f1:
            break
        epoch, pos = divmod(step, nb)
        if epoch != cached_epoch:
            batches, cached_epoch = _epoch_batches(train, tc.batch_size, vocab, tc.seed, epoch), epoch
        batch = batches[pos]
        lr = lr_at(step, tc)
        try:
            with nx.Graph() as graph:
                seq, table = model.forward(batch, training=True, rng=rng)
                loss = model.loss(seq, table, batch)
            graph.backward(loss, params.values())
        except nx.NonFiniteError as exc:
            raise TrainingError(f"step {step + 1}: {exc}; {_largest_parameter(params)}") from exc
        for name, p in params.items():
            if not np.isfinite(p.grad).all():
                raise TrainingError(f"step {step + 1}: non-finite gradient in {name}")
        adam_step(params, m, v, step + 1, lr, tc.beta1, tc.beta2, tc.eps)
        step += 1
        emit({"event": "train", "step": step, "lr": f"{lr:.6e}", "loss": f"{float(loss.data):.6f}"})
        if step % tc.eval_interval == 0 or step == tc.max_steps:
            report = run_eval(step)
            if report.f1 > best_f1:
                best_f1, best_report = report.f1, report
                best = snapshot(model, m, v, step, rng, best_f1, meta)
    last = snapshot(model, m, v, step, rng, best_f1, meta)
    return FitResult(best=best, last=last, log=events, best_report=best_report)
