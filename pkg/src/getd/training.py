"""Multiclass log-loss, Adam, and the mini-batch training loop with early stopping."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .evaluation import evaluate
from .filtering import FilterIndex, build_filter_index, build_filter_indices
from .models import ContractionPass, DropoutMasks, KBModel

__all__ = [
    "AdamState",
    "TrainConfig",
    "TrainHistory",
    "adam_step",
    "batch_gradients",
    "batch_loss_and_grads",
    "build_filter_index",
    "fact_loss",
    "fact_losses",
    "train",
]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    lr_decay: float = 1.0
    batch_size: int = 128
    max_epochs: int = 200
    patience_epochs: int = 10
    dropout: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 1
    early_stopping: bool = True
    workers: int = 1
    # extra per-epoch mean losses (train-only filter) on other splits, e.g. ("test",)
    track_loss_splits: tuple[str, ...] = ()

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigurationError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.patience_epochs < 1:
            raise ConfigurationError("patience_epochs must be >= 1")
        if not 0 <= self.dropout <= 0.5:
            raise ConfigurationError(f"dropout must be in [0, 0.5], got {self.dropout}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.eval_every < 1 or self.workers < 1 or self.max_epochs < 0:
            raise ConfigurationError("eval_every and workers must be >= 1, max_epochs >= 0")
        self.track_loss_splits = tuple(self.track_loss_splits)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray], **kwargs) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kwargs,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float):
    """Bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for key, p in params.items():
        g = grads[key]
        m, v = state.m[key], state.v[key]
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        # tmp <- lr * (m / c1) / (sqrt(v / c2) + eps)
        np.sqrt(v, out=tmp)
        tmp *= 1.0 / math.sqrt(c2)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / c1
        p -= tmp
    return params, state


def _position_terms(scores: np.ndarray, truth: np.ndarray, masked: np.ndarray | None):
    """Per-row log-loss and d loss / d scores for one position."""
    if masked is not None:
        scores = np.where(masked, -np.inf, scores)
    rows = np.arange(len(truth))
    top = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - top)
    z = e.sum(axis=1, keepdims=True)
    loss = (np.log(z[:, 0]) + top[:, 0]) - scores[rows, truth]
    probs = e / z
    probs[rows, truth] -= 1.0
    return loss, probs


def _loss_sums(m: KBModel, facts: np.ndarray, loss_filter: FilterIndex | None, masks, need_grad: bool):
    cp = ContractionPass(m, facts, masks)
    total = np.zeros(len(facts))
    for p in range(1, m.arity + 1):
        scores = cp.candidate_scores(p)
        masked = None if loss_filter is None else loss_filter.mask(cp.facts, p, scores.shape[1])
        loss, dscores = _position_terms(scores, cp.facts[:, p], masked)
        total += loss
        if need_grad:
            cp.backward_scores(p, dscores)
    return total, (cp.gradients() if need_grad else None)


def fact_losses(m: KBModel, facts, loss_filter: FilterIndex | None, masks: DropoutMasks | None = None, batch_size: int = 512) -> np.ndarray:
    """Sum over entity positions of the multiclass log-loss, one value per fact.

    Competitors at each position are every entity except those that complete a
    fact in ``loss_filter`` (the fact's own entity always stays in).
    """
    facts = m.check_facts(facts)
    batch_size = min(batch_size, m.chunk_size())
    out = [
        _loss_sums(m, facts[i : i + batch_size], loss_filter, masks, need_grad=False)[0]
        for i in range(0, len(facts), batch_size)
    ]
    return np.concatenate(out) if out else np.zeros(0)


def fact_loss(m: KBModel, f, loss_filter: FilterIndex | None, dropout_mask: DropoutMasks | None = None) -> float:
    return float(fact_losses(m, f, loss_filter, dropout_mask)[0])


def batch_loss_and_grads(
    m: KBModel,
    facts,
    loss_filter: FilterIndex | None,
    masks: DropoutMasks | None = None,
    weight_decay: float = 0.0,
    workers: int = 1,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over the batch (plus L2 penalty) and its exact gradient."""
    facts = m.check_facts(facts)
    if len(facts) == 0:
        raise ConfigurationError("empty batch")
    if workers > 1 and len(facts) > 1:
        chunks = np.array_split(facts, min(workers, len(facts)))
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda c: _loss_sums(m, c, loss_filter, masks, True), chunks))
        loss_sum = sum(float(p[0].sum()) for p in parts)
        grads = parts[0][1]
        for _, g in parts[1:]:
            for k in grads:
                grads[k] += g[k]
    else:
        losses, grads = _loss_sums(m, facts, loss_filter, masks, True)
        loss_sum = float(losses.sum())
    n = len(facts)
    loss = loss_sum / n
    for k, p in m.parameters().items():
        grads[k] /= n
        if weight_decay:
            grads[k] += weight_decay * p
            loss += 0.5 * weight_decay * float(np.sum(p * p))
    return loss, grads


def batch_gradients(
    m: KBModel,
    batch,
    loss_filter: FilterIndex | None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    weight_decay: float = 0.0,
    workers: int = 1,
):
    """Sample per-batch dropout masks from ``rng`` and return ``(mean loss, grads)``."""
    rng = np.random.default_rng() if rng is None else rng
    masks = DropoutMasks.sample(m, dropout, rng)
    return batch_loss_and_grads(m, batch, loss_filter, masks, weight_decay, workers)


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(record)

    def column(self, key: str) -> list:
        return [r.get(key) for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


def train(
    m: KBModel,
    kb,
    cfg: TrainConfig,
    log_path: str | Path | None = None,
) -> tuple[KBModel, TrainHistory]:
    """Train ``m`` in place; return the best-validation-MRR copy and the history.

    Each epoch shuffles the training facts (seeded), runs Adam over
    mini-batches, then multiplies the learning rate by ``lr_decay``. The
    filtered validation MRR is computed every ``eval_every`` epochs; training
    stops after ``patience_epochs`` evaluations without strict improvement.
    """
    if m.n_entities != kb.n_entities or m.n_relations != kb.n_relations or m.arity != kb.arity:
        raise ConfigurationError(
            f"model vocab (n_e={m.n_entities}, n_r={m.n_relations}, arity={m.arity}) does not match "
            f"knowledge base (n_e={kb.n_entities}, n_r={kb.n_relations}, arity={kb.arity})"
        )
    if len(kb.train) == 0 or len(kb.valid) == 0:
        raise ConfigurationError("train and valid splits must be non-empty")
    loss_filter, eval_filter = build_filter_indices(kb)
    rng = np.random.default_rng(cfg.seed)
    params = m.parameters()
    state = AdamState.zeros(params)
    history = TrainHistory()
    lr = cfg.learning_rate
    best_mrr, best_model, bad_evals = -math.inf, None, 0
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(len(kb.train))
            loss_sum = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = kb.train[order[start : start + cfg.batch_size]]
                loss, grads = batch_gradients(m, batch, loss_filter, cfg.dropout, rng, cfg.weight_decay, cfg.workers)
                adam_step(params, grads, state, lr)
                loss_sum += loss * len(batch)
            record = {
                "epoch": epoch,
                "mean_train_loss": loss_sum / len(order),
                "valid_mrr": None,
                "learning_rate": lr,
            }
            for split in cfg.track_loss_splits:
                # the training objective itself, applied to held-out facts
                facts = getattr(kb, split)
                record[f"{split}_loss"] = float(np.mean(fact_losses(m, facts, loss_filter))) if len(facts) else None
            stop = False
            if epoch % cfg.eval_every == 0:
                mrr = evaluate(m, kb.valid, eval_filter).mrr
                record["valid_mrr"] = mrr
                if mrr > best_mrr:
                    best_mrr, best_model, bad_evals = mrr, m.copy(), 0
                else:
                    bad_evals += 1
                    stop = cfg.early_stopping and bad_evals >= cfg.patience_epochs
            history.append(record)
            log.info("epoch %d loss %.5f valid_mrr %s lr %.3g", epoch, record["mean_train_loss"], record["valid_mrr"], lr)
            if log_file:
                log_file.write(json.dumps({"epoch": epoch, "loss": record["mean_train_loss"], "valid_mrr": record["valid_mrr"], "lr": lr, **{k: v for k, v in record.items() if k.endswith("_loss") and k != "mean_train_loss"}}) + "\n")
                log_file.flush()
            if stop:
                log.info("early stop at epoch %d (best valid MRR %.4f)", epoch, best_mrr)
                break
            lr *= cfg.lr_decay
    finally:
        if log_file:
            log_file.close()
    return (best_model if best_model is not None else m.copy()), history


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
