"""Negative-sampling training loop with sparse Adam.

The loss for one positive fact with scores s+ (positive) and s-_i (its m
corruptions) is

    L = -log sigma(margin - s+) - sum_i w_i * log sigma(s-_i - margin)

where w_i is a softmax over -adversarial_temperature * s-_i.  Since score is
a distance, the lowest-scoring corruptions are the hardest negatives and get
the largest weights; temperature 0 gives uniform weights summing to 1.  The
weights are treated as constants during differentiation.

Batch gradients are plain sums over examples (the learning rate absorbs
scale).  Adam moments live in per-slot dictionaries so that only parameter
slots touched by a batch advance their moments and step counters.

All randomness derives from a single seed through named sub-streams; the
shuffle stream is additionally keyed by epoch so changing the negative count
never perturbs the shuffle order.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit, softmax

from .kb import Fact, KnowledgeBase, Vocabulary
from .model import (GradBuffer, GradMap, ModelParams, SlotKey,
                    accumulate_score_gradients, score, score_batch)

STREAM_INIT = 1
STREAM_NEGATIVES = 2
STREAM_SHUFFLE = 3

NEGATIVE_RETRY_BOUND = 10


def stream_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of the run seed."""
    words = [seed % (1 << 64), stream, *extra]
    return np.random.default_rng(np.random.SeedSequence(words))


class TrainingAbort(RuntimeError):
    """Raised when a batch produces a non-finite loss."""

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    margin: float = 3.0
    negatives: int = 10
    adversarial_temperature: float = 1.0
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    checkpoint_every: int = 100
    filter_train_negatives: bool = False

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.negatives < 1:
            raise ValueError("negatives must be at least 1")
        if self.adversarial_temperature < 0:
            raise ValueError("adversarial_temperature must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be at least 1")


@dataclass
class OptimizerState:
    """Sparse Adam: moments and step counters exist only for touched slots."""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[SlotKey, np.ndarray] = field(default_factory=dict)
    v: dict[SlotKey, np.ndarray] = field(default_factory=dict)
    steps: dict[SlotKey, int] = field(default_factory=dict)


def adam_update(opt: OptimizerState, params: ModelParams,
                gradients: GradBuffer | GradMap, learning_rate: float) -> None:
    """One Adam step over exactly the slots present in ``gradients``."""
    arrays = {"base": params.entity_base, "bump": params.entity_bump,
              "boxa": params.box_a, "boxb": params.box_b}
    items: Iterable[tuple[SlotKey, np.ndarray]]
    items = gradients.items()
    for key, g in items:
        m = opt.m.get(key)
        if m is None:
            m = opt.m[key] = np.zeros_like(g)
            opt.v[key] = np.zeros_like(g)
            opt.steps[key] = 0
        v = opt.v[key]
        t = opt.steps[key] + 1
        opt.steps[key] = t
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        m_hat = m / (1.0 - opt.beta1 ** t)
        v_hat = v / (1.0 - opt.beta2 ** t)
        kind, idx = key
        arrays[kind][idx] -= learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)


def adversarial_loss_terms(pos_scores: np.ndarray, neg_scores: np.ndarray,
                           margin: float, adversarial_temperature: float
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row losses and dL/dscore factors.

    pos_scores: (B,), neg_scores: (B, m).  Returns (loss, d_pos, d_neg) with
    shapes (B,), (B,), (B, m).  Uses log sigma(x) = -logaddexp(0, -x) for
    stability; the softmax weights are stop-gradient constants.
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    w = softmax(-adversarial_temperature * neg_scores, axis=-1)
    loss = (np.logaddexp(0.0, pos_scores - margin)
            + (w * np.logaddexp(0.0, margin - neg_scores)).sum(axis=-1))
    d_pos = expit(pos_scores - margin)
    d_neg = -w * expit(margin - neg_scores)
    return loss, d_pos, d_neg


def loss(params: ModelParams, fact: Fact, negatives: list[Fact],
         margin: float, adversarial_temperature: float) -> float:
    """Self-adversarial negative sampling loss for one positive fact."""
    if not negatives:
        raise ValueError("at least one negative sample is required")
    s_pos = np.array([score(params, fact)])
    s_neg = np.array([[score(params, n) for n in negatives]])
    value, _, _ = adversarial_loss_terms(s_pos, s_neg, margin,
                                         adversarial_temperature)
    return float(value[0])


def _draw_corruptions(rng: np.random.Generator, relation: int, ents: np.ndarray,
                      m: int, n_entities: int, stats: dict | None = None,
                      avoid: frozenset | None = None) -> np.ndarray:
    """(B, n) positive rows -> (B, m, n) corrupted rows.

    Each corruption redraws position and replacement together when it
    collides with its source fact (or, with ``avoid``, any listed fact key
    ``(relation, *entities)``), giving up after a bounded number of retries.
    """
    B, n = ents.shape
    pos = rng.integers(0, n, size=(B, m))
    repl = rng.integers(0, n_entities, size=(B, m))

    def bad_mask() -> np.ndarray:
        orig = ents[np.arange(B)[:, None], pos]
        mask = repl == orig
        if avoid is not None:
            for b in range(B):
                row = ents[b]
                for i in range(m):
                    if mask[b, i]:
                        continue
                    cand = [int(x) for x in row]
                    cand[int(pos[b, i])] = int(repl[b, i])
                    if (relation, *cand) in avoid:
                        mask[b, i] = True
        return mask

    bad = bad_mask()
    for _ in range(NEGATIVE_RETRY_BOUND):
        if not bad.any():
            break
        k = int(bad.sum())
        pos[bad] = rng.integers(0, n, size=k)
        repl[bad] = rng.integers(0, n_entities, size=k)
        bad = bad_mask()
    if stats is not None and bad.any():
        stats["negatives_accepted_equal"] = (
            stats.get("negatives_accepted_equal", 0) + int(bad.sum()))
    out = np.repeat(ents[:, None, :], m, axis=1)
    out[np.arange(B)[:, None], np.arange(m)[None, :], pos] = repl
    return out


def sample_negatives(rng: np.random.Generator, fact: Fact, m: int,
                     vocab: Vocabulary, stats: dict | None = None) -> list[Fact]:
    """m corruptions of ``fact``: uniform position, uniform replacement entity.

    A corruption equal to the original fact is re-drawn; after the retry
    bound it is accepted and counted in ``stats``.
    """
    ents = np.array([fact.entities], dtype=np.int64)
    out = _draw_corruptions(rng, fact.relation, ents, m, vocab.n_entities,
                            stats=stats)
    return [Fact(fact.relation, tuple(int(x) for x in out[0, i]))
            for i in range(m)]


def _group_by_relation(facts: list[Fact]) -> dict[int, np.ndarray]:
    groups: dict[int, list[tuple]] = {}
    for f in facts:
        groups.setdefault(f.relation, []).append(f.entities)
    return {r: np.array(rows, dtype=np.int64) for r, rows in sorted(groups.items())}


def train_epoch(params: ModelParams, optimizer: OptimizerState,
                kb: KnowledgeBase, config: TrainConfig,
                projection_plan=None, epoch: int = 0,
                neg_rng: np.random.Generator | None = None,
                stats: dict | None = None) -> dict:
    """One shuffled pass over the training split; returns epoch metrics."""
    from .rules import apply_projection  # local import, rules depends on model

    t0 = time.perf_counter()
    facts = list(kb.train)
    shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE, epoch)
    order = shuffle_rng.permutation(len(facts))
    if neg_rng is None:
        neg_rng = stream_rng(config.seed, STREAM_NEGATIVES, epoch)
    avoid = frozenset((f.relation,) + tuple(f.entities) for f in kb.train) \
        if config.filter_train_negatives else None
    n_entities = params.vocab.n_entities
    total_loss = 0.0
    growth = 0
    for start in range(0, len(facts), config.batch_size):
        batch = [facts[i] for i in order[start:start + config.batch_size]]
        buf = GradBuffer(params)
        batch_loss = 0.0
        for rel, ents in _group_by_relation(batch).items():
            negs = _draw_corruptions(neg_rng, rel, ents, config.negatives,
                                     n_entities, stats=stats, avoid=avoid)
            B, m, n = negs.shape
            s_pos = score_batch(params, rel, ents)
            s_neg = score_batch(params, rel, negs.reshape(B * m, n)).reshape(B, m)
            row_loss, d_pos, d_neg = adversarial_loss_terms(
                s_pos, s_neg, config.margin, config.adversarial_temperature)
            batch_loss += float(row_loss.sum())
            accumulate_score_gradients(params, rel, ents, d_pos, buf)
            accumulate_score_gradients(params, rel, negs.reshape(B * m, n),
                                       d_neg.reshape(B * m), buf)
        if not np.isfinite(batch_loss):
            raise TrainingAbort(
                "non-finite loss; training aborted",
                diagnostic={
                    "epoch": epoch,
                    "batch_start": start,
                    "batch_loss": batch_loss,
                    "relations": sorted({f.relation for f in batch}),
                    "facts": [[f.relation, list(f.entities)] for f in batch[:8]],
                })
        adam_update(optimizer, params, buf, config.learning_rate)
        if projection_plan is not None:
            growth += apply_projection(params, projection_plan)
        total_loss += batch_loss
    wall_ms = (time.perf_counter() - t0) * 1e3
    return {
        "epoch": epoch,
        "mean_loss": total_loss / max(1, len(facts)),
        "wall_ms": wall_ms,
        "projection_growth_count": growth,
    }


def train_model(params: ModelParams, kb: KnowledgeBase, config: TrainConfig,
                projection_plan=None, metrics_fh=None,
                on_checkpoint: Callable[[int, ModelParams, dict], None] | None = None,
                stats: dict | None = None) -> list[dict]:
    """Run config.epochs epochs; returns the per-epoch metrics history.

    ``on_checkpoint`` fires every config.checkpoint_every epochs and after the
    final epoch (validation evaluation and best-checkpoint logic live with the
    caller).
    """
    config.validate()
    optimizer = OptimizerState()
    history = []
    for epoch in range(config.epochs):
        metrics = train_epoch(params, optimizer, kb, config,
                              projection_plan=projection_plan, epoch=epoch,
                              stats=stats)
        history.append(metrics)
        if metrics_fh is not None:
            metrics_fh.write(json.dumps(metrics) + "\n")
            metrics_fh.flush()
        last = epoch == config.epochs - 1
        if on_checkpoint is not None and ((epoch + 1) % config.checkpoint_every == 0 or last):
            on_checkpoint(epoch, params, metrics)
    return history
