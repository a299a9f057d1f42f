"""Ranking evaluation: MR, MRR, and Hits@K over every corruption position.

For each evaluated fact and each argument position, the fact is scored
against all |E| single-entity substitutions at that position.  Its rank is

    1 + (# strictly better candidates) + (# tied other candidates + 1) // 2

i.e. ties resolve to the mean rank (rounded half up to keep ranks integral),
so a constant-score model gets the middle rank rather than rank 1.  Filtered
ranking additionally drops candidates that are themselves known true facts
(in any split), except the target itself; the filtered numbers are the
headline, raw numbers ride along.  Relations at or above
kb.n_scored_relations (inverse-augmentation helpers) are skipped.

Ranks are integers gathered in canonical (fact, position) order before any
averaging, so metrics cannot depend on evaluation order or parallel
partitioning.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .kb import Fact, KnowledgeBase
from .model import ModelParams, score_batch


def rank_from_scores(scores: np.ndarray, target: int,
                     include: np.ndarray | None = None) -> int:
    """Mean-rank position of ``scores[target]`` among included candidates."""
    s = np.asarray(scores, dtype=np.float64)
    mask = np.ones(s.shape[0], dtype=bool) if include is None else include.copy()
    mask[target] = True
    t = s[target]
    better = int(((s < t) & mask).sum())
    ties = int(((s == t) & mask).sum()) - 1  # other candidates tied with target
    return 1 + better + (ties + 1) // 2


def _candidate_scores(params: ModelParams, fact: Fact, position: int) -> np.ndarray:
    n_e = params.vocab.n_entities
    ents = np.tile(np.array(fact.entities, dtype=np.int64), (n_e, 1))
    ents[:, position] = np.arange(n_e)
    return score_batch(params, fact.relation, ents)


def rank_fact(params: ModelParams, kb: KnowledgeBase, fact: Fact,
              position: int, filtered: bool) -> int:
    """Rank of ``fact`` against all substitutions at ``position``."""
    scores = _candidate_scores(params, fact, position)
    target = fact.entities[position]
    include = None
    if filtered:
        n_e = params.vocab.n_entities
        include = np.ones(n_e, dtype=bool)
        ents = list(fact.entities)
        for e in range(n_e):
            if e == target:
                continue
            ents[position] = e
            if Fact(fact.relation, tuple(ents)) in kb.known:
                include[e] = False
    return rank_from_scores(scores, target, include)


def _fact_ranks(params: ModelParams, kb: KnowledgeBase, fact: Fact
                ) -> list[tuple[int, int]]:
    """(raw, filtered) rank per position of one fact."""
    out = []
    for p in range(fact.arity):
        scores = _candidate_scores(params, fact, p)
        target = fact.entities[p]
        n_e = params.vocab.n_entities
        include = np.ones(n_e, dtype=bool)
        ents = list(fact.entities)
        for e in range(n_e):
            if e == target:
                continue
            ents[p] = e
            if Fact(fact.relation, tuple(ents)) in kb.known:
                include[e] = False
        out.append((rank_from_scores(scores, target, None),
                    rank_from_scores(scores, target, include)))
    return out


def metrics_from_ranks(ranks: list[int], ks: tuple[int, ...]) -> dict:
    if not ranks:
        return {"mr": 0.0, "mrr": 0.0, "hits": {str(k): 0.0 for k in ks}}
    arr = np.array(ranks, dtype=np.float64)
    return {
        "mr": float(arr.mean()),
        "mrr": float((1.0 / arr).mean()),
        "hits": {str(k): float((arr <= k).mean()) for k in ks},
    }


def evaluate(params: ModelParams, kb: KnowledgeBase, split: str,
             ks: tuple[int, ...] = (1, 3, 10), workers: int = 1) -> dict:
    """Filtered (headline) and raw metrics over one split."""
    facts = [f for f in kb.split(split) if f.relation < kb.n_scored_relations]
    if workers > 1 and len(facts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_fact = list(pool.map(lambda f: _fact_ranks(params, kb, f), facts))
    else:
        per_fact = [_fact_ranks(params, kb, f) for f in facts]
    raw = [r for ranks in per_fact for r, _ in ranks]
    filt = [f for ranks in per_fact for _, f in ranks]
    out = {"split": split, "n_facts": len(facts)}
    out.update(metrics_from_ranks(filt, ks))
    out["raw"] = metrics_from_ranks(raw, ks)
    return out
