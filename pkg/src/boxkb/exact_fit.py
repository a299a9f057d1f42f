"""Exact truth-table fitting: a constructive expressiveness oracle.

Given a total truth assignment over a small universe (every relation applied
to every entity tuple), this module builds a model configuration that
classifies every fact exactly: a fact is true iff the final embedding of
every argument position lies inside that position's box.  Classification is
purely geometric; scores and bounding play no role, so the model is built
with bounding disabled.

Construction: start from the all-true model (all vectors zero, all boxes
[-0.5, 0.5]^d with d = |R| * |E|^(n-1), n the maximal arity) and flip false
facts one at a time, each flip confined to the flipped relation's dimension
block.  Every flip changes exactly one classification bit.

For all-binary vocabularies the flip is closed-form: at dimension
D = dim_index(i, k) for fact r_i(e_j, e_k), increment the bump of e_j by C,
decrement every entity base except e_k by C, grow relation i's head box by
+-C and its tail box downward only, and grow every other relation's boxes by
+-C, with C one more than the largest coordinate magnitude at D.  The fact
then exits its tail box from above while every other final moves by an
amount the grown boxes absorb, and later flips never disturb the exit
because bumps only grow and the tail upper bound at D never moves.

With any non-binary relation the single-dimension arithmetic above no longer
isolates one fact (a position-p final is an entity base plus the sum of the
other participants' bumps, so deltas are shared across facts), and relations
are padded to the maximal arity with a dummy entity.  Each flip instead
solves a small linear program over one dimension of the relation's block:
variables are every entity base/bump value and every box bound at that
dimension; constraints keep true facts strictly inside everywhere, keep
already-false facts outside at their recorded witness (position, dimension),
and push the new fact's chosen exit position at least one unit above its
box.  The solution is quantized to a 1/1024 grid (constraint slacks dominate
the rounding error) and verified exactly before being accepted; failed
candidates try the next exit position/dimension.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .geometry import contains
from .kb import Fact, Vocabulary
from .model import ModelParams, final_embedding

INSIDE_SLACK = 1.0 / 16.0
EXIT_MARGIN = 1.0
GRID = 1024
COORD_BOUND = float(1 << 20)


class ExactFitError(RuntimeError):
    """No flip candidate could realize the requested classification change."""


class TableFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TruthTable:
    """Total truth assignment: every (relation, entity tuple) has a label."""
    vocab: Vocabulary
    truth: dict[tuple, bool]

    def __post_init__(self) -> None:
        expected = set(enumerate_universe(self.vocab))
        got = set(self.truth)
        if got != expected:
            missing = len(expected - got)
            extra = len(got - expected)
            raise TableFormatError(
                f"truth table is not total over its universe "
                f"({missing} missing, {extra} unknown entries)")

    @property
    def n_facts(self) -> int:
        return len(self.truth)

    def is_true(self, fact: Fact) -> bool:
        return self.truth[(fact.relation, *fact.entities)]


def enumerate_universe(vocab: Vocabulary) -> list[tuple]:
    """All (relation, *entities) keys over the vocabulary, in canonical order."""
    keys = []
    for rel in range(vocab.n_relations):
        for ents in itertools.product(range(vocab.n_entities),
                                      repeat=vocab.arity(rel)):
            keys.append((rel, *ents))
    return keys


def parse_table(path) -> TruthTable:
    """Read a truth table file.

    Format: an ``entities`` line, one ``relation <name> <arity>`` line per
    relation, then one ``<relation> <e1> ... <en> <0|1|true|false>`` line per
    fact, covering the whole universe.  ``#`` starts a comment.
    """
    vocab = Vocabulary()
    truth: dict[tuple, bool] = {}
    saw_entities = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            tokens = text.split()
            if tokens[0] == "entities":
                if saw_entities:
                    raise TableFormatError(f"{path}:{lineno}: duplicate entities line")
                if len(tokens) < 2:
                    raise TableFormatError(f"{path}:{lineno}: no entities listed")
                for name in tokens[1:]:
                    vocab.entity_id(name, create=True)
                saw_entities = True
            elif tokens[0] == "relation":
                if len(tokens) != 3:
                    raise TableFormatError(
                        f"{path}:{lineno}: expected 'relation <name> <arity>'")
                try:
                    arity = int(tokens[2])
                except ValueError:
                    raise TableFormatError(f"{path}:{lineno}: arity must be an integer")
                if arity < 1:
                    raise TableFormatError(f"{path}:{lineno}: arity must be at least 1")
                vocab.relation_id(tokens[1], arity=arity, create=True)
            else:
                if not saw_entities:
                    raise TableFormatError(
                        f"{path}:{lineno}: entities line must come first")
                try:
                    rel = vocab.relation_id(tokens[0])
                except KeyError:
                    raise TableFormatError(
                        f"{path}:{lineno}: unknown relation {tokens[0]!r}")
                arity = vocab.arity(rel)
                if len(tokens) != arity + 2:
                    raise TableFormatError(
                        f"{path}:{lineno}: expected {arity} entities and a label")
                try:
                    ents = tuple(vocab.entity_id(n) for n in tokens[1:-1])
                except KeyError as exc:
                    raise TableFormatError(f"{path}:{lineno}: {exc}")
                label = tokens[-1].lower()
                if label not in ("0", "1", "true", "false"):
                    raise TableFormatError(
                        f"{path}:{lineno}: label must be 0/1/true/false")
                key = (rel, *ents)
                if key in truth:
                    raise TableFormatError(f"{path}:{lineno}: duplicate fact entry")
                truth[key] = label in ("1", "true")
    try:
        return TruthTable(vocab, truth)
    except TableFormatError as exc:
        raise TableFormatError(f"{path}: {exc}") from exc


def write_table(table: TruthTable, path) -> None:
    vocab = table.vocab
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("entities " + " ".join(vocab.entity_names) + "\n")
        for rel, name in enumerate(vocab.relation_names):
            fh.write(f"relation {name} {vocab.arity(rel)}\n")
        for key in sorted(table.truth):
            rel, ents = key[0], key[1:]
            names = " ".join(vocab.entity_names[e] for e in ents)
            fh.write(f"{vocab.relation_names[rel]} {names} "
                     f"{1 if table.truth[key] else 0}\n")


def dim_index(relation: int, tail: tuple[int, ...], n_entities: int) -> int:
    """Dimension assigned to (relation, tail entity tuple).

    relation * |E|^(n-1) + sum_a tail[a] * |E|^(n-2-a): a mixed-radix layout
    giving each relation a contiguous block of |E|^(n-1) dimensions,
    bijective over the index ranges.
    """
    if relation < 0:
        raise ValueError("relation index out of range")
    idx = relation
    for t in tail:
        if not 0 <= t < n_entities:
            raise ValueError("entity index out of range")
        idx = idx * n_entities + t
    return idx


@dataclass
class ExactFitModel:
    params: ModelParams        # over the padded internal vocabulary
    vocab: Vocabulary          # the original universe
    n_max: int
    dummy: int = 0
    flips: int = 0
    exact: bool | None = None
    witness: dict[tuple, tuple[int, int]] = field(default_factory=dict)

    @property
    def all_binary(self) -> bool:
        return all(a == 2 for a in self.vocab.relation_arities)

    def pad(self, key: tuple) -> tuple:
        rel, ents = key[0], key[1:]
        return (rel, *ents, *([self.dummy] * (self.n_max - len(ents))))


def build_all_true(vocab: Vocabulary) -> ExactFitModel:
    """All vectors zero, all boxes [-0.5, 0.5]^d: every fact classifies true."""
    n_max = max(vocab.relation_arities, default=0)
    if vocab.n_relations == 0 or vocab.n_entities == 0:
        raise ValueError("universe must have at least one relation and entity")
    n_e = vocab.n_entities
    d = vocab.n_relations * n_e ** (n_max - 1)
    internal = Vocabulary()
    for name in vocab.entity_names:
        internal.entity_id(name, create=True)
    for name in vocab.relation_names:
        internal.relation_id(name, arity=n_max, create=True)
    n_slots = vocab.n_relations * n_max
    params = ModelParams(
        vocab=internal,
        d=d,
        entity_base=np.zeros((n_e, d)),
        entity_bump=np.zeros((n_e, d)),
        box_a=np.full((n_slots, d), -0.5),
        box_b=np.full((n_slots, d), 0.5),
        slot_of=[np.arange(r * n_max, (r + 1) * n_max, dtype=np.int64)
                 for r in range(vocab.n_relations)],
        norm_order=2,
        bounded=False,
    )
    return ExactFitModel(params=params, vocab=vocab, n_max=n_max)


def _classify_padded(model: ExactFitModel, padded: tuple) -> bool:
    rel, ents = padded[0], padded[1:]
    pts = final_embedding(model.params, Fact(rel, ents))
    for p in range(model.n_max):
        if not contains(model.params.effective_box(rel, p), pts[p]):
            return False
    return True


def classify(model: ExactFitModel, fact: Fact) -> bool:
    """True iff every argument position's final embedding is inside its box."""
    if fact.arity != model.vocab.arity(fact.relation):
        raise ValueError("fact arity does not match relation arity")
    return _classify_padded(model, model.pad((fact.relation, *fact.entities)))


def _classification_snapshot(model: ExactFitModel) -> dict[tuple, bool]:
    return {key: _classify_padded(model, model.pad(key))
            for key in enumerate_universe(model.vocab)}


def _flip_binary(model: ExactFitModel, fact: Fact) -> None:
    """Closed-form flip for all-binary vocabularies (see module docstring)."""
    params = model.params
    j, k = fact.entities
    rel = fact.relation
    D = dim_index(rel, (k,), model.vocab.n_entities)
    column = np.concatenate([
        params.entity_base[:, D], params.entity_bump[:, D],
        params.box_a[:, D], params.box_b[:, D]])
    C = float(np.max(np.abs(column))) + 1.0
    params.entity_bump[j, D] += C
    mask = np.ones(model.vocab.n_entities, dtype=bool)
    mask[k] = False
    params.entity_base[mask, D] -= C
    for m in range(model.vocab.n_relations):
        head, tail = params.slot_of[m]
        if m == rel:
            params.box_a[head, D] -= C
            params.box_b[head, D] += C
            params.box_a[tail, D] -= C  # tail upper stays: the exit boundary
        else:
            for s in (head, tail):
                params.box_a[s, D] -= C
                params.box_b[s, D] += C
    model.witness[(rel, j, k)] = (1, D)


def _lp_variable_layout(model: ExactFitModel) -> tuple[int, int, int]:
    """Offsets: entity bases at 0, bumps at E, box bounds at 2E (l, u pairs)."""
    n_e = model.vocab.n_entities
    return n_e, 2 * n_e, 2 * n_e + 2 * model.vocab.n_relations * model.n_max


def _flip_lp_candidate(model: ExactFitModel, target: tuple, p_star: int,
                       D: int, expected: dict[tuple, bool]) -> bool:
    """Try to realize ``expected`` by re-solving dimension D; True on success."""
    params = model.params
    n_e = model.vocab.n_entities
    n_max = model.n_max
    bump_off, box_off, n_vars = _lp_variable_layout(model)

    def box_vars(rel: int, p: int) -> tuple[int, int]:
        s = box_off + 2 * (rel * n_max + p)
        return s, s + 1  # (lower, upper)

    rows, rhs = [], []

    def final_coeffs(ents: tuple, p: int) -> np.ndarray:
        coef = np.zeros(n_vars)
        coef[ents[p]] += 1.0
        for q, e in enumerate(ents):
            if q != p:
                coef[bump_off + e] += 1.0
        return coef

    for key in enumerate_universe(model.vocab):
        padded = model.pad(key)
        rel, ents = padded[0], padded[1:]
        wit = model.witness.get(padded)
        if key == target:
            wit = (p_star, D)
        for p in range(n_max):
            f = final_coeffs(ents, p)
            lo_v, up_v = box_vars(rel, p)
            if not expected[key] and wit == (p, D):
                row = -f
                row[up_v] += 1.0  # u - F <= -margin, i.e. F >= u + margin
                rows.append(row)
                rhs.append(-EXIT_MARGIN)
            else:
                row = -f
                row[lo_v] += 1.0  # l - F <= -slack
                rows.append(row)
                rhs.append(-INSIDE_SLACK)
                row = f.copy()
                row[up_v] -= 1.0  # F - u <= -slack
                rows.append(row)
                rhs.append(-INSIDE_SLACK)
    for rel in range(model.vocab.n_relations):
        for p in range(n_max):
            lo_v, up_v = box_vars(rel, p)
            row = np.zeros(n_vars)
            row[lo_v], row[up_v] = 1.0, -1.0  # l <= u
            rows.append(row)
            rhs.append(0.0)

    c = np.zeros(n_vars)
    for rel in range(model.vocab.n_relations):
        for p in range(n_max):
            lo_v, up_v = box_vars(rel, p)
            c[lo_v], c[up_v] = -1.0, 1.0  # prefer tight boxes
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs),
                  bounds=(-COORD_BOUND, COORD_BOUND), method="highs")
    if res.status != 0:
        return False
    x = np.round(np.asarray(res.x) * GRID) / GRID

    saved = (params.entity_base[:, D].copy(), params.entity_bump[:, D].copy(),
             params.box_a[:, D].copy(), params.box_b[:, D].copy())
    params.entity_base[:, D] = x[:n_e]
    params.entity_bump[:, D] = x[n_e:2 * n_e]
    for rel in range(model.vocab.n_relations):
        for p in range(n_max):
            lo_v, up_v = box_vars(rel, p)
            slot = params.slot_of[rel][p]
            params.box_a[slot, D] = x[lo_v]
            params.box_b[slot, D] = x[up_v]
    for key, want in expected.items():
        if _classify_padded(model, model.pad(key)) != want:
            (params.entity_base[:, D], params.entity_bump[:, D],
             params.box_a[:, D], params.box_b[:, D]) = saved
            return False
    model.witness[model.pad(target)] = (p_star, D)
    return True


def _flip_general(model: ExactFitModel, fact: Fact,
                  expected: dict[tuple, bool]) -> None:
    key = (fact.relation, *fact.entities)
    padded = model.pad(key)
    rel, tail = padded[0], padded[2:]
    n_e = model.vocab.n_entities
    block = n_e ** (model.n_max - 1)
    canonical = dim_index(rel, tail, n_e)
    dims = [canonical] + [D for D in range(rel * block, (rel + 1) * block)
                          if D != canonical]
    positions = list(range(1, model.n_max)) + [0]
    for D in dims:
        for p_star in positions:
            if _flip_lp_candidate(model, key, p_star, D, expected):
                return
    raise ExactFitError(
        f"no exit placement found for fact {key} over relation block dims")


def flip_fact(model: ExactFitModel, fact: Fact) -> bool:
    """Make a currently-true fact classify false, changing no other fact.

    Returns True if a flip happened; flipping an already-false fact is a
    no-op returning False.
    """
    if not classify(model, fact):
        return False
    if model.all_binary:
        _flip_binary(model, fact)
    else:
        expected = _classification_snapshot(model)
        expected[(fact.relation, *fact.entities)] = False
        _flip_general(model, fact, expected)
    model.flips += 1
    return True


def fit(table: TruthTable) -> ExactFitModel:
    """Build a model classifying ``table`` exactly (flip each false entry)."""
    n_max = max(table.vocab.relation_arities, default=0)
    if n_max < 2:
        raise ValueError(
            "exact fitting requires at least one relation of arity > 1")
    model = build_all_true(table.vocab)
    if model.all_binary:
        for key in sorted(table.truth):
            if not table.truth[key]:
                flip_fact(model, Fact(key[0], key[1:]))
    else:
        # flips leave all other bits untouched, so the expected
        # classification can be maintained incrementally
        expected = {key: True for key in table.truth}
        for key in sorted(table.truth):
            if not table.truth[key]:
                expected[key] = False
                _flip_general(model, Fact(key[0], key[1:]), expected)
                model.flips += 1
    model.exact = all(classify(model, Fact(key[0], key[1:])) == want
                      for key, want in table.truth.items())
    return model
