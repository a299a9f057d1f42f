"""Vocabulary, facts, and knowledge-base containers.

Entities and relations are interned to dense integer ids in first-appearance
order (train split first, then valid, then test) so that runs over the same
files always agree on the id layout.  Facts are immutable tuples, and a
knowledge base keeps a frozen membership index over the union of its splits
for duplicate detection and filtered evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

FORMAT_TRIPLE = "tsv-triple"
FORMAT_NARY = "tsv-nary"
FORMATS = (FORMAT_TRIPLE, FORMAT_NARY)

SPLITS = ("train", "valid", "test")


class KBFormatError(ValueError):
    """Raised for malformed input files or inconsistent fact data."""


class Fact(NamedTuple):
    relation: int
    entities: tuple[int, ...]

    @property
    def arity(self) -> int:
        return len(self.entities)


@dataclass
class Vocabulary:
    entity_names: list[str] = field(default_factory=list)
    relation_names: list[str] = field(default_factory=list)
    relation_arities: list[int] = field(default_factory=list)
    _entity_ids: dict[str, int] = field(default_factory=dict, repr=False)
    _relation_ids: dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def arity(self, relation: int) -> int:
        return self.relation_arities[relation]

    def entity_id(self, name: str, create: bool = False) -> int:
        eid = self._entity_ids.get(name)
        if eid is None:
            if not create:
                raise KeyError(f"unknown entity {name!r}")
            eid = len(self.entity_names)
            self.entity_names.append(name)
            self._entity_ids[name] = eid
        return eid

    def relation_id(self, name: str, arity: int | None = None, create: bool = False) -> int:
        rid = self._relation_ids.get(name)
        if rid is None:
            if not create:
                raise KeyError(f"unknown relation {name!r}")
            if arity is None:
                raise ValueError("arity required when creating a relation")
            rid = len(self.relation_names)
            self.relation_names.append(name)
            self.relation_arities.append(arity)
            self._relation_ids[name] = rid
        elif arity is not None and self.relation_arities[rid] != arity:
            raise KBFormatError(
                f"relation {name!r} used with arity {arity}, "
                f"previously seen with arity {self.relation_arities[rid]}"
            )
        return rid

    def copy(self) -> "Vocabulary":
        return Vocabulary(
            list(self.entity_names),
            list(self.relation_names),
            list(self.relation_arities),
            dict(self._entity_ids),
            dict(self._relation_ids),
        )


@dataclass(frozen=True)
class KnowledgeBase:
    vocab: Vocabulary
    train: tuple[Fact, ...]
    valid: tuple[Fact, ...]
    test: tuple[Fact, ...]
    known: frozenset[Fact]
    # Relations with id >= n_scored_relations are auxiliary (added by inverse
    # augmentation) and are skipped by ranking evaluation.
    n_scored_relations: int

    def split(self, name: str) -> tuple[Fact, ...]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def all_facts(self) -> tuple[Fact, ...]:
        return self.train + self.valid + self.test


def _parse_fact_line(line: str, fmt: str, lineno: int, path: str) -> tuple[str, list[str]]:
    cols = line.split("\t")
    if fmt == FORMAT_TRIPLE:
        if len(cols) != 3:
            raise KBFormatError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
        head, rel, tail = cols
        return rel, [head, tail]
    if len(cols) < 2:
        raise KBFormatError(f"{path}:{lineno}: expected relation plus at least one entity")
    return cols[0], cols[1:]


def _iter_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def _load_split(path: str | Path | None, fmt: str, vocab: Vocabulary, seen: set[Fact],
                split_name: str) -> tuple[Fact, ...]:
    if path is None:
        return ()
    facts: list[Fact] = []
    for lineno, line in _iter_lines(path):
        rel_name, ent_names = _parse_fact_line(line, fmt, lineno, str(path))
        rid = vocab.relation_id(rel_name, arity=len(ent_names), create=True)
        if vocab.relation_arities[rid] != len(ent_names):
            raise KBFormatError(f"{path}:{lineno}: arity mismatch for relation {rel_name!r}")
        fact = Fact(rid, tuple(vocab.entity_id(n, create=True) for n in ent_names))
        if fact in seen:
            raise KBFormatError(f"{path}:{lineno}: duplicate fact in {split_name} split")
        seen.add(fact)
        facts.append(fact)
    return tuple(facts)


def parse_kb(train_path: str | Path, valid_path: str | Path | None = None,
             test_path: str | Path | None = None, fmt: str = FORMAT_TRIPLE) -> KnowledgeBase:
    """Parse up to three split files into a knowledge base.

    Duplicates within a split are an error; a fact may legitimately appear in
    more than one split only if the files say so -- we treat cross-split
    duplicates as errors too, since they silently leak evaluation data.
    """
    if fmt not in FORMATS:
        raise KBFormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    vocab = Vocabulary()
    seen: set[Fact] = set()
    train = _load_split(train_path, fmt, vocab, seen, "train")
    valid = _load_split(valid_path, fmt, vocab, seen, "valid")
    test = _load_split(test_path, fmt, vocab, seen, "test")
    return KnowledgeBase(vocab, train, valid, test, frozenset(seen), vocab.n_relations)


def write_split(kb: KnowledgeBase, split: str, path: str | Path, fmt: str = FORMAT_TRIPLE) -> None:
    """Serialize one split back to disk in the given format."""
    if fmt not in FORMATS:
        raise KBFormatError(f"unknown format {fmt!r}")
    vocab = kb.vocab
    with open(path, "w", encoding="utf-8") as fh:
        for fact in kb.split(split):
            rel = vocab.relation_names[fact.relation]
            ents = [vocab.entity_names[e] for e in fact.entities]
            if fmt == FORMAT_TRIPLE:
                if len(ents) != 2:
                    raise KBFormatError("tsv-triple can only serialize binary facts")
                fh.write(f"{ents[0]}\t{rel}\t{ents[1]}\n")
            else:
                fh.write("\t".join([rel] + ents) + "\n")


def corrupt(fact: Fact, position: int, replacement: int) -> Fact:
    """Return a copy of the fact with one argument slot replaced."""
    if not 0 <= position < len(fact.entities):
        raise IndexError(f"position {position} out of range for arity {len(fact.entities)}")
    ents = list(fact.entities)
    ents[position] = replacement
    return Fact(fact.relation, tuple(ents))


INVERSE_SUFFIX = "_inv"


def augment_inverses(kb: KnowledgeBase) -> KnowledgeBase:
    """Pair every binary fact r(a, b) with a fact of a fresh inverse relation.

    The inverse of relation id r is id r + R where R is the original relation
    count.  Evaluation keeps ranking only the original relations.
    """
    vocab = kb.vocab
    r_orig = vocab.n_relations
    if any(a != 2 for a in vocab.relation_arities[:r_orig]):
        raise KBFormatError("inverse augmentation requires all relations binary")
    new_vocab = vocab.copy()
    for name in vocab.relation_names[:r_orig]:
        inv_name = name + INVERSE_SUFFIX
        if inv_name in new_vocab._relation_ids:
            raise KBFormatError(f"inverse relation name collision: {inv_name!r}")
        new_vocab.relation_id(inv_name, arity=2, create=True)

    def augmented(facts: tuple[Fact, ...]) -> tuple[Fact, ...]:
        out: list[Fact] = []
        for f in facts:
            out.append(f)
            out.append(Fact(f.relation + r_orig, (f.entities[1], f.entities[0])))
        return tuple(out)

    train, valid, test = augmented(kb.train), augmented(kb.valid), augmented(kb.test)
    known = frozenset(train + valid + test)
    return KnowledgeBase(new_vocab, train, valid, test, known, r_orig)
