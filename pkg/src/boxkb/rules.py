"""Logical rules over relations: parsing, closure, capture, and injection.

Supported rule forms (one per line in rule files, ``#`` comments allowed):

    symmetry r          r(x,y) => r(y,x)
    antisymmetry r      r(x,y) => not r(y,x)
    inversion r1 r2     r1(x,y) <=> r2(y,x)
    hierarchy r1 r2     r1(x,y) => r2(x,y)
    intersection r1 r2 r3   r1(x,y) and r2(x,y) => r3(x,y)
    exclusion r1 r2     r1(x,y) and r2(x,y) => false
    composition r1 r2 r3    r1(x,y) and r2(y,z) => r3(x,z)

A rule is *captured* by a parameter configuration when a geometric condition
guarantees the rule holds for every entity assignment: box equality for
symmetry/inversion, containment for hierarchy/intersection, empty
head-tail overlap for antisymmetry, and per-position disjointness for
exclusion.  Composition has no such condition and is check-rejected.

*Injection* makes the sufficient condition hold and keeps it holding:
symmetry/inversion collapse box slots to shared parameters (identity cannot
be broken by any gradient step), while hierarchy/intersection become
containment constraints re-established after every optimizer step by growing
head boxes minimally (projection).  Only those four forms are injectable.

The deductive closure treats hierarchy and intersection rules as a
propositional Horn theory over relations (r1 => r2 and r1 and r2 => r3) and
returns every non-tautological hierarchy/intersection rule entailed by it,
computed by forward chaining from each candidate body.  Other forms pass
through untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .geometry import Box, intersect
from .kb import Vocabulary
from .model import ModelParams

SYMMETRY = "symmetry"
ANTISYMMETRY = "antisymmetry"
INVERSION = "inversion"
HIERARCHY = "hierarchy"
INTERSECTION = "intersection"
EXCLUSION = "exclusion"
COMPOSITION = "composition"

FORM_ARITY = {SYMMETRY: 1, ANTISYMMETRY: 1, INVERSION: 2, HIERARCHY: 2,
              INTERSECTION: 3, EXCLUSION: 2, COMPOSITION: 3}

# forms whose relation list is unordered (normalized ascending on construction)
_COMMUTATIVE_PREFIX = {INVERSION: 2, EXCLUSION: 2, INTERSECTION: 2}

INJECTABLE_FORMS = frozenset({SYMMETRY, INVERSION, HIERARCHY, INTERSECTION})


class RuleError(ValueError):
    pass


class RuleParseError(RuleError):
    pass


class UnsupportedRuleError(RuleError):
    pass


class InconsistentRulesError(RuleError):
    def __init__(self, report: "ConflictReport"):
        super().__init__(str(report))
        self.report = report


class ProjectionError(RuntimeError):
    """Internal invariant breach: projection exceeded its growth bound."""


@dataclass(frozen=True)
class Rule:
    form: str
    relations: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.form not in FORM_ARITY:
            raise RuleError(f"unknown rule form {self.form!r}")
        rels = tuple(int(r) for r in self.relations)
        want = FORM_ARITY[self.form]
        if len(rels) != want:
            raise RuleError(
                f"{self.form} takes {want} relation(s), got {len(rels)}")
        k = _COMMUTATIVE_PREFIX.get(self.form)
        if k is not None:
            rels = tuple(sorted(rels[:k])) + rels[k:]
        object.__setattr__(self, "relations", rels)
        if self.form in (INVERSION, HIERARCHY, EXCLUSION) and rels[0] == rels[1]:
            raise RuleError(f"{self.form} requires two distinct relations")
        if self.form == INTERSECTION and (
                rels[0] == rels[1] or rels[2] in rels[:2]):
            raise RuleError("intersection requires three distinct relations")

    def format(self, vocab: Vocabulary | None = None) -> str:
        if vocab is None:
            names = [str(r) for r in self.relations]
        else:
            names = [vocab.relation_names[r] for r in self.relations]
        return " ".join([self.form, *names])

    def __str__(self) -> str:
        return self.format()


def parse_rules(path, vocab: Vocabulary) -> list[Rule]:
    """One rule per line; relations given by name.  Errors carry line numbers."""
    rules = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            tokens = text.split()
            form, names = tokens[0], tokens[1:]
            try:
                rel_ids = tuple(vocab.relation_id(n) for n in names)
                rule = Rule(form, rel_ids)
            except (KeyError, RuleError) as exc:
                raise RuleParseError(f"{path}:{lineno}: {exc}") from exc
            arities = {vocab.arity(r) for r in rule.relations}
            if len(arities) > 1:
                raise RuleParseError(
                    f"{path}:{lineno}: relations of mixed arity in one rule")
            if arities != {2} and form not in (HIERARCHY, INTERSECTION, EXCLUSION):
                raise RuleParseError(
                    f"{path}:{lineno}: {form} is only defined for binary relations")
            rules.append(rule)
    return rules


def _horn_theory(rules: Iterable[Rule]) -> list[tuple[frozenset[int], int]]:
    """Hierarchy/intersection rules as (body relation set, head relation)."""
    clauses = []
    for r in rules:
        if r.form == HIERARCHY:
            clauses.append((frozenset([r.relations[0]]), r.relations[1]))
        elif r.form == INTERSECTION:
            clauses.append((frozenset(r.relations[:2]), r.relations[2]))
    return clauses


def _forward_chain(seeds: frozenset[int],
                   clauses: list[tuple[frozenset[int], int]],
                   parents: dict | None = None) -> frozenset[int]:
    """Unit propagation; optionally records the clause deriving each relation."""
    known = set(seeds)
    changed = True
    while changed:
        changed = False
        for body, head in clauses:
            if head not in known and body <= known:
                known.add(head)
                if parents is not None:
                    parents[head] = (body, head)
                changed = True
    return frozenset(known)


def deductive_closure(rules: list[Rule],
                      universe: Iterable[int] | None = None) -> list[Rule]:
    """All hierarchy/intersection rules semantically entailed by the input.

    A candidate h(a,b) is entailed iff b follows from {a} by forward
    chaining; i(a,b,c) iff c follows from {a,b}.  Tautologies (head inside
    the body) are excluded.  Rules of other forms pass through unchanged.

    ``universe`` is the relation vocabulary candidates are drawn from; the
    default is the relations mentioned in the input, which yields the full
    entailment set restricted to rules over mentioned relations.  (A wider
    universe adds entailed rules that involve unconstrained relations, e.g.
    h(a,c) entails i(a,b,c) for every other relation b.)
    """
    clauses = _horn_theory(rules)
    passthrough = sorted({r for r in rules
                          if r.form not in (HIERARCHY, INTERSECTION)},
                         key=lambda r: (r.form, r.relations))
    if universe is None:
        universe = {rel for body, head in clauses for rel in body | {head}}
    universe = sorted(universe)
    out: set[Rule] = set()
    for a in universe:
        reach_a = _forward_chain(frozenset([a]), clauses)
        for b in reach_a:
            if b != a:
                out.add(Rule(HIERARCHY, (a, b)))
    for i, a in enumerate(universe):
        for b in universe[i + 1:]:
            reach = _forward_chain(frozenset([a, b]), clauses)
            for c in reach:
                if c != a and c != b:
                    out.add(Rule(INTERSECTION, (a, b, c)))
    derived = sorted(out, key=lambda r: (r.form, r.relations))
    return passthrough + derived


def _sharing_edges(rules: Iterable[Rule]) -> list[tuple[tuple[int, int], tuple[int, int], Rule]]:
    """Box-slot identifications implied by symmetry/inversion rules."""
    edges = []
    for r in rules:
        if r.form == SYMMETRY:
            rel = r.relations[0]
            edges.append(((rel, 0), (rel, 1), r))
        elif r.form == INVERSION:
            r1, r2 = r.relations
            edges.append(((r1, 0), (r2, 1), r))
            edges.append(((r1, 1), (r2, 0), r))
    return edges


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x, y) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            # smaller key wins so canonical representatives are stable
            lo, hi = sorted((rx, ry))
            self.parent[hi] = lo


@dataclass
class ConflictReport:
    kind: str
    message: str
    chain: list[Rule] = field(default_factory=list)

    def __str__(self) -> str:
        lines = [f"inconsistent rules ({self.kind}): {self.message}"]
        lines += [f"  via: {r}" for r in self.chain]
        return "\n".join(lines)


def _merge_path(edges, start, goal) -> list[Rule]:
    """Rules along one path from start to goal in the sharing graph."""
    adj: dict = {}
    for a, b, rule in edges:
        adj.setdefault(a, []).append((b, rule))
        adj.setdefault(b, []).append((a, rule))
    prev = {start: None}
    queue = [start]
    while queue:
        node = queue.pop(0)
        if node == goal:
            break
        for nxt, rule in adj.get(node, []):
            if nxt not in prev:
                prev[nxt] = (node, rule)
                queue.append(nxt)
    if goal not in prev:
        return []
    chain = []
    node = goal
    while prev[node] is not None:
        node, rule = prev[node]
        if not chain or chain[-1] is not rule:
            chain.append(rule)
    return list(reversed(chain))


def _derivation_chain(target: int, seeds: frozenset[int],
                      clauses: list[tuple[frozenset[int], int]]) -> list[Rule]:
    parents: dict = {}
    _forward_chain(seeds, clauses, parents)
    chain: list[Rule] = []
    seen = set()

    def emit(rel: int) -> None:
        if rel in seeds or rel in seen or rel not in parents:
            return
        seen.add(rel)
        body, head = parents[rel]
        for b in body:
            emit(b)
        body_t = tuple(sorted(body))
        rule = Rule(HIERARCHY, (body_t[0], head)) if len(body_t) == 1 \
            else Rule(INTERSECTION, (*body_t, head))
        chain.append(rule)

    emit(target)
    return chain


def check_consistency(rules: list[Rule],
                      vocab: Vocabulary | None = None) -> ConflictReport | None:
    """First conflict making the rule set jointly uncapturable, else None.

    Detects: (a) a relation that is antisymmetric yet forced symmetric by
    the symmetry/inversion sharing graph; (b) an exclusion pair jointly
    implied by some single relation through hierarchy/intersection chains;
    (c) an exclusion pair whose boxes are forced identical by sharing.
    Messages use relation names when a vocabulary is supplied.
    """
    def name(rel: int) -> str:
        if vocab is not None:
            return vocab.relation_names[rel]
        return f"relation#{rel}"

    edges = _sharing_edges(rules)
    uf = _UnionFind()
    for a, b, _ in edges:
        uf.union(a, b)
    clauses = _horn_theory(rules)
    universe = sorted({rel for body, head in clauses for rel in body | {head}})

    for r in sorted((r for r in rules if r.form == ANTISYMMETRY),
                    key=lambda r: r.relations):
        rel = r.relations[0]
        if uf.find((rel, 0)) == uf.find((rel, 1)):
            chain = _merge_path(edges, (rel, 0), (rel, 1))
            return ConflictReport(
                "symmetry-vs-antisymmetry",
                f"{name(rel)} is antisymmetric but its head and tail "
                f"boxes are forced equal",
                chain=chain + [r])

    for r in sorted((r for r in rules if r.form == EXCLUSION),
                    key=lambda r: r.relations):
        e1, e2 = r.relations
        for seed in universe:
            reach = _forward_chain(frozenset([seed]), clauses)
            if e1 in reach and e2 in reach:
                chain = (_derivation_chain(e1, frozenset([seed]), clauses)
                         + _derivation_chain(e2, frozenset([seed]), clauses))
                return ConflictReport(
                    "implied-overlap",
                    f"any fact of {name(seed)} would satisfy both "
                    f"excluded relations {name(e1)} and {name(e2)}",
                    chain=chain + [r])
        if uf.find((e1, 0)) == uf.find((e2, 0)) or uf.find((e1, 1)) == uf.find((e2, 1)):
            # sharing is flip-compatible, so one matched position means both
            start, goal = ((e1, 0), (e2, 0)) if uf.find((e1, 0)) == uf.find((e2, 0)) \
                else ((e1, 1), (e2, 1))
            return ConflictReport(
                "sharing-vs-exclusion",
                f"excluded relations {name(e1)} and {name(e2)} share box "
                f"parameters at every position",
                chain=_merge_path(edges, start, goal) + [r])
    return None


@dataclass
class RuleSet:
    """Rules plus everything injection derives from them."""
    rules: list[Rule]
    closure: list[Rule]
    sharing: dict[tuple[int, int], tuple[int, int]]
    containments: list[tuple[tuple[tuple[int, int], ...], tuple[int, int]]]
    disjointness: list[tuple[tuple[int, int], tuple[int, int]]]

    @classmethod
    def build(cls, rules: list[Rule], n_positions: int = 2) -> "RuleSet":
        closure = deductive_closure(rules)
        uf = _UnionFind()
        for a, b, _ in _sharing_edges(rules):
            uf.union(a, b)
        sharing = {slot: uf.find(slot) for slot in list(uf.parent)}
        containments = []
        for r in closure:
            if r.form == HIERARCHY:
                body, head = r.relations[:1], r.relations[1]
            elif r.form == INTERSECTION:
                body, head = r.relations[:2], r.relations[2]
            else:
                continue
            for p in range(n_positions):
                containments.append(
                    (tuple((b, p) for b in body), (head, p)))
        disjointness = [((r.relations[0], p), (r.relations[1], p))
                        for r in rules if r.form == EXCLUSION
                        for p in range(n_positions)]
        return cls(rules, closure, sharing, containments, disjointness)


class CaptureResult(NamedTuple):
    captured: bool
    witness: dict | None


def _boxes_equal(a: Box, b: Box, tol: float) -> tuple[bool, dict | None]:
    for side, va, vb in (("lower", a.lower, b.lower), ("upper", a.upper, b.upper)):
        delta = np.abs(va - vb)
        j = int(np.argmax(delta))
        if delta[j] > tol:
            return False, {"dimension": j, "side": side, "delta": float(delta[j])}
    return True, None


def _contains_with_tol(outer: Box, inner: Box, tol: float) -> tuple[bool, dict | None]:
    low_gap = outer.lower - inner.lower
    j = int(np.argmax(low_gap))
    if low_gap[j] > tol:
        return False, {"dimension": j, "side": "lower", "delta": float(low_gap[j])}
    high_gap = inner.upper - outer.upper
    j = int(np.argmax(high_gap))
    if high_gap[j] > tol:
        return False, {"dimension": j, "side": "upper", "delta": float(high_gap[j])}
    return True, None


def _disjoint_dim(a: Box, b: Box, tol: float) -> int | None:
    # tol = 0 demands a strict gap (agrees with intersect() emptiness);
    # tol > 0 additionally accepts overlaps of depth at most tol
    gap = np.maximum(a.lower - b.upper, b.lower - a.upper)
    j = int(np.argmax(gap))
    threshold = -tol if tol > 0 else 0.0
    return j if gap[j] > threshold else None


def check_capture(params: ModelParams, rule: Rule, tolerance: float = 0.0
                  ) -> CaptureResult:
    """Does the geometric sufficient condition for ``rule`` hold in ``params``?

    Positions and dimensions in witnesses are 0-based.  For exclusion the
    witness reports the position/dimension establishing disjointness on
    success; for all other forms the witness describes the first violation
    on failure.
    """
    form, rels = rule.form, rule.relations
    if form == COMPOSITION:
        raise UnsupportedRuleError(
            "composition has no geometric capture condition")
    arity = params.vocab.arity(rels[0])

    if form == SYMMETRY:
        ok, w = _boxes_equal(params.effective_box(rels[0], 0),
                             params.effective_box(rels[0], 1), tolerance)
        return CaptureResult(ok, w)
    if form == INVERSION:
        for p, q in ((0, 1), (1, 0)):
            ok, w = _boxes_equal(params.effective_box(rels[0], p),
                                 params.effective_box(rels[1], q), tolerance)
            if not ok:
                w["position"] = p
                return CaptureResult(False, w)
        return CaptureResult(True, None)
    if form == ANTISYMMETRY:
        head = params.effective_box(rels[0], 0)
        tail = params.effective_box(rels[0], 1)
        j = _disjoint_dim(head, tail, tolerance)
        if j is None:
            return CaptureResult(False, {"reason": "head and tail boxes overlap"})
        return CaptureResult(True, {"dimension": j})
    if form == HIERARCHY:
        for p in range(arity):
            ok, w = _contains_with_tol(params.effective_box(rels[1], p),
                                       params.effective_box(rels[0], p),
                                       tolerance)
            if not ok:
                w["position"] = p
                return CaptureResult(False, w)
        return CaptureResult(True, None)
    if form == INTERSECTION:
        for p in range(arity):
            region = intersect(params.effective_box(rels[0], p),
                               params.effective_box(rels[1], p))
            if region is None:
                continue  # empty body region, vacuously satisfied
            ok, w = _contains_with_tol(params.effective_box(rels[2], p),
                                       region, tolerance)
            if not ok:
                w["position"] = p
                return CaptureResult(False, w)
        return CaptureResult(True, None)
    if form == EXCLUSION:
        for p in range(arity):
            j = _disjoint_dim(params.effective_box(rels[0], p),
                              params.effective_box(rels[1], p), tolerance)
            if j is not None:
                return CaptureResult(True, {"position": p, "dimension": j})
        return CaptureResult(False, {"reason": "no position with disjoint boxes"})
    raise RuleError(f"unknown rule form {form!r}")


@dataclass
class InjectionPlan:
    ruleset: RuleSet
    sharing: dict[int, int]                      # model slot -> canonical slot
    containments: list[tuple[np.ndarray, int]]   # body model slots, head slot
    initial_growth: int = 0


def inject(rules: list[Rule], params: ModelParams) -> InjectionPlan:
    """Constrain ``params`` so every rule provably holds now and forever.

    Symmetry and inversion become shared box slots; hierarchy and
    intersection (after closure) become containment constraints enforced by
    an initial projection and re-enforced by apply_projection after every
    optimizer step.  Raises for inconsistent sets and for forms outside
    {symmetry, inversion, hierarchy, intersection}.
    """
    report = check_consistency(rules, params.vocab)
    if report is not None:
        raise InconsistentRulesError(report)
    bad = sorted({r.form for r in rules if r.form not in INJECTABLE_FORMS})
    if bad:
        raise UnsupportedRuleError(
            f"rule forms not supported for injection: {', '.join(bad)} "
            f"(capture checking is still available)")
    arities = {params.vocab.arity(rel) for r in rules for rel in r.relations}
    n_positions = max(arities, default=2)
    if len(arities) > 1:
        raise RuleError("rules mix relations of different arities")
    rs = RuleSet.build(rules, n_positions=n_positions)
    pairs = [(int(params.slot_of[a[0]][a[1]]), int(params.slot_of[b[0]][b[1]]))
             for a, b, _ in _sharing_edges(rules)]
    sharing = params.merge_slots(pairs)
    containments = []
    seen = set()
    for body, head in rs.containments:
        body_slots = tuple(sorted(int(params.slot_of[r][p]) for r, p in body))
        head_slot = int(params.slot_of[head[0]][head[1]])
        if head_slot in body_slots:
            continue  # shared slots make this constraint trivially true
        key = (body_slots, head_slot)
        if key not in seen:
            seen.add(key)
            containments.append((np.array(body_slots, dtype=np.int64), head_slot))
    plan = InjectionPlan(rs, sharing, containments)
    plan.initial_growth = apply_projection(params, plan)
    return plan


def apply_projection(params: ModelParams, plan: InjectionPlan) -> int:
    """Grow head boxes minimally until every containment constraint holds.

    Works in raw corner space (tanh is monotone, so raw containment and
    effective containment coincide).  Computes the least fixpoint of all
    constraints first, then writes each changed bound once, so the returned
    number of bound moves never exceeds 2 * d * n_slots.  Constraints whose
    body intersection is empty are vacuously satisfied and skipped.
    """
    if not plan.containments:
        return 0
    lo = np.minimum(params.box_a, params.box_b)
    hi = np.maximum(params.box_a, params.box_b)
    orig_lo, orig_hi = lo.copy(), hi.copy()
    n_slots = params.n_slots
    sweep_limit = 4 * params.d * n_slots * n_slots + 2
    sweeps = 0
    while True:
        changed = False
        for body, head in plan.containments:
            rlo = lo[body].max(axis=0)
            rhi = hi[body].min(axis=0)
            if (rlo > rhi).any():
                continue
            if (rlo < lo[head]).any() or (rhi > hi[head]).any():
                np.minimum(lo[head], rlo, out=lo[head])
                np.maximum(hi[head], rhi, out=hi[head])
                changed = True
        sweeps += 1
        if not changed:
            break
        if sweeps > sweep_limit:
            raise ProjectionError(
                "projection failed to reach a fixpoint within its growth bound")
    lo_moved = lo < orig_lo
    hi_moved = hi > orig_hi
    moves = int(lo_moved.sum() + hi_moved.sum())
    if moves > 2 * params.d * n_slots:
        raise ProjectionError(
            f"projection moved {moves} bounds, exceeding the "
            f"2 * d * slots = {2 * params.d * n_slots} bound")
    changed_slots = np.nonzero(lo_moved.any(axis=1) | hi_moved.any(axis=1))[0]
    for s in changed_slots:
        a_is_min = params.box_a[s] <= params.box_b[s]
        params.box_a[s] = np.where(a_is_min, lo[s], hi[s])
        params.box_b[s] = np.where(a_is_min, hi[s], lo[s])
    return moves


def box_stats(params: ModelParams) -> dict:
    """Per relation/position box-shape report.

    Geometric mean side length uses effective (post-bounding) bounds and is
    exactly 0 when any side is degenerate.  Pairwise containment/overlap is
    reported per matching position for same-arity relation pairs.
    """
    vocab = params.vocab
    relations = []
    for rel in range(vocab.n_relations):
        positions = []
        for p in range(vocab.arity(rel)):
            box = params.effective_box(rel, p)
            sides = box.upper - box.lower
            if (sides == 0).any():
                gmean = 0.0
            else:
                gmean = float(np.exp(np.mean(np.log(sides))))
            positions.append({"position": p, "gmean_side": gmean})
        entry = {"relation": vocab.relation_names[rel], "positions": positions}
        if vocab.arity(rel) == 2:
            eq, _ = _boxes_equal(params.effective_box(rel, 0),
                                 params.effective_box(rel, 1), 0.0)
            entry["symmetry_shaped"] = eq
        relations.append(entry)
    pairs = []
    for r1 in range(vocab.n_relations):
        for r2 in range(r1 + 1, vocab.n_relations):
            if vocab.arity(r1) != vocab.arity(r2):
                continue
            for p in range(vocab.arity(r1)):
                a = params.effective_box(r1, p)
                b = params.effective_box(r2, p)
                eq, _ = _boxes_equal(a, b, 0.0)
                if eq:
                    relation = "equal"
                elif _contains_with_tol(a, b, 0.0)[0]:
                    relation = "contains"
                elif _contains_with_tol(b, a, 0.0)[0]:
                    relation = "inside"
                elif _disjoint_dim(a, b, 0.0) is not None:
                    relation = "disjoint"
                else:
                    relation = "overlap"
                pairs.append({"a": vocab.relation_names[r1],
                              "b": vocab.relation_names[r2],
                              "position": p, "relation": relation})
    return {"relations": relations, "pairs": pairs}
