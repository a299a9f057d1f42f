"""Command-line interface.

Subcommands: ``train``, ``eval``, ``fit-exact``, ``rules closure|verify|
inject-check``, ``box-stats``.  Structured output is JSON on stdout; logs go
to stderr at the level named by the BOXKB_LOG environment variable.  Train
options come from defaults, then a flat ``key = value`` config file, then
command-line flags (later wins); the effective config is echoed into the
output directory so a run can be reproduced from it alone.

Exit codes: 0 success, 1 configuration/input error, 2 training abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .evaluation import evaluate
from .exact_fit import TableFormatError, fit, parse_table
from .kb import (FORMAT_NARY, FORMAT_TRIPLE, Fact, KBFormatError,
                 KnowledgeBase, Vocabulary, augment_inverses, parse_kb)
from .model import init_params, load_checkpoint, save_checkpoint
from .rules import (InconsistentRulesError, RuleError, UnsupportedRuleError,
                    box_stats, check_capture, deductive_closure, inject,
                    parse_rules)
from .training import (STREAM_INIT, TrainConfig, TrainingAbort, stream_rng,
                       train_model)

log = logging.getLogger("boxkb")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: str = ""
    valid: str = ""
    test: str = ""
    format: str = FORMAT_TRIPLE
    d: int = 50
    norm_order: int = 2
    bounded: bool = True
    rules: str = ""
    outdir: str = ""
    workers: int = 1
    augment_inverses: bool = False
    learning_rate: float = 1e-3
    margin: float = 3.0
    negatives: int = 10
    adversarial_temperature: float = 1.0
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    checkpoint_every: int = 100
    filter_train_negatives: bool = False

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, margin=self.margin,
            negatives=self.negatives,
            adversarial_temperature=self.adversarial_temperature,
            batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
            checkpoint_every=self.checkpoint_every,
            filter_train_negatives=self.filter_train_negatives)

    def validate(self) -> None:
        if not self.train:
            raise ConfigError("a training data path is required")
        if self.format not in (FORMAT_TRIPLE, FORMAT_NARY):
            raise ConfigError(f"unknown data format {self.format!r}")
        if self.d < 1:
            raise ConfigError("d must be at least 1")
        if self.norm_order not in (1, 2):
            raise ConfigError("norm_order must be 1 or 2")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        try:
            self.train_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_BOOL_FIELDS = {"bounded", "augment_inverses", "filter_train_negatives"}


def _coerce(field: str, raw: str):
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    if field not in types:
        raise ConfigError(f"unknown config key {field!r}")
    if field in _BOOL_FIELDS:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {field!r} expects a boolean, got {raw!r}")
    kind = {"str": str, "int": int, "float": float}[types[field]]
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {field!r} expects {types[field]}, got {raw!r}")


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; # comments; quotes around strings optional."""
    values = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = text.partition("=")
            key, raw = key.strip(), raw.strip().strip("\"'")
            values[key] = _coerce(key, raw)
    return values


def write_config_file(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(RunConfig):
            value = getattr(cfg, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            fh.write(f"{f.name} = {value}\n")


def load_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            setattr(cfg, key, value)
    for f in dataclasses.fields(RunConfig):
        override = getattr(args, f.name, None)
        if override is not None:
            setattr(cfg, f.name, override)
    cfg.validate()
    return cfg


def _load_kb(cfg: RunConfig) -> KnowledgeBase:
    for path in (cfg.train, cfg.valid, cfg.test):
        if path and not os.path.exists(path):
            raise ConfigError(f"data file not found: {path}")
    kb = parse_kb(cfg.train, cfg.valid or None, cfg.test or None, fmt=cfg.format)
    if cfg.augment_inverses:
        kb = augment_inverses(kb)
    return kb


def _remap_kb(kb: KnowledgeBase, vocab: Vocabulary) -> KnowledgeBase:
    """Re-index facts into a checkpoint's vocabulary (ids may differ)."""
    def remap(fact: Fact) -> Fact:
        try:
            rel = vocab.relation_id(kb.vocab.relation_names[fact.relation])
            ents = tuple(vocab.entity_id(kb.vocab.entity_names[e])
                         for e in fact.entities)
        except KeyError as exc:
            raise ConfigError(
                f"dataset name missing from checkpoint vocabulary: {exc}")
        return Fact(rel, ents)

    splits = {name: tuple(remap(f) for f in kb.split(name))
              for name in ("train", "valid", "test")}
    known = frozenset(f for facts in splits.values() for f in facts)
    n_scored = kb.n_scored_relations
    if n_scored == kb.vocab.n_relations:
        n_scored = vocab.n_relations
    return KnowledgeBase(vocab=vocab, known=known,
                         n_scored_relations=n_scored, **splits)


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout)
    sys.stdout.write("\n")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    if not cfg.outdir:
        raise ConfigError("an output directory is required for training")
    kb = _load_kb(cfg)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    params = init_params(kb.vocab, cfg.d, stream_rng(cfg.seed, STREAM_INIT),
                         norm_order=cfg.norm_order, bounded=cfg.bounded)
    plan = None
    if cfg.rules:
        rules = parse_rules(cfg.rules, kb.vocab)
        plan = inject(rules, params)
        log.info("injected %d rules (closure %d, initial growth %d)",
                 len(rules), len(plan.ruleset.closure), plan.initial_growth)
    write_config_file(cfg, outdir / "config.txt")
    best = {"mrr": -1.0, "epoch": None}
    best_path = outdir / "best.json"
    stats: dict = {}

    def on_checkpoint(epoch: int, params, metrics: dict) -> None:
        save_checkpoint(params, outdir / "checkpoint.json")
        if kb.valid:
            m = evaluate(params, kb, "valid", workers=cfg.workers)
            log.info("epoch %d: valid filtered MRR %.4f", epoch, m["mrr"])
            if m["mrr"] > best["mrr"]:
                best.update(mrr=m["mrr"], epoch=epoch)
                save_checkpoint(params, best_path)
        else:
            best.update(mrr=None, epoch=epoch)
            save_checkpoint(params, best_path)

    with open(outdir / "metrics.jsonl", "w", encoding="utf-8") as metrics_fh:
        history = train_model(params, kb, cfg.train_config(),
                              projection_plan=plan, metrics_fh=metrics_fh,
                              on_checkpoint=on_checkpoint, stats=stats)
    _emit({
        "epochs": len(history),
        "final": history[-1] if history else None,
        "best": best if kb.valid else {"mrr": None, "epoch": best["epoch"]},
        "best_checkpoint": str(best_path),
        "stats": stats,
    })
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    params = _load_params(args.checkpoint)
    kb = _remap_kb(_load_kb(cfg), params.vocab)
    ks = _parse_ks(args.ks)
    _emit(evaluate(params, kb, args.split, ks=ks, workers=cfg.workers))
    return 0


def _load_params(path: str):
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load checkpoint: {exc}") from exc


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(k) for k in text.split(","))
    except ValueError:
        raise ConfigError(f"bad Hits@K list {text!r}")
    if not ks or any(k < 1 for k in ks):
        raise ConfigError("Hits@K values must be positive integers")
    return ks


def cmd_fit_exact(args: argparse.Namespace) -> int:
    table = parse_table(args.table)
    try:
        model = fit(table)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.out:
        save_checkpoint(model.params, args.out)
    _emit({"table_bits": table.n_facts, "flips": model.flips,
           "exact": bool(model.exact)})
    return 0 if model.exact else 1


def _vocab_from_rule_file(path) -> Vocabulary:
    """Standalone rule tooling: every mentioned relation, binary by default."""
    vocab = Vocabulary()
    if not os.path.exists(path):
        raise ConfigError(f"rule file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            tokens = line.split("#", 1)[0].split()
            for name in tokens[1:]:
                vocab.relation_id(name, arity=2, create=True)
    return vocab


def cmd_rules(args: argparse.Namespace) -> int:
    if args.rules_command == "closure":
        vocab = _vocab_from_rule_file(args.rules)
        rules = parse_rules(args.rules, vocab)
        closed = deductive_closure(rules)
        _emit({"rules": [r.format(vocab) for r in rules],
               "closure": [r.format(vocab) for r in closed]})
        return 0
    if args.rules_command == "verify":
        params = _load_params(args.checkpoint)
        rules = parse_rules(args.rules, params.vocab)
        results = []
        for rule in rules:
            entry = {"rule": rule.format(params.vocab)}
            try:
                res = check_capture(params, rule, tolerance=args.tolerance)
                entry["captured"] = res.captured
                entry["witness"] = res.witness
            except UnsupportedRuleError as exc:
                entry["error"] = str(exc)
            results.append(entry)
        _emit({"results": results})
        return 0
    if args.rules_command == "inject-check":
        vocab = _vocab_from_rule_file(args.rules)
        rules = parse_rules(args.rules, vocab)
        params = init_params(vocab, args.d, stream_rng(args.seed, STREAM_INIT))
        try:
            plan = inject(rules, params)
        except InconsistentRulesError as exc:
            _emit({"consistent": False, "conflict": {
                "kind": exc.report.kind,
                "message": exc.report.message,
                "chain": [r.format(vocab) for r in exc.report.chain]}})
            return 1
        classes = len(set(plan.sharing.values())) if plan.sharing else 0
        _emit({"consistent": True,
               "rules": len(rules),
               "closure_size": len(plan.ruleset.closure),
               "sharing_classes": classes,
               "containment_constraints": len(plan.containments),
               "initial_growth": plan.initial_growth})
        return 0
    raise ConfigError(f"unknown rules subcommand {args.rules_command!r}")


def cmd_box_stats(args: argparse.Namespace) -> int:
    params = _load_params(args.checkpoint)
    _emit(box_stats(params))
    return 0


def _add_run_config_args(p: argparse.ArgumentParser, with_training: bool) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--train", help="training split path")
    p.add_argument("--valid", help="validation split path")
    p.add_argument("--test", help="test split path")
    p.add_argument("--format", choices=[FORMAT_TRIPLE, FORMAT_NARY],
                   help="data file format")
    p.add_argument("--workers", type=int, help="parallel evaluation workers "
                   "(1 is bit-reproducible)")
    p.add_argument("--augment-inverses", dest="augment_inverses",
                   action=argparse.BooleanOptionalAction,
                   help="add an inverse relation and reversed fact per fact")
    if with_training:
        p.add_argument("--d", type=int, help="embedding dimensionality")
        p.add_argument("--norm-order", dest="norm_order", type=int,
                       help="distance norm (1 or 2)")
        p.add_argument("--bounded", action=argparse.BooleanOptionalAction,
                       help="squash points and corners through tanh")
        p.add_argument("--rules", help="rule file to inject before training")
        p.add_argument("--outdir", help="output directory")
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--margin", type=float)
        p.add_argument("--negatives", type=int)
        p.add_argument("--adversarial-temperature",
                       dest="adversarial_temperature", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
        p.add_argument("--filter-train-negatives",
                       dest="filter_train_negatives",
                       action=argparse.BooleanOptionalAction,
                       help="re-draw negatives that are known training facts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxkb",
        description="Knowledge-base completion with box embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_run_config_args(p, with_training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--ks", default="1,3,10", help="comma-separated Hits@K cutoffs")
    _add_run_config_args(p, with_training=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit-exact", help="exactly fit a truth table")
    p.add_argument("table", help="truth table file")
    p.add_argument("--out", help="write the fitted checkpoint here")
    p.set_defaults(func=cmd_fit_exact)

    p = sub.add_parser("rules", help="rule tooling")
    rsub = p.add_subparsers(dest="rules_command", required=True)
    pc = rsub.add_parser("closure", help="print the deductive closure")
    pc.add_argument("--rules", required=True)
    pv = rsub.add_parser("verify", help="check capture of each rule")
    pv.add_argument("--rules", required=True)
    pv.add_argument("--checkpoint", required=True)
    pv.add_argument("--tolerance", type=float, default=1e-6)
    pi = rsub.add_parser("inject-check",
                         help="consistency check plus dry-run injection")
    pi.add_argument("--rules", required=True)
    pi.add_argument("--d", type=int, default=50)
    pi.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("box-stats", help="box shape report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_box_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("BOXKB_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingAbort as exc:
        log.error("%s", exc)
        json.dump(exc.diagnostic, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (ConfigError, KBFormatError, RuleError, TableFormatError) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
