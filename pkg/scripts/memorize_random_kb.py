"""Memorization benchmark: fit a random binary KB and report train-split ranking.

A model with enough capacity should drive filtered train MRR to ~1.0; this is
the quickest end-to-end health check of the scoring/training/evaluation stack.
"""
import argparse
import json
import sys
import time

from boxkb.evaluation import evaluate
from boxkb.model import init_params, save_checkpoint
from boxkb.synth import random_binary_kb
from boxkb.training import STREAM_INIT, TrainConfig, stream_rng, train_model


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--entities", type=int, default=20)
    ap.add_argument("--relations", type=int, default=3)
    ap.add_argument("--facts", type=int, default=100)
    ap.add_argument("--d", type=int, default=60)
    ap.add_argument("--epochs", type=int, default=400)
    ap.add_argument("--learning-rate", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write the final checkpoint here")
    args = ap.parse_args(argv)

    kb = random_binary_kb(args.entities, args.relations, args.facts,
                          seed=args.seed)
    params = init_params(kb.vocab, args.d, stream_rng(args.seed, STREAM_INIT))
    cfg = TrainConfig(learning_rate=args.learning_rate, margin=3.0,
                      negatives=10, adversarial_temperature=1.0,
                      batch_size=128, epochs=args.epochs, seed=args.seed,
                      checkpoint_every=10 ** 9, filter_train_negatives=True)
    t0 = time.time()
    history = train_model(params, kb, cfg)
    report = evaluate(params, kb, "train")
    if args.out:
        save_checkpoint(params, args.out)
    json.dump({"entities": args.entities, "relations": args.relations,
               "facts": args.facts, "d": args.d, "epochs": len(history),
               "final_loss": history[-1]["mean_loss"],
               "train_mrr": report["mrr"], "train_mr": report["mr"],
               "hits": report["hits"],
               "wall_seconds": round(time.time() - t0, 2)}, sys.stdout)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
