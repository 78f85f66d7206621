"""One-shot hyperparameter search for the attention forecaster.

Builds (or loads) the frozen 5,000-row Sydney corpus, runs the staged
evolutionary grid search against a k-fold CV objective, and prints the best
configuration as a ``HyperParams(...)`` literal ready to paste into
``wavecast.training.tuned_hyperparams``.  Deterministic given its flags.

Usage:
    python3 tools/find_tuned_config.py --budget 60 --seed 0 \
        --cache /tmp/sydney5000_full.npy --trace /tmp/tune_trace.csv
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from wavecast.hyperopt import (cv_objective, default_search_space,
                               egs_optimize, write_trace_csv)
from wavecast.physics import generate_dataset


def load_corpus(args):
    if args.cache and os.path.exists(args.cache):
        rows = np.load(args.cache)
        print(f"loaded corpus {args.cache} {rows.shape}")
        return rows
    grid = np.logspace(np.log10(0.1), np.log10(6.3), args.omega_points)
    t0 = time.time()
    rows = generate_dataset("Sydney", args.rows, seed=args.corpus_seed,
                            omega_grid=grid)
    print(f"generated corpus in {time.time() - t0:.0f} s")
    if args.cache:
        np.save(args.cache, rows)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="cnn-bilstm-sa-h")
    ap.add_argument("--budget", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rows", type=int, default=5000)
    ap.add_argument("--corpus-seed", type=int, default=11)
    ap.add_argument("--omega-points", type=int, default=24)
    ap.add_argument("--folds", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--cache", default=None, help=".npy corpus cache path")
    ap.add_argument("--trace", default=None, help="write the search trace here")
    args = ap.parse_args()

    rows = load_corpus(args)
    x, y = rows[:, :32], rows[:, 48]
    space = default_search_space()
    fn = cv_objective(args.model, x, y, k=args.folds, epochs=args.epochs,
                      seed=args.seed)

    done = {"n": 0}
    t0 = time.time()

    def timed(params):
        t = time.time()
        score = fn(params)
        done["n"] += 1
        print(f"[{done['n']:3d}] {time.time() - t:5.1f}s score={score:+.4f} "
              f"cnf=({params['cnf1']},{params['cnf2']},{params['cnf3']},"
              f"{params['cnf4']}) nhu=({params['nhu1']},{params['nhu2']}) "
              f"bs={params['batch_size']} lr={params['learning_rate']:g} "
              f"at={params['attention_dim']} pdo=({params['pdo1']:.3f},"
              f"{params['pdo2']:.3f}) l2={params['l2_reg']:.2e}", flush=True)
        return score

    res = egs_optimize(timed, space, args.budget, seed=args.seed)
    print(f"\nstages: {res.stages}, {res.evaluations} evaluations, "
          f"{time.time() - t0:.0f} s total")
    print(f"best objective (mean R^2 over {args.folds} folds at "
          f"{args.epochs} epochs): {res.score:.4f}")
    if args.trace:
        write_trace_csv(args.trace, res.trace, sorted(space))
        print(f"trace written to {args.trace}")
    p = res.params
    print("\nHyperParams(")
    print(f"    cnf=({p['cnf1']}, {p['cnf2']}, {p['cnf3']}, {p['cnf4']}),")
    print(f"    nhu=({p['nhu1']}, {p['nhu2']}),")
    print(f"    pdo=({p['pdo1']!r}, {p['pdo2']!r}),")
    print(f"    batch_size={p['batch_size']},")
    print(f"    learning_rate={p['learning_rate']!r},")
    print(f"    attention_dim={p['attention_dim']},")
    print(f"    l2_reg={p['l2_reg']!r},")
    print(")")


if __name__ == "__main__":
    main()
