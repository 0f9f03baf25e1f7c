"""Benchmark the compiled n-gram kernel against the pure-Python fallback.

N-gram counting is the one genuinely hot pure-Python loop in the
pipeline: every adversarial batch scores two rollouts per clip with
CIDEr, each of which counts candidate and reference n-grams for orders
1-4. Model math is numpy-bound and does not benefit from compilation.

Usage: python benchmarks/bench_ngrams.py [--captions N] [--repeats R]
"""
import argparse
import time

import numpy as np

from capgan import _ngram_py

try:
    from capgan import _ngram_cy
except ImportError:
    _ngram_cy = None


def make_corpus(rng, n_captions, vocab=120, min_len=4, max_len=22):
    words = [f"w{i}" for i in range(vocab)]
    return [
        [words[i] for i in rng.integers(0, vocab, size=rng.integers(min_len, max_len + 1))]
        for _ in range(n_captions)
    ]


def bench(module, corpus, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for caption in corpus:
            module.ngram_counts_upto(caption, 4)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--captions", type=int, default=20_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    corpus = make_corpus(rng, args.captions)
    total_tokens = sum(len(c) for c in corpus)
    print(f"{args.captions} captions, {total_tokens} tokens, orders 1-4, "
          f"best of {args.repeats} runs\n")

    t_py = bench(_ngram_py, corpus, args.repeats)
    print(f"python  backend: {t_py:.3f} s  ({total_tokens / t_py / 1e6:.2f} Mtok/s)")
    if _ngram_cy is None:
        print("cython  backend: not built (pip install -e . recompiles it)")
        return
    # sanity: identical counts before timing
    for caption in corpus[:50]:
        assert _ngram_py.ngram_counts_upto(caption, 4) == _ngram_cy.ngram_counts_upto(caption, 4)
    t_cy = bench(_ngram_cy, corpus, args.repeats)
    print(f"cython  backend: {t_cy:.3f} s  ({total_tokens / t_cy / 1e6:.2f} Mtok/s)")
    print(f"\nspeedup: {t_py / t_cy:.2f}x")


if __name__ == "__main__":
    main()
