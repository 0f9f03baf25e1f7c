"""Pure-Python n-gram counting, the fallback for the compiled kernel.

Keep the API in lockstep with ``_ngram_cy.pyx``; ``metrics`` picks one of
the two at import time.
"""
from __future__ import annotations

BACKEND = "python"


def ngram_counts(seq, n):
    """Count the n-grams of a token sequence. Returns tuple -> count."""
    counts = {}
    for i in range(len(seq) - n + 1):
        key = tuple(seq[i : i + n])
        counts[key] = counts.get(key, 0) + 1
    return counts


def ngram_counts_upto(seq, nmax):
    """Counts for every order 1..nmax, as a list indexed by n-1."""
    return [ngram_counts(seq, n) for n in range(1, nmax + 1)]
