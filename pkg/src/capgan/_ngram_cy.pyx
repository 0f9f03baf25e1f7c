# cython: boundscheck=False, wraparound=False
"""Compiled n-gram counting kernel.

Same API as ``_ngram_py``; reward computation counts n-grams for every
sampled caption on every adversarial step, which makes this the hottest
pure-Python loop in training.
"""

BACKEND = "cython"


def ngram_counts(seq, int n):
    """Count the n-grams of a token sequence. Returns tuple -> count."""
    cdef Py_ssize_t i, length = len(seq)
    cdef dict counts = {}
    seq = list(seq)
    for i in range(length - n + 1):
        key = tuple(seq[i:i + n])
        if key in counts:
            counts[key] += 1
        else:
            counts[key] = 1
    return counts


def ngram_counts_upto(seq, int nmax):
    """Counts for every order 1..nmax, as a list indexed by n-1."""
    cdef int n
    seq = list(seq)
    return [ngram_counts(seq, n) for n in range(1, nmax + 1)]
