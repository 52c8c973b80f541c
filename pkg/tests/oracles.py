"""Brute-force reference implementations used by the tests.

Nothing here calls the library's algorithms; machines are read through
their plain ``start``/``finals``/``arcs`` fields only, and the gradient check
only perturbs parameters and re-evaluates a loss.
"""

import math
import random

import numpy as np
from functools import lru_cache

from phonorank.wfst import Arc, SymbolTable, WFST


def symbols(n):
    return SymbolTable([chr(ord("a") + k) for k in range(n)])


def random_fst(rng: random.Random, max_states=6, n_syms=3, isyms=None, osyms=None, acyclic=True, eps=0.25, density=1.6, min_states=1):
    """A random machine with integer weights; acyclic means arcs only go to higher states."""
    isyms = isyms or symbols(n_syms)
    osyms = osyms or symbols(n_syms)
    n = rng.randint(min_states, max_states)
    arcs = [[] for _ in range(n)]
    n_arcs = int(density * n) + rng.randint(0, 2)
    for _ in range(n_arcs):
        q = rng.randrange(n)
        r = rng.randrange(q + 1, n + 1) if acyclic else rng.randrange(n)
        if acyclic and r == n:
            continue
        i = 0 if rng.random() < eps else rng.randint(1, len(isyms) - 1)
        o = 0 if rng.random() < eps else rng.randint(1, len(osyms) - 1)
        arcs[q].append(Arc(i, o, float(rng.randint(0, 4)), r))
    finals = {q: float(rng.randint(0, 2)) for q in range(n) if rng.random() < 0.5}
    if not finals:
        finals[n - 1] = 0.0
    return WFST(0, finals, arcs, isyms, osyms)


def paths(fst: WFST, max_arcs: int):
    """Every accepting path as (input, output, cost), epsilons dropped."""
    out = []

    def walk(q, depth, i, o, c):
        if q in fst.finals:
            out.append((i, o, c + fst.finals[q]))
        if depth == max_arcs:
            return
        for a in fst.arcs[q]:
            walk(a.nextstate, depth + 1, i + ((a.ilabel,) if a.ilabel else ()), o + ((a.olabel,) if a.olabel else ()), c + a.weight)

    walk(fst.start, 0, (), (), 0.0)
    return out


def relation(fst: WFST, max_arcs: int):
    """(input, output) -> cheapest cost."""
    rel = {}
    for i, o, c in paths(fst, max_arcs):
        if c < rel.get((i, o), math.inf):
            rel[(i, o)] = c
    return rel


def compose_relation(ra, rb):
    out = {}
    for (x, y), c1 in ra.items():
        for (y2, z), c2 in rb.items():
            if y == y2 and c1 + c2 < out.get((x, z), math.inf):
                out[(x, z)] = c1 + c2
    return out


def nbest_oracle(fst: WFST, n: int, max_arcs: int):
    best = {}
    for _, o, c in paths(fst, max_arcs):
        if c < best.get(o, math.inf):
            best[o] = c
    return sorted(((c, o) for o, c in best.items()))[:n]


def edit_distance(a, b):
    """Plain recursive Levenshtein distance."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def rel_error(a, b, floor=1e-6):
    """|a - b| / max(|a|, |b|, floor): relative where gradients are sizable, absolute near zero."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def spread(model, seed):
    # move parameters off the tiny init so finite differences see real curvature
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.value = rng.uniform(-0.5, 0.5, p.value.shape)


def grad_check(model, loss_fn, eps=1e-5):
    model.zero_grad()
    loss_fn().backward()
    analytic = {k: g.copy() for k, g in model.grads().items()}
    worst = 0.0
    for name, p in model.params.items():
        v = p.value
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + eps
            up = loss_fn().item()
            v[idx] = old - eps
            down = loss_fn().item()
            v[idx] = old
            worst = max(worst, rel_error(analytic[name][idx], (up - down) / (2 * eps)))
    return worst
