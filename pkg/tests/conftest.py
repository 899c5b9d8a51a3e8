"""Shared test oracles, kept independent of the library's own algorithms.

The partition enumerator here inserts each element into every block of
every partial partition (a different construction from the library's
restricted-growth search), Bell numbers come from the triangle recurrence,
and the posterior oracle sums the likelihood over every entity value
directly.
"""

from __future__ import annotations

import math

import numpy as np
import pytest


def independent_partitions(n: int, cap: int | None = None) -> set[tuple[int, ...]]:
    """All set partitions of range(n) as canonical label tuples."""
    cap = n if cap is None else cap
    blocks_list: list[list[list[int]]] = [[]]
    for item in range(n):
        nxt = []
        for blocks in blocks_list:
            for b in range(len(blocks)):
                if len(blocks[b]) < cap:
                    grown = [list(bl) for bl in blocks]
                    grown[b].append(item)
                    nxt.append(grown)
            nxt.append([list(bl) for bl in blocks] + [[item]])
        blocks_list = nxt
    out = set()
    for blocks in blocks_list:
        label_of = {}
        for b, members in enumerate(blocks):
            for item in members:
                label_of[item] = b
        relabel: dict[int, int] = {}
        canon = []
        for item in range(n):
            raw = label_of[item]
            if raw not in relabel:
                relabel[raw] = len(relabel) + 1
            canon.append(relabel[raw])
        out.add(tuple(canon))
    return out


def bell_number(n: int) -> int:
    """Bell numbers via the Bell triangle; row k ends with Bell(k)."""
    if n < 1:
        return 1
    row = [1]
    for _ in range(n - 1):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[-1]


def tv_distance(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def cluster_marginal_loglik(rows: np.ndarray, psi: np.ndarray, freqs) -> float:
    """Likelihood of a cluster's records with the entity summed out, by
    direct summation over every category value."""
    out = 0.0
    for f in range(len(freqs)):
        total = 0.0
        for d in range(len(freqs[f])):
            term = freqs[f][d]
            for x in rows[:, f]:
                term *= (1.0 - psi[f]) * (x == d) + psi[f] * freqs[f][x]
            total += term
        if total <= 0.0:
            return float("-inf")
        out += math.log(total)
    return out


def exact_partition_posterior(values: np.ndarray, freqs, psi: np.ndarray, prior_logdensity):
    """Normalized posterior over all cap-respecting partitions of the rows.

    prior_logdensity maps a LinkageStructure to its log prior; partitions
    with -inf prior are excluded.
    """
    from allelink.partitions import enumerate_partitions

    n = values.shape[0]
    logp = {}
    for xi in enumerate_partitions(n):
        lp = prior_logdensity(xi)
        for members in xi.clusters():
            if lp == float("-inf"):
                break
            lp += cluster_marginal_loglik(values[list(members)], psi, freqs)
        if lp > float("-inf"):
            logp[xi.assignments] = lp
    top = max(logp.values())
    z = sum(math.exp(v - top) for v in logp.values())
    return {k: math.exp(v - top) / z for k, v in logp.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
