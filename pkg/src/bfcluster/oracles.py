"""Brute-force cross-checks of the product-form results.

Both oracles work on detailed states (ordered class sequences) and never use
the balance function, so they validate it independently.
"""

from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analysis import _check_rates, _logsumexp, detailed_weight
from .model import ClusterModel, detailed_states, per_position_rates

MAX_ORDERINGS = 100_000


def orderings(x: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """Every detailed state whose per-class counts are ``x``."""
    counts = list(x)
    n = sum(counts)
    seq = [0] * n

    def rec(pos):
        if pos == n:
            yield tuple(seq)
            return
        for i, v in enumerate(counts):
            if v:
                counts[i] -= 1
                seq[pos] = i
                yield from rec(pos + 1)
                counts[i] += 1

    yield from rec(0)


def num_orderings(x: Sequence[int]) -> int:
    total = math.factorial(sum(x))
    for v in x:
        total //= math.factorial(v)
    return total


def first_job_rates(model: ClusterModel, state: Sequence[int]) -> np.ndarray:
    """Service rate of the first job of each class (0 for absent classes)."""
    out = np.zeros(model.num_classes)
    seen = set()
    for c, r in zip(state, per_position_rates(model, state)):
        if c not in seen:
            seen.add(c)
            out[c] = r
    return out


def avg_rates_oracle(model: ClusterModel, arrival_rates, x: Sequence[int],
                     max_orderings: int = MAX_ORDERINGS) -> np.ndarray:
    """Per-class service rate averaged over the orderings of ``x``.

    Each ordering c is weighted by its stationary weight pi(c).
    """
    x = tuple(int(v) for v in x)
    if len(x) != model.num_classes:
        raise ValueError("state dimension does not match the model")
    count = num_orderings(x)
    if count > max_orderings:
        raise ValueError(f"{count} orderings exceed the enumeration cap {max_orderings}")
    logs, rates = [], []
    for c in orderings(x):
        logs.append(detailed_weight(model, arrival_rates, c))
        rates.append(first_job_rates(model, c))
    logs = np.array(logs)
    w = np.exp(logs - logs.max())
    return (w[:, None] * np.array(rates)).sum(axis=0) / w.sum()


def detailed_log_weights(model: ClusterModel, arrival_rates, n_max: int) -> dict[tuple[int, ...], float]:
    """Product-form log weight of every detailed state with at most ``n_max`` jobs."""
    lam = _check_rates(model, arrival_rates)
    usable = [i for i in range(model.num_classes) if lam[i] > 0]
    out = {}
    for seq in detailed_states(len(usable), n_max):
        c = tuple(usable[k] for k in seq)
        out[c] = detailed_weight(model, lam, c)
    return out


def order_independent_expectation(model: ClusterModel, arrival_rates, n_max: int, g) -> float:
    """sum_c pi(c) g(|c|) over detailed states with at most ``n_max`` jobs (unnormalized)."""
    n_cls = model.num_classes
    total = 0.0
    for c, w in detailed_log_weights(model, arrival_rates, n_max).items():
        counts = [0] * n_cls
        for k in c:
            counts[k] += 1
        total += math.exp(w) * g(tuple(counts))
    return total


def ctmc_oracle(model: ClusterModel, arrival_rates, n_max: int, max_states: int = 20_000):
    """Stationary distribution of the detailed-state chain truncated at ``n_max`` jobs.

    Arrivals append a job at the tail and are blocked once the queue holds
    ``n_max`` jobs; the job in position k leaves at its positional rate.
    Returns the list of states and their probabilities.
    """
    lam = _check_rates(model, arrival_rates)
    usable = [i for i in range(model.num_classes) if lam[i] > 0]
    states = [tuple(usable[k] for k in seq) for seq in detailed_states(len(usable), n_max)]
    if len(states) > max_states:
        raise ValueError(f"{len(states)} states exceed the cap {max_states}")
    index = {c: k for k, c in enumerate(states)}
    rows, cols, vals = [], [], []
    for k, c in enumerate(states):
        if len(c) < n_max:
            for i in usable:
                rows.append(k)
                cols.append(index[c + (i,)])
                vals.append(lam[i])
        for pos, r in enumerate(per_position_rates(model, c)):
            if r > 0:
                rows.append(k)
                cols.append(index[c[:pos] + c[pos + 1:]])
                vals.append(r)
    size = len(states)
    q = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    q = q - sp.diags(np.asarray(q.sum(axis=1)).ravel())
    # pi Q = 0 with sum(pi) = 1: replace one balance equation by the normalization
    a = q.T.tolil()
    a[0, :] = np.ones(size)
    b = np.zeros(size)
    b[0] = 1.0
    pi = spla.spsolve(a.tocsc(), b)
    if not np.all(np.isfinite(pi)):
        raise np.linalg.LinAlgError("singular truncated generator")
    return states, pi


def product_form_deviation(model: ClusterModel, arrival_rates, n_max: int, interior: int) -> float:
    """Largest relative gap between the truncated chain and pi(c)/pi(empty) on short states."""
    states, pi = ctmc_oracle(model, arrival_rates, n_max)
    p0 = pi[0]
    worst = 0.0
    for c, p in zip(states, pi):
        if len(c) <= interior:
            expected = math.exp(detailed_weight(model, arrival_rates, c))
            worst = max(worst, abs(p / p0 - expected) / expected)
    return worst


def aggregate_from_detailed(states, probs, num_classes: int) -> dict[tuple[int, ...], float]:
    """Sum detailed-state masses by per-class counts."""
    out: dict[tuple[int, ...], float] = {}
    for c, p in zip(states, probs):
        counts = [0] * num_classes
        for k in c:
            counts[k] += 1
        key = tuple(counts)
        out[key] = out.get(key, 0.0) + p
    return out


def log_sum_detailed(model: ClusterModel, arrival_rates, x: Sequence[int]) -> float:
    """log of the summed product-form weights over the orderings of ``x``."""
    return _logsumexp([detailed_weight(model, arrival_rates, c) for c in orderings(x)])
