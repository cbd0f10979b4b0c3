"""Cluster model: servers, capacities and the class/server compatibility graph.

Classes and servers are 0-based in the Python API.  Scenario files use
1-based server indices and are converted on load.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

# subset-indexed rate cache is built eagerly up to this many classes
RATE_TABLE_MAX_CLASSES = 20


def mask_of(classes: Iterable[int]) -> int:
    mask = 0
    for i in classes:
        mask |= 1 << i
    return mask


def members(mask: int) -> list[int]:
    """Indices of the set bits of ``mask``, in increasing order."""
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


@dataclass(frozen=True, init=False)
class ClusterModel:
    """Servers with capacities and, per job class, its compatible servers.

    Parameters
    ----------
    server_capacities : sequence of float
        Capacity of each server (work units per unit time), all finite and > 0.
    class_servers : sequence of sequences of int
        For each class, the 0-based indices of the servers able to process it.
    """

    server_capacities: tuple[float, ...]
    class_servers: tuple[tuple[int, ...], ...]
    _server_masks: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _rate_table: np.ndarray | None = field(init=False, repr=False, compare=False)

    def __init__(self, server_capacities: Sequence[float], class_servers: Sequence[Iterable[int]]):
        caps = tuple(float(c) for c in server_capacities)
        if not caps:
            raise ValueError("a cluster needs at least one server")
        for c in caps:
            if not math.isfinite(c) or c <= 0:
                raise ValueError(f"server capacities must be finite and positive, got {c!r}")
        classes = tuple(tuple(sorted(set(int(s) for s in srv))) for srv in class_servers)
        if not classes:
            raise ValueError("a cluster needs at least one job class")
        for i, srv in enumerate(classes):
            if not srv:
                raise ValueError(f"class {i} has no compatible server")
            if srv[0] < 0 or srv[-1] >= len(caps):
                raise ValueError(f"class {i} refers to a server outside 0..{len(caps) - 1}")
        object.__setattr__(self, "server_capacities", caps)
        object.__setattr__(self, "class_servers", classes)
        object.__setattr__(self, "_server_masks", tuple(mask_of(srv) for srv in classes))
        table = self._build_rate_table() if len(classes) <= RATE_TABLE_MAX_CLASSES else None
        object.__setattr__(self, "_rate_table", table)

    @property
    def num_servers(self) -> int:
        return len(self.server_capacities)

    @property
    def num_classes(self) -> int:
        return len(self.class_servers)

    @property
    def server_masks(self) -> tuple[int, ...]:
        """Compatible servers of each class as a bitmask."""
        return self._server_masks

    def capacity_of_servers(self, server_mask: int) -> float:
        return math.fsum(self.server_capacities[s] for s in members(server_mask))

    def max_rate(self, i: int) -> float:
        """Largest rate a class-``i`` job can get (all its servers)."""
        return self.capacity_of_servers(self._server_masks[i])

    def _build_rate_table(self) -> np.ndarray:
        unions = [0]
        for smask in self._server_masks:
            unions += [u | smask for u in unions]
        cache: dict[int, float] = {}
        rates = np.empty(len(unions))
        for k, u in enumerate(unions):
            r = cache.get(u)
            if r is None:
                r = cache[u] = self.capacity_of_servers(u)
            rates[k] = r
        rates.setflags(write=False)
        return rates

    @property
    def rate_table(self) -> np.ndarray:
        """mu(A) for every class subset A, indexed by bitmask (N <= 20 only)."""
        if self._rate_table is None:
            raise ValueError(f"no rate table for {self.num_classes} classes")
        return self._rate_table

    def rate_of_mask(self, class_mask: int) -> float:
        if class_mask >> self.num_classes:
            raise IndexError("class index out of range")
        if self._rate_table is not None:
            return float(self._rate_table[class_mask])
        union = 0
        for i in members(class_mask):
            union |= self._server_masks[i]
        return self.capacity_of_servers(union)

    def scaled(self, factor: float) -> "ClusterModel":
        """Same graph with every capacity multiplied by ``factor``."""
        return ClusterModel([c * factor for c in self.server_capacities], self.class_servers)


def rate_of_set(model: ClusterModel, active: Iterable[int]) -> float:
    """Total service rate mu(A): capacity of the union of compatible servers."""
    mask = 0
    for i in active:
        if not 0 <= i < model.num_classes:
            raise IndexError(f"class index {i} out of range")
        mask |= 1 << i
    return model.rate_of_mask(mask)


def per_position_rates(model: ClusterModel, state: Sequence[int]) -> list[float]:
    """Service rate of each job of the detailed state, head of the queue first.

    The job in position k gets the servers of its class that no earlier job
    can use.
    """
    covered = 0
    rates = []
    for c in state:
        if not 0 <= c < model.num_classes:
            raise IndexError(f"class index {c} out of range")
        fresh = model.server_masks[c] & ~covered
        rates.append(model.capacity_of_servers(fresh) if fresh else 0.0)
        covered |= fresh
    return rates


def active_set(state: Iterable[int]) -> frozenset[int]:
    return frozenset(state)


def aggregate(state: Sequence[int], num_classes: int) -> tuple[int, ...]:
    """Per-class job counts of a detailed state."""
    counts = [0] * num_classes
    for c in state:
        counts[c] += 1
    return tuple(counts)


def detailed_states(num_classes: int, max_len: int):
    """All class sequences of length 0..max_len, shortest first."""
    for n in range(max_len + 1):
        yield from itertools.product(range(num_classes), repeat=n)


@dataclass
class OIReport:
    checked_states: int = 0
    monotonicity_violations: list = field(default_factory=list)
    order_violations: list = field(default_factory=list)
    zero_violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not (self.monotonicity_violations or self.order_violations or self.zero_violations)


def check_oi_axioms(
    model: ClusterModel,
    states: Iterable[Sequence[int]],
    rate_fn: Callable[[tuple[int, ...]], float] | None = None,
    atol: float = 1e-12,
) -> OIReport:
    """Check monotonicity, order independence and positivity of a rate function.

    ``rate_fn`` maps a detailed state to its total service rate; it defaults
    to the weighted-cover rate of ``model``.  Other functions are accepted so
    that the checker itself can be tested against faulty rate functions.
    """
    if rate_fn is None:
        def rate_fn(c):
            return rate_of_set(model, c)

    report = OIReport()
    for c in states:
        c = tuple(c)
        report.checked_states += 1
        mu_c = rate_fn(c)
        if (not c and abs(mu_c) > atol) or (c and mu_c <= 0):
            report.zero_violations.append((c, mu_c))
        for i in range(model.num_classes):
            ext = c + (i,)
            if mu_c > rate_fn(ext) + atol:
                report.monotonicity_violations.append((c, ext))
        for perm in set(itertools.permutations(c)):
            if abs(rate_fn(perm) - mu_c) > atol:
                report.order_violations.append((c, perm))
    return report


def toy_model(mu1: float = 1.0, mu2: float = 1.0, mu3: float = 1.0) -> ClusterModel:
    """Two classes, each with a dedicated server, plus one shared server.

    With ``mu2 == 0`` the dedicated server of class 2 is dropped, leaving two
    servers: class 1 on both, class 2 on the shared one only.
    """
    if mu2 == 0:
        return ClusterModel([mu1, mu3], [[0, 1], [1]])
    return ClusterModel([mu1, mu2, mu3], [[0, 2], [1, 2]])


def random_assignment_model(num_servers: int, d: int, capacity: float = 1.0) -> ClusterModel:
    """One class per d-subset of servers, in ``itertools.combinations`` order."""
    if not 1 <= d <= num_servers:
        raise ValueError("need 1 <= d <= number of servers")
    classes = list(itertools.combinations(range(num_servers), d))
    return ClusterModel([capacity] * num_servers, classes)


def random_model(seed: int, num_servers: int, num_classes: int) -> ClusterModel:
    """Random capacities in [0.5, 2] and random non-empty server sets."""
    rng = np.random.default_rng(seed)
    caps = rng.uniform(0.5, 2.0, num_servers)
    classes = []
    for _ in range(num_classes):
        mask = 0
        while not mask:
            mask = int(rng.integers(1, 1 << num_servers))
        classes.append(members(mask))
    return ClusterModel(caps, classes)
