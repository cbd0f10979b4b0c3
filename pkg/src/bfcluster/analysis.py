"""Exact stationary analysis of the multi-server queue and its balanced-fair rates.

Stationary weights are unnormalized (empty queue has weight 1) and kept in
log domain throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .model import RATE_TABLE_MAX_CLASSES, ClusterModel, members

STABILITY_MAX_CLASSES = RATE_TABLE_MAX_CLASSES


class UnstableWorkloadError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class TooManyClassesError(ValueError):
    pass


def _logsumexp(values: Sequence[float]) -> float:
    top = max(values)
    if top == -math.inf:
        return -math.inf
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def compositions(n: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All vectors of ``parts`` non-negative integers summing to ``n``."""
    if parts == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in compositions(n - first, parts - 1):
            yield (first,) + rest


def states_up_to(num_classes: int, n_max: int) -> Iterator[tuple[int, ...]]:
    """Aggregate states level by level, total job count 0..n_max."""
    for n in range(n_max + 1):
        yield from compositions(n, num_classes)


def _as_state(model: ClusterModel, x) -> tuple[int, ...]:
    x = tuple(int(v) for v in x)
    if len(x) != model.num_classes:
        raise ValueError(f"state has {len(x)} entries, model has {model.num_classes} classes")
    if any(v < 0 for v in x):
        raise ValueError("job counts must be non-negative")
    return x


def _active_mask(x: Sequence[int]) -> int:
    mask = 0
    for i, v in enumerate(x):
        if v:
            mask |= 1 << i
    return mask


class BalanceTable:
    """Memoized log balance function of a model.

    ``log_phi(x)`` follows Phi(0) = 1 and
    Phi(x) = sum_{i in A(x)} Phi(x - e_i) / mu(A(x)).
    The memo is a plain dict: share a table between threads only under a lock.
    """

    def __init__(self, model: ClusterModel):
        self.model = model
        self.memo: dict[tuple[int, ...], float] = {(0,) * model.num_classes: 0.0}

    def __len__(self):
        return len(self.memo)

    def _compute(self, y):
        memo = self.memo
        preds = [memo[y[:i] + (v - 1,) + y[i + 1:]] for i, v in enumerate(y) if v]
        rate = self.model.rate_of_mask(_active_mask(y))
        if rate <= 0:
            raise ValueError(f"zero service rate in state {y}")
        memo[y] = _logsumexp(preds) - math.log(rate)

    def log_phi(self, x) -> float:
        x = _as_state(self.model, x)
        memo = self.memo
        if x in memo:
            return memo[x]
        # explicit stack, recursion depth would be the job count
        stack = [x]
        while stack:
            y = stack[-1]
            if y in memo:
                stack.pop()
                continue
            missing = []
            for i, v in enumerate(y):
                if v:
                    p = y[:i] + (v - 1,) + y[i + 1:]
                    if p not in memo:
                        missing.append(p)
            if missing:
                stack.extend(missing)
                continue
            stack.pop()
            self._compute(y)
        return memo[x]

    def fill(self, n_max: int) -> None:
        """Compute every state with at most ``n_max`` jobs."""
        for x in states_up_to(self.model.num_classes, n_max):
            if x not in self.memo:
                self._compute(x)


def balance_value(table: BalanceTable, x) -> float:
    """log Phi(x)."""
    return table.log_phi(x)


def _check_rates(model: ClusterModel, arrival_rates) -> np.ndarray:
    lam = np.asarray(arrival_rates, dtype=float)
    if lam.shape != (model.num_classes,):
        raise ValueError(f"expected {model.num_classes} arrival rates, got shape {lam.shape}")
    if not np.all(np.isfinite(lam)) or np.any(lam < 0):
        raise ValueError("arrival rates must be finite and non-negative")
    return lam


def detailed_weight(model: ClusterModel, arrival_rates, state: Sequence[int]) -> float:
    """log of pi(c)/pi(empty) = sum_k log(lambda_{c_k} / mu(c_1..c_k))."""
    lam = _check_rates(model, arrival_rates)
    total = 0.0
    mask = 0
    for c in state:
        if lam[c] <= 0:
            raise ValueError(f"class {c} has zero arrival rate but is present in the state")
        mask |= 1 << c
        total += math.log(lam[c]) - math.log(model.rate_of_mask(mask))
    return total


def aggregate_weight(model: ClusterModel, arrival_rates, x, table: BalanceTable | None = None) -> float:
    """log of pibar(x)/pibar(0) = log Phi(x) + sum_i x_i log lambda_i."""
    lam = _check_rates(model, arrival_rates)
    x = _as_state(model, x)
    if table is None:
        table = BalanceTable(model)
    total = table.log_phi(x)
    for i, v in enumerate(x):
        if v:
            if lam[i] <= 0:
                raise ValueError(f"class {i} has zero arrival rate but is present in the state")
            total += v * math.log(lam[i])
    return total


def bf_rates(table: BalanceTable, x) -> np.ndarray:
    """Balanced-fair service rate of each class in aggregate state ``x``."""
    x = _as_state(table.model, x)
    log_x = table.log_phi(x)
    phi = np.zeros(len(x))
    for i, v in enumerate(x):
        if v:
            below = x[:i] + (v - 1,) + x[i + 1:]
            phi[i] = math.exp(table.log_phi(below) - log_x)
    return phi


def _subset_sums(values: Sequence[float]) -> np.ndarray:
    out = np.zeros(1)
    for v in values:
        out = np.concatenate([out, out + v])
    return out


def _popcounts(n: int) -> np.ndarray:
    out = np.zeros(1, dtype=np.int64)
    for _ in range(n):
        out = np.concatenate([out, out + 1])
    return out


@dataclass
class StabilityReport:
    stable: bool
    violating_set: frozenset | None = None
    witness: np.ndarray | None = None
    min_slack: float = math.nan

    @property
    def verdict(self) -> str:
        return "stable" if self.stable else "unstable"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "violating_set": sorted(self.violating_set) if self.violating_set is not None else None,
            "witness": self.witness.tolist() if self.witness is not None else None,
            "min_slack": self.min_slack,
        }


def check_stability(model: ClusterModel, arrival_rates) -> StabilityReport:
    """Exhaustive check of sum_{i in A} lambda_i < mu(A) over all non-empty A.

    Only classes with positive arrival rate are quantified over.  A stable
    report carries the witness eta_i = lambda_i + min_{A containing i}
    (mu(A) - sum_A lambda) / (2|A|), re-verified before it is returned.
    """
    n = model.num_classes
    if n > STABILITY_MAX_CLASSES:
        raise TooManyClassesError(f"exhaustive stability check limited to {STABILITY_MAX_CLASSES} classes, got {n}")
    lam = _check_rates(model, arrival_rates)
    rates = model.rate_table
    slack = rates - _subset_sums(lam)
    masks = np.arange(1 << n)
    active = _active_mask(lam > 0)
    on_active = (masks & ~active) == 0
    on_active[0] = False
    if on_active.any():
        candidates = np.flatnonzero(on_active)
        worst = candidates[np.argmin(slack[candidates])]
        min_slack = float(slack[worst])
        if min_slack <= 0:
            return StabilityReport(False, frozenset(members(int(worst))), None, min_slack)
    else:
        min_slack = math.inf

    # on all subsets (inactive classes included) the slack is then positive
    per_size = slack[1:] / _popcounts(n)[1:]
    eta = lam.copy()
    for i in range(n):
        eta[i] += 0.5 * per_size[(masks[1:] >> i) & 1 == 1].min()
    eta_sums = _subset_sums(eta)
    if not (np.all(eta[lam > 0] > lam[lam > 0]) and np.all(eta_sums[1:] < rates[1:])):
        raise RuntimeError("stability witness failed its own verification")
    return StabilityReport(True, None, eta, min_slack)


@dataclass
class BoundReport:
    holds: bool
    checked: int
    max_log_ratio: float
    worst_state: tuple

    @property
    def max_ratio(self) -> float:
        """Largest Phi(x) / Psi(x) seen; at most 1 when the bound holds."""
        return math.exp(self.max_log_ratio)


def comparison_bound_check(model: ClusterModel, eta, x_max: int, table: BalanceTable | None = None,
                           rtol: float = 1e-12) -> BoundReport:
    """Check Phi(x) <= prod_i eta_i^{-x_i} for every x with at most ``x_max`` jobs."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (model.num_classes,) or np.any(eta <= 0):
        raise ValueError("eta must hold one positive entry per class")
    if table is None:
        table = BalanceTable(model)
    log_eta = np.log(eta)
    worst, worst_state, checked = -math.inf, None, 0
    for x in states_up_to(model.num_classes, x_max):
        log_psi = -float(np.dot(x, log_eta))
        r = table.log_phi(x) - log_psi
        checked += 1
        if r > worst:
            worst, worst_state = r, x
    return BoundReport(worst <= math.log1p(rtol), checked, worst, worst_state)


def tree_closed_form(mu1: float, mu2: float, mu3: float, lam1: float, lam2: float) -> tuple[float, float]:
    """Mean balanced-fair service rates of the two-class, three-server tree.

    Server 1 serves class 1 only, server 2 class 2 only, server 3 both.
    ``mu2`` may be 0 (class 2 then only has the shared server).
    """
    if not (lam1 < mu1 + mu3 and lam2 < mu2 + mu3 and lam1 + lam2 < mu1 + mu2 + mu3):
        raise UnstableWorkloadError("arrival rates outside the stability region")
    mu = mu1 + mu2 + mu3
    rho1 = lam1 / (mu1 + mu3)
    rho2 = lam2 / (mu2 + mu3)
    rho = (lam1 + lam2) / mu
    first = 1.0 / (mu * (1.0 - rho))
    denom = mu - (mu1 + mu3) * rho1 - (mu2 + mu3) * rho2 + mu3 * rho1 * rho2
    gamma1 = 1.0 / (first + (mu2 / (mu1 + mu3)) * (1.0 - rho2) / (1.0 - rho1) / denom)
    gamma2 = 1.0 / (first + (mu1 / (mu2 + mu3)) * (1.0 - rho1) / (1.0 - rho2) / denom)
    return gamma1, gamma2


def tree_rates(model: ClusterModel) -> tuple[float, float, float] | None:
    """(mu1, mu2, mu3) if ``model`` is the two-class tree, else None."""
    if model.num_classes != 2:
        return None
    c = model.server_capacities
    s1, s2 = model.class_servers
    shared = set(s1) & set(s2)
    if len(shared) != 1:
        return None
    own1, own2 = set(s1) - shared, set(s2) - shared
    if len(own1) != 1 or len(own2) > 1:
        return None
    (k,) = shared
    (a,) = own1
    mu2 = c[next(iter(own2))] if own2 else 0.0
    return c[a], mu2, c[k]


# --------------------------------------------------------------------------
# Truncated sums of the aggregate stationary measure


def _grouped_levels(model: ClusterModel, lam: np.ndarray) -> Iterator[tuple[float, np.ndarray]]:
    """Yield (log Z_n, log M_n) for n = 0, 1, ... without enumerating states.

    Z_n sums pibar(x) over states with n jobs and M_n[i] sums pibar(x) x_i.
    Since mu only depends on the active set, states of one level are grouped
    by active set A: F(A, n) = sum_{i in A} lam_i (F(A, n-1) + F(A-i, n-1)) / mu(A),
    and similarly for the first moments.  Only classes with lam_i > 0 enter.
    """
    active = [i for i in range(model.num_classes) if lam[i] > 0]
    k = len(active)
    if k > STABILITY_MAX_CLASSES:
        raise TooManyClassesError(f"level sums limited to {STABILITY_MAX_CLASSES} active classes")
    lam_a = lam[active]
    full = np.zeros(1, dtype=np.int64)
    for i in active:
        full = np.concatenate([full, full | (1 << i)])
    mu_sub = np.array([model.rate_of_mask(int(m)) for m in full]) if k else np.zeros(1)
    masks = np.arange(1 << k)
    with_bit = [masks[(masks >> j) & 1 == 1] for j in range(k)]

    f = np.zeros(1 << k)
    f[0] = 1.0
    g = np.zeros((k, 1 << k))
    log_scale = 0.0
    m0 = np.full(model.num_classes, -math.inf)
    yield 0.0, m0
    while True:
        fn = np.zeros_like(f)
        gn = np.zeros_like(g)
        for j in range(k):
            idx = with_bit[j]
            prev = idx ^ (1 << j)
            base = lam_a[j] * (f[idx] + f[prev])
            fn[idx] += base
            gn[:, idx] += lam_a[j] * (g[:, idx] + g[:, prev])
            gn[j, idx] += base
        fn[1:] /= mu_sub[1:]
        gn[:, 1:] /= mu_sub[1:]
        top = fn.max() if k else 0.0
        if top <= 0:
            # no active class: all mass sits in the empty state
            while True:
                yield -math.inf, m0.copy()
        f, g = fn / top, gn / top
        log_scale += math.log(top)
        with np.errstate(divide="ignore"):
            m = m0.copy()
            m[active] = np.log(g.sum(axis=1)) + log_scale
        yield math.log(f.sum()) + log_scale, m


def _state_levels(model: ClusterModel, lam: np.ndarray,
                  table: BalanceTable | None = None) -> Iterator[tuple[float, np.ndarray]]:
    """Same as ``_grouped_levels`` by brute-force enumeration of every state."""
    if table is None:
        table = BalanceTable(model)
    n_cls = model.num_classes
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    n = 0
    while True:
        logs, weighted = [], [[] for _ in range(n_cls)]
        for x in compositions(n, n_cls):
            if any(v and lam[i] <= 0 for i, v in enumerate(x)):
                continue
            w = table.log_phi(x) + sum(v * log_lam[i] for i, v in enumerate(x) if v)
            logs.append(w)
            for i, v in enumerate(x):
                if v:
                    weighted[i].append(w + math.log(v))
        m = np.array([_logsumexp(ws) if ws else -math.inf for ws in weighted])
        yield _logsumexp(logs), m
        n += 1


def level_log_sums(model: ClusterModel, arrival_rates, n_max: int, method: str = "grouped"):
    """Per-level log sums (log Z_n, log M_n[i]) for n = 0..n_max.

    ``method`` is "grouped" (by active set) or "states" (every aggregate state).
    No stability requirement: used as well to watch the series diverge.
    """
    lam = _check_rates(model, arrival_rates)
    levels = _grouped_levels(model, lam) if method == "grouped" else _state_levels(model, lam)
    z = np.empty(n_max + 1)
    m = np.empty((n_max + 1, model.num_classes))
    for n, (zn, mn) in zip(range(n_max + 1), levels):
        z[n], m[n] = zn, mn
    return z, m


def normalization_partial_sums(model: ClusterModel, arrival_rates, n_max: int,
                               method: str = "grouped") -> np.ndarray:
    """log of sum_{|x| <= n} pibar(x)/pibar(0) for n = 0..n_max."""
    z, _ = level_log_sums(model, arrival_rates, n_max, method)
    return np.logaddexp.accumulate(z)


@dataclass
class MetricsReport:
    """Balanced-fairness performance of every class.

    ``service_rates`` are in work per unit time, ``delays`` in time units.
    Classes with zero arrival rate get NaN metrics.
    """

    arrival_rates: np.ndarray
    mean_size: float
    mean_jobs: np.ndarray
    service_rates: np.ndarray
    delays: np.ndarray
    log_normalization: float
    truncation_level: int
    truncation_error: float
    method: str = "grouped"
    notes: list = field(default_factory=lambda: ["truncation error is the last relative level increment"])

    @property
    def normalization(self) -> float:
        return math.exp(self.log_normalization)

    def to_dict(self) -> dict:
        return {
            "arrival_rates": self.arrival_rates.tolist(),
            "mean_size": self.mean_size,
            "mean_jobs": self.mean_jobs.tolist(),
            "service_rates": self.service_rates.tolist(),
            "delays": self.delays.tolist(),
            "normalization": self.normalization,
            "truncation_level": self.truncation_level,
            "truncation_error": self.truncation_error,
            "method": self.method,
            "notes": list(self.notes),
        }

    def csv_rows(self) -> list[dict]:
        return [
            {"class": i + 1, "arrival_rate": self.arrival_rates[i], "service_rate": self.service_rates[i],
             "delay": self.delays[i], "mean_jobs": self.mean_jobs[i]}
            for i in range(len(self.arrival_rates))
        ]


def performance_metrics(model: ClusterModel, arrival_rates, mean_size: float = 1.0, tolerance: float = 1e-10,
                        max_level: int = 5000, method: str = "grouped") -> MetricsReport:
    """Mean jobs, service rates and delays per class under balanced fairness.

    Capacities of ``model`` are in work per unit time; with mean job size
    ``mean_size`` the per-job service rates are capacity / mean_size.  Levels
    of the aggregate measure are added until the last level changes every
    running sum by less than ``tolerance`` (relative) and no longer grows.
    """
    if mean_size <= 0:
        raise ValueError("mean job size must be positive")
    lam = _check_rates(model, arrival_rates)
    effective = model.scaled(1.0 / mean_size)
    report = check_stability(effective, lam)
    if not report.stable:
        raise UnstableWorkloadError(f"unstable workload, violating set {sorted(report.violating_set)}")
    active = lam > 0
    if method == "grouped":
        levels = _grouped_levels(effective, lam)
    elif method == "states":
        levels = _state_levels(effective, lam)
    else:
        raise ValueError(f"unknown method {method!r}")

    log_z, log_m = next(levels)
    log_m = log_m.copy()
    prev_z, prev_m = log_z, log_m[active]
    increment = math.inf
    for n in range(1, max_level + 1):
        zn, mn = next(levels)
        mn = mn[active]
        log_z = np.logaddexp(log_z, zn)
        log_m[active] = np.logaddexp(log_m[active], mn)
        rel = [zn - log_z] + list(mn - log_m[active])
        increment = math.exp(max(rel)) if rel else 0.0
        shrinking = zn <= prev_z and bool(np.all(mn <= prev_m))
        prev_z, prev_m = zn, mn
        if increment < tolerance and shrinking:
            break
    else:
        raise ConvergenceError(f"level sums did not converge within {max_level} levels "
                               f"(last relative increment {increment:.3g})")

    mean_jobs = np.zeros(model.num_classes)
    mean_jobs[active] = np.exp(log_m[active] - log_z)
    gamma = np.full(model.num_classes, math.nan)
    gamma[active] = lam[active] * mean_size / mean_jobs[active]
    delays = np.full(model.num_classes, math.nan)
    delays[active] = mean_size / gamma[active]
    return MetricsReport(lam, float(mean_size), mean_jobs, gamma, delays, float(log_z), n, increment, method)
