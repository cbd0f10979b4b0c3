"""Event-driven simulation of the interruption-based scheduler.

Jobs wait in a single virtual queue in arrival order.  Each server serves
the first job of the queue it is compatible with, and a job is served at the
sum of the capacities of the servers holding it.  While serving, server s
runs an exponential timer of rate C_s / theta; when it fires, the job loses
all its servers and moves to the tail of the queue with its remaining work.
theta = inf disables timers (plain FCFS on each server).

Trace format (one line per applied event, tab-separated):
``time  kind  job_id  class  queue_length  busy_servers``
with kind in {arrival, departure, timer}.
"""

from __future__ import annotations

import heapq
import itertools
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import TextIO

import numpy as np

from .distributions import SizeDistribution, dist_moments
from .model import ClusterModel, members

ARRIVAL, DEPARTURE, TIMER = 0, 1, 2
EVENT_NAMES = ("arrival", "departure", "timer")
_BATCH = 4096


@dataclass(frozen=True)
class SimConfig:
    """One simulation run.

    With ``random_d`` set, every job is assigned ``random_d`` servers drawn
    uniformly at random, ``arrival_rates`` holds the single total rate and the
    class of a job is the rank of its server set among
    ``itertools.combinations(range(S), random_d)``.
    """

    model: ClusterModel
    arrival_rates: tuple[float, ...]
    size_dist: SizeDistribution
    theta: float | None = None
    m: float | None = None
    warmup_events: int = 1_000_000
    measured_events: int = 1_000_000
    seed: int = 0
    random_d: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "arrival_rates", tuple(float(v) for v in self.arrival_rates))
        if (self.theta is None) == (self.m is None):
            raise ValueError("give exactly one of theta and m")
        if self.theta is not None and not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.m is not None and not self.m >= 0:
            raise ValueError("m must be non-negative")
        if self.warmup_events < 0 or self.measured_events <= 0:
            raise ValueError("event counts must be positive")
        if any(v < 0 or not math.isfinite(v) for v in self.arrival_rates):
            raise ValueError("arrival rates must be finite and non-negative")
        if self.random_d is None:
            if len(self.arrival_rates) != self.model.num_classes:
                raise ValueError("one arrival rate per class expected")
        else:
            if not 1 <= self.random_d <= self.model.num_servers:
                raise ValueError("need 1 <= random_d <= number of servers")
            if len(self.arrival_rates) != 1:
                raise ValueError("random assignment takes a single total arrival rate")
        if sum(self.arrival_rates) <= 0:
            raise ValueError("total arrival rate must be positive")

    @property
    def mean_size(self) -> float:
        return dist_moments(self.size_dist)[0]

    @property
    def effective_theta(self) -> float:
        """Mean work between interruptions; inf when timers are off."""
        if self.theta is not None:
            return self.theta
        return math.inf if self.m == 0 else self.mean_size / self.m

    @property
    def num_labels(self) -> int:
        if self.random_d is None:
            return self.model.num_classes
        return math.comb(self.model.num_servers, self.random_d)


@dataclass
class RunStats:
    """Measured-window statistics of one run, per class label."""

    seed: int
    duration: float
    mean_size: float
    arrivals: np.ndarray
    completed: np.ndarray
    total_delay: np.ndarray
    area: np.ndarray
    interruptions: int
    events: dict
    state_time: dict | None = None

    @property
    def mean_delay(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.total_delay / self.completed

    @property
    def mean_jobs(self) -> np.ndarray:
        """Time-averaged number of jobs of each class."""
        return self.area / self.duration

    @property
    def completion_rates(self) -> np.ndarray:
        return self.completed / self.duration

    @property
    def service_rates(self) -> np.ndarray:
        return self.mean_size / self.mean_delay

    @property
    def overall_delay(self) -> float:
        return float(self.total_delay.sum() / self.completed.sum())

    @property
    def mean_interruptions(self) -> float:
        """Interruptions per job completed in the measured window."""
        return self.interruptions / float(self.completed.sum())

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "duration": self.duration,
            "completed": self.completed.tolist(),
            "mean_delay": self.mean_delay.tolist(),
            "mean_jobs": self.mean_jobs.tolist(),
            "mean_interruptions": self.mean_interruptions,
            "events": dict(self.events),
        }


class Job:
    __slots__ = ("id", "label", "smask", "size", "remaining", "rate", "t_last", "arrival",
                 "version", "held", "interrupts", "served")

    def __init__(self, job_id, label, smask, size, t):
        self.id = job_id
        self.label = label
        self.smask = smask
        self.size = size
        self.remaining = size
        self.rate = 0.0
        self.t_last = t
        self.arrival = t
        self.version = 0
        self.held = 0
        self.interrupts = 0
        self.served = 0.0


def _stream(draw):
    while True:
        yield from draw(_BATCH).tolist()


def combination_rank(servers, n: int) -> int:
    """Position of the sorted tuple ``servers`` in ``itertools.combinations(range(n), d)``."""
    d = len(servers)
    return math.comb(n, d) - 1 - sum(math.comb(n - 1 - c, d - i) for i, c in enumerate(servers))


class Simulation:
    """State of one run; advance it with :meth:`step` or :meth:`run`."""

    def __init__(self, config: SimConfig, trace: TextIO | None = None, debug: bool = False,
                 track_states: bool = False):
        self.config = config
        model = config.model
        self.caps = list(model.server_capacities)
        self.theta = config.effective_theta
        self.trace = trace
        self.debug = debug
        self.rng = np.random.default_rng(config.seed)
        rng = self.rng
        self.expo = _stream(rng.standard_exponential)
        self.sizes = _stream(lambda n: config.size_dist.sample(rng, n))
        self.total_rate = sum(config.arrival_rates)
        self.jobs_stream = self._job_stream()

        self.t = 0.0
        self.queue: list[Job] = []
        self.busy: list[Job | None] = [None] * model.num_servers
        self.timer_version = [0] * model.num_servers
        self.heap: list = []
        self.seq = itertools.count()
        self.next_id = 0
        n_labels = config.num_labels
        self.counts = [0] * n_labels if config.random_d is None or n_labels <= 10_000 else None
        self.event_counts = [0, 0, 0]
        self.track_states = track_states
        self._reset_window()
        self._push(self.t + next(self.expo) / self.total_rate, ARRIVAL, None, 0)

    # -- bookkeeping -------------------------------------------------------

    def _job_stream(self):
        cfg = self.config
        rng = self.rng
        if cfg.random_d is None:
            rates = np.array(cfg.arrival_rates)
            cum = np.cumsum(rates) / rates.sum()
            masks = cfg.model.server_masks
            while True:
                labels = np.minimum(np.searchsorted(cum, rng.random(_BATCH), side="right"), len(cum) - 1)
                for lab in labels.tolist():
                    yield lab, masks[lab]
        else:
            n, d = cfg.model.num_servers, cfg.random_d
            while True:
                picks = np.sort(np.argpartition(rng.random((_BATCH, n)), d - 1, axis=1)[:, :d], axis=1)
                for row in picks.tolist():
                    mask = 0
                    for s in row:
                        mask |= 1 << s
                    yield combination_rank(row, n), mask

    def _reset_window(self):
        n = self.config.num_labels
        self.recording_since = self.t
        self.w_arrivals = [0] * n
        self.w_completed = [0] * n
        self.w_delay = [0.0] * n
        self.w_area = [0.0] * n
        self.w_interrupts = 0
        self.w_events = [0, 0, 0]
        self.state_time: dict = {}

    def _push(self, t, kind, obj, version):
        heapq.heappush(self.heap, (t, next(self.seq), kind, obj, version))

    def _accrue(self, job, t):
        if job.rate:
            done = job.rate * (t - job.t_last)
            job.remaining -= done
            job.served += done
        job.t_last = t

    def _assign(self, s, job, t):
        self.busy[s] = job
        job.held |= 1 << s
        job.rate += self.caps[s]
        if self.theta != math.inf:
            self.timer_version[s] += 1
            self._push(t + next(self.expo) * self.theta / self.caps[s], TIMER, s, self.timer_version[s])

    def _release(self, job) -> int:
        released = job.held
        busy, tv = self.busy, self.timer_version
        for s in members(released):
            busy[s] = None
            tv[s] += 1
        job.held = 0
        job.rate = 0.0
        job.version += 1
        return released

    def _schedule_departure(self, job, t):
        job.version += 1
        self._push(t + job.remaining / job.rate, DEPARTURE, job, job.version)

    def reallocate(self, start: int, free: int, t: float) -> None:
        """Hand the servers in bitmask ``free`` to the first compatible jobs from ``start`` on."""
        queue = self.queue
        for k in range(start, len(queue)):
            job = queue[k]
            common = free & job.smask
            if common:
                self._accrue(job, t)
                for s in members(common):
                    self._assign(s, job, t)
                self._schedule_departure(job, t)
                free &= ~common
                if not free:
                    break

    # -- events ------------------------------------------------------------

    def _on_arrival(self, t):
        label, smask = next(self.jobs_stream)
        job = Job(self.next_id, label, smask, next(self.sizes), t)
        self.next_id += 1
        self.queue.append(job)
        if self.counts is not None:
            self.counts[label] += 1
        self.w_arrivals[label] += 1
        idle = 0
        busy = self.busy
        for s in members(smask):
            if busy[s] is None:
                idle |= 1 << s
        if idle:
            for s in members(idle):
                self._assign(s, job, t)
            self._schedule_departure(job, t)
        self._push(t + next(self.expo) / self.total_rate, ARRIVAL, None, 0)
        return job

    def _on_departure(self, job, t):
        self._accrue(job, t)
        if self.debug:
            assert math.isclose(job.served, job.size, rel_tol=1e-9, abs_tol=1e-12), (job.served, job.size)
        job.remaining = 0.0
        k = self.queue.index(job)
        del self.queue[k]
        if self.counts is not None:
            self.counts[job.label] -= 1
        free = self._release(job)
        self.reallocate(k, free, t)
        lab = job.label
        self.w_completed[lab] += 1
        self.w_delay[lab] += t - job.arrival
        self.w_area[lab] += t - max(job.arrival, self.recording_since)
        self.w_interrupts += job.interrupts
        return job

    def _on_timer(self, s, t):
        job = self.busy[s]
        self._accrue(job, t)
        job.interrupts += 1
        k = self.queue.index(job)
        del self.queue[k]
        self.queue.append(job)
        free = self._release(job)
        self.reallocate(k, free, t)
        return job

    def step(self) -> int:
        """Apply the next valid event and return its kind."""
        heap = self.heap
        while True:
            t, _, kind, obj, version = heapq.heappop(heap)
            if kind == DEPARTURE:
                if obj.version == version:
                    break
            elif kind == TIMER:
                if self.timer_version[obj] == version:
                    break
            else:
                break
        if self.track_states and self.counts is not None:
            key = tuple(self.counts)
            self.state_time[key] = self.state_time.get(key, 0.0) + (t - self.t)
        self.t = t
        if kind == ARRIVAL:
            job = self._on_arrival(t)
        elif kind == DEPARTURE:
            job = self._on_departure(obj, t)
        else:
            job = self._on_timer(obj, t)
        self.w_events[kind] += 1
        if self.trace is not None:
            n_busy = sum(b is not None for b in self.busy)
            self.trace.write(f"{t:.9g}\t{EVENT_NAMES[kind]}\t{job.id}\t{job.label}\t{len(self.queue)}\t{n_busy}\n")
        if self.debug:
            self.check_consistency()
        return kind

    def run(self, events: int) -> None:
        step = self.step
        for _ in range(events):
            step()

    # -- invariants ----------------------------------------------------------

    def fresh_assignment(self) -> list[int]:
        """Servers each queued job would hold if allocated from scratch."""
        covered = 0
        out = []
        for job in self.queue:
            fresh = job.smask & ~covered
            out.append(fresh)
            covered |= fresh
        return out

    def check_consistency(self) -> None:
        expected = self.fresh_assignment()
        for job, fresh in zip(self.queue, expected):
            assert job.held == fresh, f"job {job.id} holds {job.held:b}, expected {fresh:b}"
            assert math.isclose(job.rate, sum(self.caps[s] for s in members(fresh)), rel_tol=1e-12)
        union = 0
        for job in self.queue:
            union |= job.smask
        total = sum(job.rate for job in self.queue)
        assert math.isclose(total, sum(self.caps[s] for s in members(union)), rel_tol=1e-12, abs_tol=1e-12)
        for s, job in enumerate(self.busy):
            assert job is None or (job.held >> s) & 1

    def stats(self) -> RunStats:
        area = list(self.w_area)
        for job in self.queue:
            area[job.label] += self.t - max(job.arrival, self.recording_since)
        return RunStats(
            seed=self.config.seed,
            duration=self.t - self.recording_since,
            mean_size=self.config.mean_size,
            arrivals=np.array(self.w_arrivals),
            completed=np.array(self.w_completed),
            total_delay=np.array(self.w_delay),
            area=np.array(area),
            interruptions=self.w_interrupts,
            events=dict(zip(EVENT_NAMES, self.w_events)),
            state_time=dict(self.state_time) if self.track_states else None,
        )


def simulate(config: SimConfig, trace: TextIO | None = None, debug: bool = False,
             track_states: bool = False) -> RunStats:
    """Run warm-up events unrecorded, then measured events, and return the statistics."""
    sim = Simulation(config, trace=trace, debug=debug, track_states=track_states)
    sim.run(config.warmup_events)
    sim._reset_window()
    sim.run(config.measured_events)
    return sim.stats()


@dataclass
class Replication:
    """Across-run means with normal-approximation 95% confidence half-widths."""

    runs: list[RunStats]
    mean_delay: np.ndarray
    delay_se: np.ndarray
    mean_rate: np.ndarray
    rate_se: np.ndarray
    mean_interruptions: float
    overall_delay: float
    overall_delay_se: float
    z: float = 1.959963984540054
    seeds: list = field(default_factory=list)

    @property
    def delay_ci(self) -> np.ndarray:
        return self.z * self.delay_se

    @property
    def rate_ci(self) -> np.ndarray:
        return self.z * self.rate_se


def _mean_se(values: np.ndarray):
    """Column means and standard errors, ignoring NaN entries."""
    with np.errstate(invalid="ignore", divide="ignore"):
        n = np.sum(~np.isnan(values), axis=0)
        mean = np.nanmean(values, axis=0) if values.size else np.array([])
        sd = np.nanstd(values, axis=0, ddof=1)
        return mean, sd / np.sqrt(n)


def run_seeds(seed: int, runs: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(runs)]


def replicate(config: SimConfig, runs: int, workers: int = 1) -> Replication:
    """Independent runs with seeds derived from ``config.seed``."""
    if runs < 2:
        raise ValueError("need at least two runs for a confidence interval")
    seeds = run_seeds(config.seed, runs)
    configs = [replace(config, seed=s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(simulate, configs))
    else:
        results = [simulate(c) for c in configs]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        delays = np.array([r.mean_delay for r in results])
        rates = np.array([r.service_rates for r in results])
        d_mean, d_se = _mean_se(delays)
        r_mean, r_se = _mean_se(rates)
        overall = np.array([r.overall_delay for r in results])
    return Replication(
        runs=results,
        mean_delay=d_mean,
        delay_se=d_se,
        mean_rate=r_mean,
        rate_se=r_se,
        mean_interruptions=float(np.mean([r.mean_interruptions for r in results])),
        overall_delay=float(overall.mean()),
        overall_delay_se=float(overall.std(ddof=1) / math.sqrt(runs)),
        seeds=seeds,
    )
