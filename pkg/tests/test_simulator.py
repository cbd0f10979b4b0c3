import io
import itertools
import math

import numpy as np
import pytest

from bfcluster.analysis import aggregate_weight, performance_metrics
from bfcluster.distributions import Exponential, Hyperexponential
from bfcluster.model import ClusterModel, random_assignment_model, random_model, toy_model
from bfcluster.simulator import Job, SimConfig, Simulation, combination_rank, replicate, run_seeds, simulate

import phase_ctmc


def config(model=None, rates=(0.5, 0.5), dist=None, **kw):
    kw.setdefault("m", 1)
    kw.setdefault("warmup_events", 1000)
    kw.setdefault("measured_events", 10_000)
    return SimConfig(model or toy_model(), rates, dist or Exponential(), **kw)


def place(sim, labels, t=0.0):
    """Put jobs of the given classes in the queue and allocate from scratch."""
    jobs = []
    for lab in labels:
        job = Job(sim.next_id, lab, sim.config.model.server_masks[lab], 1.0, t)
        sim.next_id += 1
        sim.queue.append(job)
        jobs.append(job)
    sim.reallocate(0, (1 << sim.config.model.num_servers) - 1, t)
    return jobs


def test_reallocate_from_scratch():
    sim = Simulation(config())
    a, b = place(sim, [0, 1])
    assert a.held == 0b101 and b.held == 0b010
    assert (a.rate, b.rate) == (2, 1)
    sim.check_consistency()


def test_reallocate_same_class_waits():
    sim = Simulation(config())
    a, b, c = place(sim, [0, 0, 1])
    assert b.held == 0 and b.rate == 0
    assert c.held == 0b010


def test_timer_moves_job_to_tail_and_swaps_rates():
    sim = Simulation(config())
    a, b = place(sim, [0, 1])
    sim._on_timer(2, 0.1)
    assert sim.queue == [b, a]
    assert (a.rate, b.rate) == (1, 2)
    assert a.interrupts == 1
    sim.check_consistency()


def test_departure_hands_servers_on():
    sim = Simulation(config())
    a, b = place(sim, [0, 1])
    sim._on_departure(a, 0.2)
    assert sim.queue == [b]
    assert b.rate == 2
    assert sim.busy[0] is None


def test_interrupted_job_may_resume_at_once():
    # alone in the queue, the job takes its servers back after moving to the tail
    sim = Simulation(config())
    (a,) = place(sim, [0])
    sim._on_timer(0, 0.1)
    assert sim.queue == [a] and a.held == 0b101


def test_stale_events_are_skipped():
    sim = Simulation(config(m=5), debug=True)
    kinds = [sim.step() for _ in range(5000)]
    assert set(kinds) == {0, 1, 2}


@pytest.mark.parametrize("model,rates,dist", [
    (toy_model(), (0.9, 0.9), Hyperexponential()),
    (random_model(3, 4, 3), (0.3, 0.5, 0.4), Exponential()),
    (toy_model(1, 0, 1), (0.6, 0.6), Hyperexponential()),
])
def test_debug_invariants(model, rates, dist):
    # work conservation, rescan equivalence and total rate = mu(active set) after every event
    simulate(config(model, rates, dist, m=5, warmup_events=0, measured_events=20_000), debug=True)


def test_determinism():
    a = simulate(config(seed=7))
    b = simulate(config(seed=7))
    c = simulate(config(seed=8))
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != c.to_dict()


def test_fcfs_has_no_interruptions():
    st = simulate(config(m=0))
    assert st.interruptions == 0 and st.events["timer"] == 0


def test_mm1_fcfs():
    cfg = SimConfig(ClusterModel([1.0], [[0]]), (0.5,), Exponential(), m=0,
                    warmup_events=10_000, measured_events=200_000, seed=1)
    rep = replicate(cfg, 10)
    assert abs(rep.mean_delay[0] - 2.0) < 3 * rep.delay_se[0]


def test_littles_law():
    st = simulate(config(rates=(0.8, 0.8), measured_events=200_000, seed=3))
    # time-average jobs = throughput * delay, up to the jobs still in the system at the end
    lhs = st.area.sum() / st.duration
    rhs = st.total_delay.sum() / st.duration
    assert lhs == pytest.approx(rhs, rel=0.02)


def test_interruptions_track_m():
    st = simulate(config(toy_model(), (0.6, 0.6), Hyperexponential(), m=1, measured_events=300_000, seed=5))
    assert st.mean_interruptions == pytest.approx(1.0, rel=0.05)


def test_state_occupancy_matches_product_form():
    lam = (0.6, 0.6)
    model = toy_model()
    st = simulate(config(model, lam, m=1, warmup_events=10_000, measured_events=400_000, seed=11),
                  track_states=True)
    z = performance_metrics(model, lam).normalization
    total = sum(st.state_time.values())
    for x in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0)]:
        expected = math.exp(aggregate_weight(model, lam, x)) / z
        assert st.state_time.get(x, 0.0) / total == pytest.approx(expected, abs=0.01)


def test_exponential_sizes_match_balanced_fairness():
    lam = (0.7, 0.7)
    rep = replicate(config(rates=lam, m=1, warmup_events=10_000, measured_events=100_000, seed=2), 8)
    expected = performance_metrics(toy_model(), lam).delays
    assert np.all(np.abs(rep.mean_delay - expected) < 3 * rep.delay_se)


def test_hyperexponential_matches_exact_chain():
    lam = (0.3, 0.3)
    d = Hyperexponential()
    args = ([1, 1, 1], [[0, 2], [1, 2]], lam, [d.mean1, d.mean2], [d.p1, d.p2], 0.2)
    exact, _ = phase_ctmc.solve(*args, 6)
    coarser, _ = phase_ctmc.solve(*args, 5)
    slack = np.abs(exact - coarser)  # truncation error is below the last refinement step
    rep = replicate(config(rates=lam, dist=d, m=5, warmup_events=10_000, measured_events=300_000, seed=4), 6)
    assert np.all(np.abs(rep.mean_delay - exact) < 3 * rep.delay_se + slack)


def test_trace_format():
    buf = io.StringIO()
    simulate(config(warmup_events=0, measured_events=500), trace=buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 500
    times = []
    for line in lines:
        t, kind, job_id, label, qlen, busy = line.split("\t")
        assert kind in {"arrival", "departure", "timer"}
        assert int(label) in (0, 1) and int(job_id) >= 0
        assert int(qlen) >= 0 and 0 <= int(busy) <= 3
        times.append(float(t))
    assert times == sorted(times)


def test_combination_rank():
    for n, d in [(4, 2), (6, 3), (5, 1)]:
        for k, combo in enumerate(itertools.combinations(range(n), d)):
            assert combination_rank(combo, n) == k


def test_random_assignment_labels():
    model = random_assignment_model(4, 2)
    cfg = SimConfig(ClusterModel([1.0] * 4, [[s] for s in range(4)]), (1.0,), Exponential(), m=1,
                    warmup_events=0, measured_events=60_000, random_d=2)
    st = simulate(cfg)
    assert st.arrivals.size == 6
    assert st.arrivals / st.arrivals.sum() == pytest.approx([1 / 6] * 6, abs=0.01)
    sim = Simulation(cfg)
    sim.run(2000)
    for job in sim.queue:
        assert job.smask == model.server_masks[job.label]


def test_config_validation():
    with pytest.raises(ValueError):
        config(m=None)
    with pytest.raises(ValueError):
        config(theta=1.0)
    with pytest.raises(ValueError):
        config(rates=(0.5,))
    with pytest.raises(ValueError):
        config(m=-1)
    assert config(m=0).effective_theta == math.inf
    assert config(m=4).effective_theta == 0.25


def test_replicate_seeds():
    assert run_seeds(1, 3) == run_seeds(1, 3)
    assert len(set(run_seeds(1, 50))) == 50
    with pytest.raises(ValueError):
        replicate(config(), 1)
