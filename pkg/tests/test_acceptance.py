"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, listed in the "acceptance criteria"
section at the end of the pytest run.  Simulation criteria use fixed seeds.
"""

import numpy as np
import pytest

from bfcluster.analysis import (
    BalanceTable,
    bf_rates,
    check_stability,
    comparison_bound_check,
    normalization_partial_sums,
    performance_metrics,
    states_up_to,
    tree_closed_form,
)
from bfcluster.distributions import Exponential, make_distribution
from bfcluster.experiments import asymmetric_toy_scenario, random_assignment_scenario, symmetric_toy_scenario
from bfcluster.model import random_assignment_model, random_model, rate_of_set, toy_model
from bfcluster.oracles import avg_rates_oracle, product_form_deviation
from bfcluster.simulator import SimConfig, replicate, simulate

MODELS = {
    "symmetric toy": toy_model(),
    "asymmetric toy": toy_model(1.0, 0.0, 1.0),
    "random 4x3": random_model(2017, 4, 3),
}
ARRIVALS = (0.4, 0.7, 1.1)


def test_criterion_1_product_form(report):
    dev8 = product_form_deviation(toy_model(), [0.5, 0.5], 8, 4)
    dev12 = product_form_deviation(toy_model(), [0.5, 0.5], 12, 4)
    ok = dev8 <= 1e-3 and dev12 <= 1e-6
    report(1, ok, f"chain vs product form on |c|<=4: n_max=8 {dev8:.1e} (<=1e-3), n_max=12 {dev12:.1e} (<=1e-6)")
    assert ok


def test_criterion_2_average_rates(report):
    worst = {}
    for name, model in MODELS.items():
        table = BalanceTable(model)
        lam = ARRIVALS[:model.num_classes]
        err = 0.0
        for x in states_up_to(model.num_classes, 5):
            if not any(x):
                continue
            phi = bf_rates(table, x)
            oracle = avg_rates_oracle(model, lam, x)
            active = np.array(x) > 0
            err = max(err, float(np.max(np.abs(oracle[active] - phi[active]) / phi[active])))
            assert np.all(oracle[~active] == 0) and np.all(phi[~active] == 0)
        worst[name] = err
    ok = max(worst.values()) <= 1e-8
    report(2, ok, "max rel error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<=1e-8)")
    assert ok


def test_criterion_3_balance_and_pareto(report):
    worst_bal, worst_par, cap_ok = 0.0, 0.0, True
    for model in MODELS.values():
        n = model.num_classes
        table = BalanceTable(model)
        for x in states_up_to(n, 6):
            active = [i for i in range(n) if x[i]]
            if not active:
                continue
            phi = bf_rates(table, x)
            mu = rate_of_set(model, active)
            worst_par = max(worst_par, abs(phi[active].sum() - mu) / mu)
            for sub in range(1, 1 << n):
                members = [i for i in range(n) if sub >> i & 1]
                cap_ok &= bool(phi[members].sum() <= rate_of_set(model, members) * (1 + 1e-10))
            for i in active:
                for j in active:
                    if i >= j:
                        continue
                    xi = list(x)
                    xi[i] -= 1
                    xj = list(x)
                    xj[j] -= 1
                    lhs = phi[i] * bf_rates(table, xi)[j]
                    rhs = phi[j] * bf_rates(table, xj)[i]
                    worst_bal = max(worst_bal, abs(lhs - rhs) / lhs)
    ok = worst_bal <= 1e-10 and worst_par <= 1e-10 and cap_ok
    report(3, ok, f"balance {worst_bal:.1e}, pareto {worst_par:.1e} (<=1e-10), capacity set {'ok' if cap_ok else 'violated'}")
    assert ok


def test_criterion_4_closed_form(report):
    g_tree = tree_closed_form(1, 1, 1, 1, 1)
    g_num = performance_metrics(toy_model(), [1, 1], 1.0, tolerance=1e-10).service_rates
    point = float(np.max(np.abs(g_num - g_tree)))
    sweep = 0.0
    for rho in np.arange(1, 10) / 10:
        lam = [1.5 * rho, 1.5 * rho]
        diff = np.abs(performance_metrics(toy_model(), lam, 1.0, tolerance=1e-10).service_rates
                      - tree_closed_form(1, 1, 1, *lam))
        sweep = max(sweep, float(diff.max()))
    ok = abs(g_tree[0] - 1 / 1.4) < 1e-12 and g_tree[0] == g_tree[1] and point <= 1e-6 and sweep <= 1e-6
    report(4, ok, f"closed form {g_tree[0]:.6f} (1/1.4), level sums diff {point:.1e}, sweep max diff {sweep:.1e} (<=1e-6)")
    assert ok


def test_criterion_5_stability(report):
    toy = toy_model()
    stable = check_stability(toy, [1.4, 1.4])
    eta = stable.witness
    witness_ok = stable.stable and bool(np.all(eta > 1.4))
    for mask in range(1, 4):
        witness_ok &= sum(eta[i] for i in range(2) if mask >> i & 1) < toy.rate_of_mask(mask)
    unstable = check_stability(toy, [1.6, 1.6])
    verdict_ok = not unstable.stable and unstable.violating_set == {0, 1}
    bound = comparison_bound_check(toy, eta, 8)
    partial = np.exp(normalization_partial_sums(toy, [1.6, 1.6], 30))
    increments = np.diff(partial)  # mass of each level
    # no plateau: a convergent series has vanishing terms, here every level outweighs the previous one
    growth_ok = bool(np.all(increments > 0) and np.all(np.diff(increments) > 0))
    ok = witness_ok and verdict_ok and bound.holds and growth_ok
    report(5, ok, f"eta={np.round(eta, 4).tolist()} valid={witness_ok}, unstable set {{1,2}}={verdict_ok}, "
                  f"bound x_max=8 max ratio {bound.max_ratio:.4f}, level masses {increments[0]:.2f} -> {increments[-1]:.2f} "
                  f"increasing through n=30")
    assert ok


def test_criterion_6_exponential_exactness(report):
    lam = (0.9, 0.9)
    expected = performance_metrics(toy_model(), lam).delays
    parts, ok = [], True
    for m in (0, 1, 5):
        cfg = SimConfig(toy_model(), lam, Exponential(), m=m, warmup_events=10_000, measured_events=100_000,
                        seed=600 + m)
        rep = replicate(cfg, 20)
        z = np.abs(rep.mean_delay - expected) / rep.delay_se
        ok &= bool(np.all(z <= 3))
        parts.append(f"m={m}: {np.round(rep.mean_delay, 4).tolist()} ({z.max():.2f} SE)")
    report(6, ok, f"analytical {expected[0]:.4f}; " + "; ".join(parts))
    assert ok


# heavy-tailed Zipf sizes converge slowly and get longer runs
SENSITIVITY = [
    ("hyperexponential", 0.05, 300_000),
    ("bimodal", 0.05, 300_000),
    ("zipf", 0.10, 1_000_000),
]


@pytest.mark.parametrize("factory", [symmetric_toy_scenario, asymmetric_toy_scenario], ids=["symmetric", "asymmetric"])
@pytest.mark.parametrize("dist,tol,events", SENSITIVITY, ids=[d for d, _, _ in SENSITIVITY])
def test_criterion_7_insensitivity(report, factory, dist, tol, events):
    sc = factory(size_dist=make_distribution(dist), runs=10, events=events, warmup=events // 5, seed=700)
    load = 0.8
    expected = performance_metrics(sc.analysis_model(), sc.arrival_rates(load), sc.mean_size).delays
    dev, se = {}, {}
    for m in (0, 5):
        rep = replicate(sc.sim_config(load, m), sc.runs)
        k = int(np.argmax(np.abs(rep.mean_delay - expected) / expected))
        dev[m] = abs(rep.mean_delay[k] - expected[k]) / expected[k]
        se[m] = rep.delay_se[k] / expected[k]
    ok = dev[5] <= tol and dev[0] > dev[5]
    report(f"7 ({dist}, {sc.name})", ok, f"worst-class rel deviation m=5 {dev[5]:.1%} +- {se[5]:.1%} SE "
                                         f"(<= {tol:.0%}), m=0 {dev[0]:.1%} +- {se[0]:.1%} SE")
    assert ok


def test_criterion_8_interruption_count(report):
    parts, ok = [], True
    for m in (1, 5):
        cfg = SimConfig(toy_model(), (0.9, 0.9), make_distribution("hyperexponential"), m=m,
                        warmup_events=10_000, measured_events=1_000_000, seed=800 + m)
        st = simulate(cfg)
        done = int(st.completed.sum())
        ok &= done >= 100_000 and abs(st.mean_interruptions - m) <= 0.05 * m
        parts.append(f"m={m}: {st.mean_interruptions:.4f} over {done} jobs")
    report(8, ok, "; ".join(parts) + " (within 5%)")
    assert ok


def test_criterion_9_random_assignment(report):
    sc = random_assignment_scenario(4, 2, size_dist=Exponential(), runs=20, events=100_000, warmup=10_000, seed=900)
    model = random_assignment_model(4, 2)
    parts, ok = [], True
    for load in (0.4, 0.7):
        expected = performance_metrics(model, sc.arrival_rates(load)).delays
        rep = replicate(sc.sim_config(load, 1), sc.runs)
        z = np.abs(rep.mean_delay - expected) / rep.delay_se
        ok &= bool(np.all(z <= 3))
        parts.append(f"rho={load}: analytical {expected[0]:.4f}, simulated "
                     f"{np.round(rep.mean_delay, 3).tolist()} (max {z.max():.2f} SE)")
    report(9, ok, "; ".join(parts))
    assert ok


def test_criterion_10_excluded(report):
    report(10, True, "exact curves for 100 servers with d=2 are out of scope; criteria 7 to 9 stand in",
           status="EXCLUDED")
    pytest.skip("exact analytical curves for S=100 are out of scope")
