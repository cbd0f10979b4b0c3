"""Scenarios, load sweeps and CSV/JSON reports comparing simulation with balanced fairness."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (
    BalanceTable,
    UnstableWorkloadError,
    bf_rates,
    check_stability,
    comparison_bound_check,
    performance_metrics,
    states_up_to,
    tree_closed_form,
    tree_rates,
)
from .distributions import DISTRIBUTIONS, SizeDistribution, dist_moments, distribution_name, make_distribution
from .model import (
    ClusterModel,
    check_oi_axioms,
    detailed_states,
    random_assignment_model,
    random_model,
    rate_of_set,
    toy_model,
)
from .oracles import avg_rates_oracle, product_form_deviation
from .simulator import SimConfig, Simulation, replicate

log = logging.getLogger(__name__)

# exact per-class analysis of random assignment up to this many classes
MAX_EXACT_CLASSES = 20


@dataclass
class Scenario:
    """A cluster, a workload family indexed by load, and a run protocol.

    Either ``class_servers`` lists the compatible servers of each class, or
    ``random_d`` is set and each job gets ``random_d`` servers chosen
    uniformly at random.
    """

    name: str
    capacities: tuple[float, ...]
    class_servers: tuple[tuple[int, ...], ...] | None = None
    random_d: int | None = None
    loads: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    split: tuple[float, ...] | None = None
    size_dist: SizeDistribution = field(default_factory=lambda: make_distribution("exponential"))
    m_values: tuple[float, ...] = (0, 1, 5)
    runs: int = 100
    events: int = 1_000_000
    warmup: int = 1_000_000
    seed: int = 0
    tolerance: float = 1e-10

    def __post_init__(self):
        if (self.class_servers is None) == (self.random_d is None):
            raise ValueError("give exactly one of class_servers and random_d")
        if self.random_d is not None and not 1 <= self.random_d <= len(self.capacities):
            raise ValueError("need 1 <= d <= number of servers")

    @property
    def num_classes(self) -> int:
        if self.class_servers is not None:
            return len(self.class_servers)
        return math.comb(len(self.capacities), self.random_d)

    @property
    def mean_size(self) -> float:
        return dist_moments(self.size_dist)[0]

    def sim_model(self) -> ClusterModel:
        if self.class_servers is not None:
            return ClusterModel(self.capacities, self.class_servers)
        return ClusterModel(self.capacities, [range(len(self.capacities))])

    def analysis_model(self) -> ClusterModel | None:
        """Exact model, or None when random assignment has too many classes."""
        if self.class_servers is not None:
            return ClusterModel(self.capacities, self.class_servers)
        if self.num_classes > MAX_EXACT_CLASSES:
            return None
        return random_assignment_model(len(self.capacities), self.random_d, self.capacities[0])

    def reachable_capacity(self) -> float:
        if self.class_servers is None:
            return math.fsum(self.capacities)
        used = sorted({s for srv in self.class_servers for s in srv})
        return math.fsum(self.capacities[s] for s in used)

    def total_rate(self, load: float) -> float:
        """Total arrival rate giving load ``load`` = sigma * sum(lambda) / capacity."""
        return load * self.reachable_capacity() / self.mean_size

    def arrival_rates(self, load: float) -> np.ndarray:
        """Per-class arrival rates (uniform over server sets under random assignment)."""
        total = self.total_rate(load)
        if self.class_servers is None:
            return np.full(self.num_classes, total / self.num_classes)
        w = np.ones(self.num_classes) if self.split is None else np.asarray(self.split, dtype=float)
        return total * w / w.sum()

    def sim_config(self, load: float, m: float, seed: int | None = None) -> SimConfig:
        rates = (self.total_rate(load),) if self.random_d is not None else tuple(self.arrival_rates(load))
        return SimConfig(self.sim_model(), rates, self.size_dist, m=m, warmup_events=self.warmup,
                         measured_events=self.events, seed=self.seed if seed is None else seed,
                         random_d=self.random_d)


def symmetric_toy_scenario(**kw) -> Scenario:
    """Two classes with one dedicated server each and a shared server, all of capacity 1."""
    return Scenario(name="symmetric-toy", capacities=(1.0, 1.0, 1.0), class_servers=((0, 2), (1, 2)), **kw)


def asymmetric_toy_scenario(**kw) -> Scenario:
    """Class 1 on both servers, class 2 on the shared server only."""
    return Scenario(name="asymmetric-toy", capacities=(1.0, 1.0), class_servers=((0, 1), (1,)), **kw)


def random_assignment_scenario(num_servers: int, d: int, capacity: float = 1.0, **kw) -> Scenario:
    """Every job is assigned d of ``num_servers`` unit servers uniformly at random."""
    kw.setdefault("name", f"random-S{num_servers}-d{d}")
    return Scenario(capacities=(float(capacity),) * num_servers, random_d=d, **kw)


# --------------------------------------------------------------------------
# scenario files


def scenario_from_dict(data: dict) -> Scenario:
    """Build a scenario from parsed file contents (1-based server indices)."""
    kw = {}
    if "model" in data:
        caps = tuple(float(c) for c in data["model"]["capacities"])
        classes = data["model"]["classes"]
        for srv in classes:
            if any(not 1 <= int(s) <= len(caps) for s in srv):
                raise ValueError(f"server index out of 1..{len(caps)} in {srv}")
        kw["capacities"] = caps
        kw["class_servers"] = tuple(tuple(int(s) - 1 for s in srv) for srv in classes)
    elif "random_assignment" in data:
        ra = data["random_assignment"]
        kw["capacities"] = (float(ra.get("capacity", 1.0)),) * int(ra["servers"])
        kw["random_d"] = int(ra["d"])
    else:
        raise ValueError("scenario needs a 'model' or a 'random_assignment' section")
    if "distribution" in data:
        params = dict(data["distribution"])
        kw["size_dist"] = make_distribution(params.pop("name"), **params)
    for key, conv in (("loads", lambda v: tuple(float(x) for x in v)),
                      ("split", lambda v: tuple(float(x) for x in v)),
                      ("m", lambda v: tuple(float(x) for x in v)),
                      ("runs", int), ("events", int), ("warmup", int), ("seed", int),
                      ("tolerance", float)):
        if key in data:
            kw["m_values" if key == "m" else key] = conv(data[key])
    return Scenario(name=data.get("name", "scenario"), **kw)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def scenario_to_dict(sc: Scenario) -> dict:
    out = {"name": sc.name}
    if sc.class_servers is not None:
        out["model"] = {"capacities": list(sc.capacities),
                        "classes": [[s + 1 for s in srv] for srv in sc.class_servers]}
    else:
        out["random_assignment"] = {"servers": len(sc.capacities), "d": sc.random_d,
                                    "capacity": sc.capacities[0]}
    dist = {"name": distribution_name(sc.size_dist)}
    dist.update({k: v for k, v in vars(sc.size_dist).items() if not k.startswith("_")})
    out.update(distribution=dist, loads=list(sc.loads), m=list(sc.m_values), runs=sc.runs,
               events=sc.events, warmup=sc.warmup, seed=sc.seed, tolerance=sc.tolerance)
    if sc.split is not None:
        out["split"] = list(sc.split)
    return out


# --------------------------------------------------------------------------
# analytical and simulated sweeps


def analytical_point(sc: Scenario, load: float) -> dict:
    """Balanced-fairness metrics at one load.

    Returns per-class ``gamma`` and ``delay`` arrays (NaN when unstable),
    the stability verdict and, for the two-class tree, the closed form.
    """
    model = sc.analysis_model()
    sigma = sc.mean_size
    out = {"load": load, "stable": None, "gamma": None, "delay": None, "tree_gamma": None,
           "overall_delay": math.nan}
    if model is None:
        # too many classes for exact metrics: stability of the symmetric system only
        out["stable"] = load < 1.0
        return out
    lam = sc.arrival_rates(load)
    n = model.num_classes
    if load == 0:
        gamma = np.array([model.max_rate(i) for i in range(n)])
        out.update(stable=True, gamma=gamma, delay=sigma / gamma, overall_delay=float(np.mean(sigma / gamma)))
        return out
    stability = check_stability(model.scaled(1.0 / sigma), lam)
    out["stable"] = stability.stable
    if not stability.stable:
        out["gamma"] = np.full(n, math.nan)
        out["delay"] = np.full(n, math.nan)
        return out
    rep = performance_metrics(model, lam, sigma, tolerance=sc.tolerance)
    out["gamma"], out["delay"] = rep.service_rates, rep.delays
    active = lam > 0
    out["overall_delay"] = float(rep.mean_jobs[active].sum() / lam[active].sum())
    tree = tree_rates(model)
    if tree is not None:
        mu = [c / sigma for c in tree]
        g = tree_closed_form(*mu, *lam)
        out["tree_gamma"] = np.array(g) * sigma
    return out


def sweep_load(sc: Scenario, loads=None, simulate: bool = True, m_values=None, workers: int = 1) -> list[dict]:
    """One row per (load, class), analytical columns plus simulated mean and CI per m.

    Explicit-class scenarios report every class; random assignment reports the
    all-jobs average under class "all".  Unstable loads are flagged and not
    simulated.
    """
    loads = sc.loads if loads is None else tuple(loads)
    m_values = sc.m_values if m_values is None else tuple(m_values)
    sigma = sc.mean_size
    per_class = sc.class_servers is not None
    rows = []
    for load in loads:
        ana = analytical_point(sc, load)
        sims = {}
        if simulate and ana["stable"] and load > 0:
            for m in m_values:
                log.info("%s: load %.3g, m=%g", sc.name, load, m)
                sims[m] = replicate(sc.sim_config(load, m), sc.runs, workers=workers)
        labels = list(range(sc.num_classes)) if per_class else ["all"]
        for k, label in enumerate(labels):
            if per_class:
                a_delay = ana["delay"][k] if ana["delay"] is not None else math.nan
                a_gamma = ana["gamma"][k] if ana["gamma"] is not None else math.nan
            else:
                a_delay = ana["overall_delay"]
                a_gamma = sigma / a_delay if a_delay == a_delay else math.nan
            row = {"load": load, "class": label + 1 if per_class else label,
                   "stable": ana["stable"], "analytical_delay": a_delay, "analytical_gamma": a_gamma}
            if ana["tree_gamma"] is not None:
                row["tree_gamma"] = ana["tree_gamma"][k]
            for m in m_values:
                rep = sims.get(m)
                if rep is None:
                    d = dci = g = gci = math.nan
                elif per_class:
                    d, dci = rep.mean_delay[k], rep.delay_ci[k]
                    g, gci = rep.mean_rate[k], rep.rate_ci[k]
                else:
                    d, dci = rep.overall_delay, rep.z * rep.overall_delay_se
                    g, gci = sigma / d, sigma * dci / d ** 2
                row.update({f"delay_m{m:g}": d, f"delay_ci_m{m:g}": dci,
                            f"gamma_m{m:g}": g, f"gamma_ci_m{m:g}": gci})
            rows.append(row)
    return rows


def metric_table(rows: list[dict], metric: str, m_values) -> tuple[list[str], list[list]]:
    """Columns load, class, analytical, then mean and CI half-width per m."""
    header = ["load", "class", "stable", "analytical"]
    for m in m_values:
        header += [f"m{m:g}_mean", f"m{m:g}_ci"]
    body = []
    for r in rows:
        line = [r["load"], r["class"], r["stable"], r[f"analytical_{metric}"]]
        for m in m_values:
            line += [r.get(f"{metric}_m{m:g}", math.nan), r.get(f"{metric}_ci_m{m:g}", math.nan)]
        body.append(line)
    return header, body


def write_csv(path, header, body) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(body)


def write_gnuplot(path, header, body) -> None:
    """Whitespace-separated columns with a commented header; NaN for missing values."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for line in body:
            fh.write(" ".join(str(v) for v in line) + "\n")


def run_scenario(sc: Scenario, out_dir, loads=None, m_values=None, simulate: bool = True,
                 workers: int = 1) -> dict:
    """Sweep the scenario and write gamma.csv, delay.csv, their .dat twins and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m_values = sc.m_values if m_values is None else tuple(m_values)
    rows = sweep_load(sc, loads, simulate=simulate, m_values=m_values, workers=workers)
    paths = {}
    for metric in ("gamma", "delay"):
        header, body = metric_table(rows, metric, m_values)
        paths[metric] = out / f"{metric}.csv"
        write_csv(paths[metric], header, body)
        write_gnuplot(out / f"{metric}.dat", header, body)
    summary = {"scenario": scenario_to_dict(sc), "rows": rows}
    paths["summary"] = out / "summary.json"
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_default)
    return {"paths": paths, "rows": rows}


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(type(obj))


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default)


# --------------------------------------------------------------------------
# validation suite


def reference_models() -> dict[str, ClusterModel]:
    return {
        "symmetric-toy": toy_model(),
        "asymmetric-toy": toy_model(1.0, 0.0, 1.0),
        "random-4x3": random_model(2017, 4, 3),
    }


def validate(level_max: int = 5, sim_events: int = 20_000) -> list[tuple[str, bool, str]]:
    """Oracle and property checks; returns (name, passed, detail) per check."""
    results = []

    def record(name, ok, detail=""):
        results.append((name, bool(ok), detail))

    toy = toy_model()
    rep = check_oi_axioms(toy, detailed_states(2, 4))
    record("oi-axioms toy n<=4", rep.passed, f"{rep.checked_states} states")

    for name, model in reference_models().items():
        lam = np.full(model.num_classes, 0.3)
        table = BalanceTable(model)
        worst_thm, worst_bal, worst_par, cap_ok = 0.0, 0.0, 0.0, True
        for x in states_up_to(model.num_classes, level_max):
            if not any(x):
                continue
            phi = bf_rates(table, x)
            oracle = avg_rates_oracle(model, lam, x)
            worst_thm = max(worst_thm, float(np.max(np.abs(oracle - phi) / np.maximum(phi, 1e-300))))
            active = [i for i, v in enumerate(x) if v]
            mu_a = rate_of_set(model, active)
            worst_par = max(worst_par, abs(phi[active].sum() - mu_a) / mu_a)
            for sub in range(1, 1 << model.num_classes):
                cls = [i for i in range(model.num_classes) if sub >> i & 1]
                cap_ok &= phi[cls].sum() <= rate_of_set(model, cls) * (1 + 1e-10)
            for i in active:
                for j in active:
                    if i < j:
                        xi = list(x); xi[i] -= 1
                        xj = list(x); xj[j] -= 1
                        lhs = phi[i] * bf_rates(table, xi)[j]
                        rhs = bf_rates(table, xj)[i] * phi[j]
                        worst_bal = max(worst_bal, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        record(f"average-rates = balanced-fair rates [{name}]", worst_thm <= 1e-8, f"max rel err {worst_thm:.2e}")
        record(f"balance property [{name}]", worst_bal <= 1e-10, f"max rel err {worst_bal:.2e}")
        record(f"pareto efficiency [{name}]", worst_par <= 1e-10, f"max rel err {worst_par:.2e}")
        record(f"capacity set [{name}]", cap_ok)

    dev = product_form_deviation(toy, [0.5, 0.5], 8, 4)
    record("product form vs truncated chain", dev <= 1e-3, f"max rel dev {dev:.2e}")

    worst = 0.0
    for rho in np.arange(1, 10) / 10:
        lam = [1.5 * rho, 1.5 * rho]
        g_tree = tree_closed_form(1, 1, 1, *lam)
        g_num = performance_metrics(toy, lam).service_rates
        worst = max(worst, float(np.max(np.abs(g_num - g_tree))))
    record("closed form vs level sums", worst <= 1e-6, f"max abs diff {worst:.2e}")

    st = check_stability(toy, [1.4, 1.4])
    un = check_stability(toy, [1.6, 1.6])
    record("stability verdicts", st.stable and not un.stable and un.violating_set == {0, 1})
    bound = comparison_bound_check(toy, st.witness, 8)
    record("comparison bound", bound.holds, f"max ratio {bound.max_ratio:.4f}")

    cfg = SimConfig(toy, (0.9, 0.9), make_distribution("hyperexponential"), m=5,
                    warmup_events=0, measured_events=sim_events, seed=1)
    try:
        Simulation(cfg, debug=True).run(sim_events)
        record("simulator invariants (debug run)", True, f"{sim_events} events")
    except AssertionError as exc:
        record("simulator invariants (debug run)", False, str(exc))
    return results


__all__ = [
    "Scenario", "symmetric_toy_scenario", "asymmetric_toy_scenario", "random_assignment_scenario",
    "scenario_from_dict", "load_scenario", "scenario_to_dict", "analytical_point", "sweep_load",
    "run_scenario", "metric_table", "write_csv", "write_gnuplot", "validate", "reference_models",
    "DISTRIBUTIONS", "UnstableWorkloadError",
]
