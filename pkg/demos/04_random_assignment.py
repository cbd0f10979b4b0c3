# %% [markdown]
# # Random assignment of servers
#
# Each job picks d servers uniformly at random.  With S = 4 and d = 2 there
# are six classes and the exact metrics are cheap; with S = 100 there are
# 4950 classes and only the simulation is available.

# %%
import time

from bfcluster import Exponential, make_distribution, performance_metrics, random_assignment_model, replicate
from bfcluster.experiments import random_assignment_scenario

model = random_assignment_model(4, 2)
print("classes:", model.class_servers)
sc = random_assignment_scenario(4, 2, size_dist=Exponential(), runs=5, events=100_000, warmup=10_000, seed=5)
for load in (0.4, 0.7, 0.9):
    rep = performance_metrics(model, sc.arrival_rates(load))
    sim = replicate(sc.sim_config(load, 1), sc.runs)
    print(f"load {load}: exact delay {rep.delays[0]:.4f} (level {rep.truncation_level}), "
          f"simulated {sim.overall_delay:.4f} +- {1.96 * sim.overall_delay_se:.4f}")

# %% [markdown]
# A bigger pool, simulated only.  Sizes follow the heavy-tailed Zipf phase law.

# %%
big = random_assignment_scenario(100, 2, size_dist=make_distribution("zipf"), runs=2, events=100_000,
                                 warmup=20_000, seed=6)
t0 = time.time()
for m in (0, 5):
    sim = replicate(big.sim_config(0.6, m), big.runs)
    print(f"S=100 d=2 load 0.6 m={m}: mean delay {sim.overall_delay:.3f} (mean size {big.mean_size:.3f})")
print(f"{time.time() - t0:.1f}s")
