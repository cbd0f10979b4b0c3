# %% [markdown]
# # Balanced fairness on the three-server toy cluster
#
# Two job classes share a middle server: class 1 runs on servers 1 and 3,
# class 2 on servers 2 and 3.  Each server serves the oldest compatible job,
# so the rate a job gets depends on what waits ahead of it.

# %%
import math

import numpy as np

from bfcluster import BalanceTable, bf_rates, performance_metrics, toy_model, tree_closed_form
from bfcluster.model import per_position_rates, rate_of_set
from bfcluster.oracles import avg_rates_oracle

model = toy_model()
print("capacities", model.server_capacities, "classes", model.class_servers)
print("mu({1}) =", rate_of_set(model, [0]), " mu({1,2}) =", rate_of_set(model, [0, 1]))

# %% [markdown]
# Positional rates: the head job takes every compatible server, the next job
# only what is left.

# %%
for state in [(0, 1), (1, 0), (0, 0, 1)]:
    print(state, "->", per_position_rates(model, state))

# %% [markdown]
# Averaging over the orderings of a state (weighted by their stationary
# probabilities) gives the balanced-fair rates, which only need the balance
# function Phi.

# %%
table = BalanceTable(model)
for x in [(1, 1), (2, 1), (3, 5)]:
    print(x, "phi =", bf_rates(table, x).round(6), " orderings:", avg_rates_oracle(model, [1, 1], x).round(6))

# %% [markdown]
# Mean service rate per class: closed form for this tree versus the level sums.

# %%
print(" rho   closed form   level sums   delay")
for rho in np.arange(1, 10) / 10:
    lam = 1.5 * rho
    g_tree = tree_closed_form(1, 1, 1, lam, lam)[0]
    rep = performance_metrics(model, [lam, lam])
    print(f"{rho:4.1f}   {g_tree:.6f}      {rep.service_rates[0]:.6f}     {rep.delays[0]:.4f}")

# %%
rep = performance_metrics(model, [1, 1])
print("lambda=(1,1): gamma =", rep.service_rates, " 1/1.4 =", 1 / 1.4)
print("truncated at level", rep.truncation_level, "with relative tail", f"{rep.truncation_error:.1e}")
print("sanity: delay * gamma =", rep.delays * rep.service_rates, " log Z =", round(rep.log_normalization, 6),
      " Z =", round(math.exp(rep.log_normalization), 4))
