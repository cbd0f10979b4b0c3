# %% [markdown]
# # Where the toy cluster stops being stable
#
# The queue is stable iff every set of classes asks for less than the
# capacity of the servers it can reach.  With unit servers the binding
# constraint is the pair {1, 2}, so the symmetric load limit is 1.5 per class.

# %%
import numpy as np

from bfcluster import check_stability, comparison_bound_check, toy_model
from bfcluster.analysis import normalization_partial_sums

model = toy_model()
for lam in [1.0, 1.4, 1.49, 1.5, 1.6]:
    rep = check_stability(model, [lam, lam])
    print(f"lambda={lam:<5}", rep.verdict, "witness" if rep.stable else "violating set",
          rep.witness if rep.stable else sorted(i + 1 for i in rep.violating_set))

# %% [markdown]
# Inside the stability region the witness eta bounds Phi geometrically, so the
# normalization series converges.

# %%
eta = check_stability(model, [1.4, 1.4]).witness
bound = comparison_bound_check(model, eta, 8)
print("Phi(x) <= prod eta^-x for |x| <= 8:", bound.holds, " worst ratio", round(bound.max_ratio, 4),
      "at", bound.worst_state)

# %% [markdown]
# Outside it, the partial sums just keep climbing.

# %%
for lam in (1.4, 1.6):
    z = np.exp(normalization_partial_sums(model, [lam, lam], 30))
    print(f"lambda={lam}:", " ".join(f"{v:.3g}" for v in z[::5]))
