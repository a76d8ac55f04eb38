"""Maximum likelihood for the stitched model on colocated data.

Simulates one realization of the gem-graph field at 60 shared sites, then
recovers marginal and cross parameters by blockwise coordinate ascent on the
factorized likelihood.  Every cross coefficient stays inside its
positive-definiteness interval by construction during the sweep.
"""

import time

import numpy as np

from gpstitch import CrossSpec, MaternMarginal, VariableGraph
from gpstitch.data import Dataset, VarData
from gpstitch.mle import MleConfig, fit_mle
from gpstitch.stitching import KnotSet, build, simulate

gem = VariableGraph(5, frozenset({(1, 2), (2, 3), (3, 4), (1, 5), (2, 5), (3, 5), (4, 5)}))
edges = sorted(gem.edges)
marginals = [MaternMarginal(nu=0.5, sigma=1.0 + 0.1 * i, phi=4.0 + 0.6 * i) for i in range(1, 6)]
b_true = dict(zip(edges, [1.5, 1.2, -1.35, -1.05, 1.5, 1.2, 1.35]))
cross = CrossSpec(b=b_true, rule="simple_ag")

rng = np.random.default_rng(4)
knots = KnotSet(rng.uniform(0.0, 1.0, size=(60, 2)))
model = build(gem, knots, marginals, cross)
rea = simulate(model, rng)
dataset = Dataset(
    {i: VarData(knots.locations, rea.w_knots[i - 1]) for i in range(1, 6)}, q=5, dim=2
)

t0 = time.monotonic()
res = fit_mle(
    dataset, gem, knots=knots, nu=0.5,
    config=MleConfig(max_outer=6, tol=1e-4, estimate_nugget=False, compute_se=False),
)
print("converged=%s after %d sweeps in %.1fs, loglik %.2f"
      % (res.converged, res.n_iter, time.monotonic() - t0, res.loglik))

print("\nmarginals (hat vs truth):")
for i, (m_hat, m_true) in enumerate(zip(res.marginals, marginals), start=1):
    print("  var %d: sigma %.2f/%.2f  phi %.2f/%.2f"
          % (i, m_hat.sigma, m_true.sigma, m_hat.phi, m_true.phi))

print("\ncross coefficients (hat vs truth):")
for e in edges:
    print("  b%s: %+.3f / %+.3f" % (e, res.cross.b[e], b_true[e]))
print("\nnote: single-realization estimates scatter; the acceptance suite"
      "\nchecks medians across ten independent realizations instead.")
