"""Bayesian fitting with the response-model Gibbs sampler, then prediction.

Data are a noisy realization of the gem-graph field.  The sampler works on
the collapsed response covariance (nugget folded into the kernel), updates
variables in chromatic color classes, and uses one RNG substream per site so
the chain is reproducible regardless of schedule or thread count.
"""

import numpy as np

from gpstitch import CrossSpec, MaternMarginal, VariableGraph
from gpstitch.data import Dataset, VarData
from gpstitch.gibbs import gibbs_response, predict
from gpstitch.stitching import KnotSet, build, simulate

gem = VariableGraph(5, frozenset({(1, 2), (2, 3), (3, 4), (1, 5), (2, 5), (3, 5), (4, 5)}))
edges = sorted(gem.edges)
marginals = [MaternMarginal(nu=0.5, sigma=1.0 + 0.1 * i, phi=4.0 + 0.6 * i) for i in range(1, 6)]
b_true = dict(zip(edges, [1.5, 1.2, -1.35, -1.05, 1.5, 1.2, 1.35]))
cross = CrossSpec(b=b_true, rule="simple_ag")
TAU2 = 0.01

rng = np.random.default_rng(7)
knots = KnotSet(rng.uniform(0.0, 1.0, size=(70, 2)))
model = build(gem, knots, marginals, cross)
hold = rng.uniform(0.0, 1.0, size=(20, 2))
rea = simulate(model, rng, data_locs={i: hold for i in range(1, 6)})
dataset = Dataset(
    {
        i: VarData(knots.locations, rea.w_knots[i - 1] + np.sqrt(TAU2) * rng.standard_normal(70))
        for i in range(1, 6)
    },
    q=5,
    dim=2,
)

post = gibbs_response(dataset, gem, iters=2500, burn=1250, seed=7, knots=knots, nu=0.5)
print("chain: %d draws of %d parameters" % (post.n_draws, len(post.names)))
print("acceptance rates:", {k: round(v, 2) for k, v in post.acceptance.items()})

summ = post.summary()
print("\nposterior for the cross coefficients (mean [2.5%, 97.5%], truth):")
for (i, j) in edges:
    s = summ["b_%d_%d" % (i, j)]
    print("  b_(%d,%d): %+.2f [%+.2f, %+.2f]  truth %+.2f"
          % (i, j, s["mean"], s["q025"], s["q975"], b_true[(i, j)]))
ess = sorted(post.ess().values())
print("effective sample size: median %.0f, worst %.0f" % (ess[len(ess) // 2], ess[0]))

pred = predict(post, {i: hold for i in range(1, 6)}, seed=7)
print("\nholdout prediction (RMSPE per variable, noise sd is %.2f):" % np.sqrt(TAU2))
for i in range(1, 6):
    y = rea.w_data[i] + np.sqrt(TAU2) * np.random.default_rng(50 + i).standard_normal(20)
    rmspe = float(np.sqrt(np.mean((pred[i].mean - y) ** 2)))
    inside = np.mean((pred[i].lower <= y) & (y <= pred[i].upper))
    print("  var %d: RMSPE %.3f, 95%% interval coverage %.0f%%" % (i, rmspe, 100 * inside))
