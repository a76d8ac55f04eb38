"""Factorized likelihood of the stitched process.

The knot density factorizes over the perfect clique sequence as a product of
clique Gaussian densities divided by separator densities, so evaluation never
touches a matrix larger than one clique block.  Data off the knots enter
through independent per-variable conditional Gaussians.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ._linalg import chol_psd, gauss_logpdf_chol, solve_chol
from .errors import DegenerateMismatchError, InsufficientReplicatesError
from .kernels import CrossSpec, MaternMarginal, cov_block
from .stitching import COINCIDENT_TOL, build

__all__ = [
    "LogLikBreakdown",
    "loglik_knots",
    "loglik_knots_batch",
    "loglik_conditional",
    "precision_apply",
    "precision_logdet",
    "block_cov",
    "subset_term",
    "analytic_b_score",
    "score_mc_test",
]

DEGENERATE_TOL = 1e-8


@dataclass(frozen=True)
class LogLikBreakdown:
    clique_terms: tuple
    separator_terms: tuple
    total: float

    def to_json(self):
        return json.dumps(
            {
                "clique_terms": list(self.clique_terms),
                "separator_terms": list(self.separator_terms),
                "total": self.total,
            },
            sort_keys=True,
        )


def _stack(w_knots):
    w = np.asarray(w_knots, dtype=float)
    if w.ndim == 2:
        return w.reshape(-1)
    return w


def loglik_knots(model, w_knots):
    """Log density of w(L) via the clique/separator factorization."""
    w = _stack(w_knots)
    cl = []
    for idx, L in model.precision.clique_factors:
        cl.append(gauss_logpdf_chol(w[idx], L))
    sep = []
    for idx, L in model.precision.sep_factors:
        sep.append(gauss_logpdf_chol(w[idx], L))
    return LogLikBreakdown(
        clique_terms=tuple(cl),
        separator_terms=tuple(sep),
        total=float(sum(cl) - sum(sep)),
    )


def loglik_knots_batch(model, W):
    """Totals for a batch W of shape (q*n, R); one value per column."""
    W = np.asarray(W, dtype=float)
    out = np.zeros(W.shape[1])
    for idx, L in model.precision.clique_factors:
        out += gauss_logpdf_chol(W[idx], L)
    for idx, L in model.precision.sep_factors:
        out -= gauss_logpdf_chol(W[idx], L)
    return out


def loglik_conditional(model, rea):
    """Log density of the data values given the knot values.

    Data points coinciding with knots are point masses: they contribute 0
    when the values agree and raise DegenerateMismatch otherwise.
    """
    total = 0.0
    for i in sorted(rea.w_data):
        D = rea.data_locs[i]
        vals = np.asarray(rea.w_data[i], dtype=float)
        w_i = rea.w_knots[i - 1]
        dists = cdist(D, model.knots.locations)
        hit = dists.min(axis=1) < COINCIDENT_TOL
        if hit.any():
            knot_vals = w_i[np.argmin(dists[hit], axis=1)]
            gap = np.abs(vals[hit] - knot_vals)
            if gap.max() > DEGENERATE_TOL:
                raise DegenerateMismatchError(
                    "variable %d: data at a knot disagrees with the knot "
                    "value by %.3e" % (i, gap.max())
                )
        free = ~hit
        if free.any():
            Df = D[free]
            c = model.data_block(i, Df, model.knots.locations)
            gain = solve_chol(model.var_chol[i], c.T).T
            mean = gain @ w_i
            cov = model.data_block(i, Df) - gain @ c.T
            Lr = chol_psd(0.5 * (cov + cov.T), "conditional data covariance")
            total += gauss_logpdf_chol(vals[free] - mean, Lr)
    return total


def precision_apply(model, v):
    """M(L,L)^{-1} v without forming M; v as (q*n,) or (q, n)."""
    v = np.asarray(v, dtype=float)
    shape = v.shape
    out = model.precision.apply(v.reshape(-1) if v.ndim == 2 else v)
    return out.reshape(shape)


def precision_logdet(model):
    """log det of the knot precision (negative log det of M)."""
    return model.precision.precision_logdet()


def block_cov(verts, knots, marginals, cross, nugget=False, shift=None):
    """Dense covariance over the given vertices at the knots, variable-major
    in the order passed."""
    locs = knots.locations
    n = knots.count
    k = len(verts)
    C = np.empty((k * n, k * n))
    for a, i in enumerate(verts):
        for c, j in enumerate(verts):
            C[a * n : (a + 1) * n, c * n : (c + 1) * n] = cov_block(
                i, j, locs, locs, marginals, cross, shift=shift, nugget=nugget
            )
    return C


def subset_term(verts, knots, marginals, cross, w_knots, nugget=False, shift=None):
    """Log density of w over one vertex subset, built from raw parameters.

    Used by inference loops to rebuild only the clique/separator terms a
    coordinate update touches.
    """
    verts = tuple(sorted(verts))
    n = knots.count
    C = block_cov(verts, knots, marginals, cross, nugget=nugget, shift=shift)
    L = chol_psd(C, "subset block %s" % (verts,))
    w = np.asarray(w_knots, dtype=float)
    x = np.concatenate([w[i - 1] for i in verts]) if w.ndim == 2 else w
    return gauss_logpdf_chol(x, L)


def analytic_b_score(model, w_knots, i, j):
    """d/db_ij of loglik_knots in trace form, summed over the clique and
    separator terms containing both endpoints."""
    w = np.asarray(w_knots, dtype=float)
    n = model.n
    locs = model.knots.locations
    mi, mj = model.marginals[i - 1], model.marginals[j - 1]
    # dC/db has the unit-b cross block at (i,j) and its transpose
    unit = CrossSpec(
        b={(i, j): 1.0},
        delta_a=model.cross.delta_a,
        rule=model.cross.rule,
        dim=model.cross.dim,
    )
    dblock = cov_block(i, j, locs, locs, model.marginals, unit)

    def term_score(verts, L):
        verts = tuple(sorted(verts))
        if i not in verts or j not in verts:
            return 0.0
        pos = {v: a for a, v in enumerate(verts)}
        k = len(verts)
        dC = np.zeros((k * n, k * n))
        ai, aj = pos[i], pos[j]
        dC[ai * n : (ai + 1) * n, aj * n : (aj + 1) * n] = dblock
        dC[aj * n : (aj + 1) * n, ai * n : (ai + 1) * n] = dblock.T
        x = np.concatenate([w[v - 1] for v in verts])
        alpha = solve_chol(L, x)
        Cinv_dC = solve_chol(L, dC)
        return 0.5 * float(alpha @ dC @ alpha) - 0.5 * float(np.trace(Cinv_dC))

    out = 0.0
    for m, K in enumerate(model.cs.cliques):
        out += term_score(K, model.clique_chol[m])
    sep_factors = model.precision.sep_factors
    nonempty = [S for S in model.cs.separators if S]
    for S, (idx, L) in zip(nonempty, sep_factors):
        out -= term_score(S, L)
    return out


def _param_list(graph, q):
    names = []
    for i in range(1, q + 1):
        names.append(("sigma", i))
        names.append(("phi", i))
    for (i, j) in graph.sorted_edges():
        names.append(("b", i, j))
    return names


def _perturb(marginals, cross, name, h):
    marginals = list(marginals)
    if name[0] == "sigma":
        i = name[1]
        m = marginals[i - 1]
        marginals[i - 1] = MaternMarginal(m.sigma + h, m.phi, m.nu, m.tau2)
        return marginals, cross
    if name[0] == "phi":
        i = name[1]
        m = marginals[i - 1]
        marginals[i - 1] = MaternMarginal(m.sigma, m.phi + h, m.nu, m.tau2)
        return marginals, cross
    _, i, j = name
    return marginals, cross.with_b(i, j, cross.b_value(i, j) + h)


def _param_value(marginals, cross, name):
    if name[0] == "sigma":
        return marginals[name[1] - 1].sigma
    if name[0] == "phi":
        return marginals[name[1] - 1].phi
    return cross.b_value(name[1], name[2])


def score_mc_test(marginals, cross, graph, knots, R, seed, fd_scale=1e-5):
    """Monte Carlo check of the estimating equations under misspecification.

    Data are drawn from the dense multivariate Matern with all pairwise
    cross-covariances (the complete-graph law); scores of the factorized
    graph likelihood are evaluated at the true parameters by central finite
    differences.  Returns {name: (mean score, MC standard error)} for every
    retained parameter.
    """
    if R < 2:
        raise InsufficientReplicatesError(
            "score test needs at least 2 replicates, got %d" % R
        )
    q = graph.q
    n = knots.count
    locs = knots.locations
    dim = q * n
    C_full = np.empty((dim, dim))
    for i in range(1, q + 1):
        for j in range(1, q + 1):
            C_full[(i - 1) * n : i * n, (j - 1) * n : j * n] = cov_block(
                i, j, locs, locs, marginals, cross
            )
    Lfull = chol_psd(C_full, "dense generating covariance")
    rng = np.random.default_rng(seed)
    W = Lfull @ rng.standard_normal((dim, R))

    report = {}
    for name in _param_list(graph, q):
        theta = _param_value(marginals, cross, name)
        h = fd_scale * max(1.0, abs(theta))
        mp, cp = _perturb(marginals, cross, name, +h)
        mm, cm = _perturb(marginals, cross, name, -h)
        up = loglik_knots_batch(build(graph, knots, mp, cp), W)
        dn = loglik_knots_batch(build(graph, knots, mm, cm), W)
        scores = (up - dn) / (2.0 * h)
        mean = float(np.mean(scores))
        se = float(np.std(scores, ddof=1) / np.sqrt(R))
        key = "%s_%s" % (name[0], "_".join(str(v) for v in name[1:]))
        report[key] = (mean, se)
    return report
