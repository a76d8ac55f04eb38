"""Assembly and simulation of stitched graphical Gaussian processes.

A stitched model pins the joint law of w(L) on a knot set L by covariance
selection against the variable graph, then extends each variable off the
knots independently through its own predictive process plus residual.  The
result keeps every marginal C_ii exactly and keeps cross-covariances on the
knots for graph edges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from ._linalg import chol_psd, solve_chol
from .covsel import decomposable_select
from .errors import InvalidCrossSpecError, NotDecomposableError
from .graphs import graph_from_json, graph_to_json, is_decomposable, perfect_clique_sequence
from .kernels import (
    CrossSpec,
    MaternMarginal,
    ShiftSpec,
    cov_block,
    params_from_json,
    params_to_json,
)

__all__ = [
    "KnotSet",
    "StitchedModel",
    "Realization",
    "build",
    "cross_cov_stitched",
    "simulate",
    "response_model",
    "parameter_census",
    "realization_to_csv",
    "model_to_json",
    "model_from_json",
]

COINCIDENT_TOL = 1e-12


@dataclass(frozen=True)
class KnotSet:
    """Reference locations where the joint distribution is pinned exactly."""

    locations: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.locations, dtype=float))
        if not np.all(np.isfinite(pts)):
            raise ValueError("knot coordinates must be finite")
        if pts.shape[0] > 1:
            d = cdist(pts, pts)
            d[np.diag_indices_from(d)] = np.inf
            if d.min() < COINCIDENT_TOL:
                raise ValueError("knots must be pairwise distinct")
        object.__setattr__(self, "locations", pts)

    @property
    def count(self):
        return self.locations.shape[0]

    @property
    def dim(self):
        return self.locations.shape[1]


class StitchedModel:
    """Immutable bundle of graph, kernel parameters, and cached factors.

    Cached pieces: per-variable Cholesky of C_ii(L,L), dense covariance and
    Cholesky per clique and separator block (clique variables x all knots),
    and the implicit selected precision of w(L).  ``nugget`` marks a response
    model whose kernel carries tau^2 at zero lag.
    """

    def __init__(self, graph, cs, knots, marginals, cross, shift=None, nugget=False):
        self.graph = graph
        self.cs = cs
        self.knots = knots
        self.marginals = tuple(marginals)
        self.cross = cross
        self.shift = shift
        self.nugget = bool(nugget)
        self._dense_m = None

        self._block_cache = {}
        self.var_chol = {}
        for i in range(1, graph.q + 1):
            self.var_chol[i] = chol_psd(
                self.block((i,)), "knot covariance of variable %d" % i
            )
        self.precision = decomposable_select(cs, knots.count, self.block, q=graph.q)
        self.clique_blocks = [self.block(tuple(sorted(K))) for K in cs.cliques]
        self.clique_chol = [lc[1] for lc in self.precision.clique_factors]

    @property
    def q(self):
        return self.graph.q

    @property
    def n(self):
        return self.knots.count

    def block(self, verts):
        """Dense covariance over sorted variables ``verts`` x knots."""
        verts = tuple(sorted(verts))
        cached = self._block_cache.get(verts)
        if cached is not None:
            return cached
        locs = self.knots.locations
        n = self.knots.count
        k = len(verts)
        out = np.empty((k * n, k * n))
        for a, i in enumerate(verts):
            for c, j in enumerate(verts):
                out[a * n : (a + 1) * n, c * n : (c + 1) * n] = cov_block(
                    i,
                    j,
                    locs,
                    locs,
                    self.marginals,
                    self.cross,
                    shift=self.shift,
                    nugget=self.nugget,
                )
        self._block_cache[verts] = out
        return out

    def data_block(self, i, A, B=None, nugget=None):
        """C_ii over location sets A x B under this model's kernel."""
        if B is None:
            B = A
        use_nugget = self.nugget if nugget is None else nugget
        return cov_block(
            i,
            i,
            A,
            B,
            self.marginals,
            self.cross,
            shift=self.shift,
            nugget=use_nugget,
        )

    def knot_cov_block(self, i, j):
        """M_ij(L,L): exact C block on the diagonal and for edges, selected
        value elsewhere (densifies M lazily for non-edges; diagnostic use)."""
        n = self.n
        if i == j:
            return self.block((i,))
        if self.graph.has_edge(i, j):
            locs = self.knots.locations
            return cov_block(
                i, j, locs, locs, self.marginals, self.cross, shift=self.shift
            )
        if self._dense_m is None:
            self._dense_m = self.precision.dense_cov()
        return self._dense_m[
            (i - 1) * n : i * n, (j - 1) * n : j * n
        ]

    def with_params(self, marginals=None, cross=None):
        return build(
            self.graph,
            self.knots,
            self.marginals if marginals is None else marginals,
            self.cross if cross is None else cross,
            shift=self.shift,
            nugget=self.nugget,
            cs=self.cs,
        )


@dataclass(frozen=True)
class Realization:
    """One draw of the stitched process on knots and optional data points."""

    w_knots: np.ndarray
    w_data: dict = field(default_factory=dict)
    data_locs: dict = field(default_factory=dict)


def build(graph, knots, marginals, cross, shift=None, nugget=False, cs=None):
    """Validate inputs and assemble a StitchedModel."""
    if len(marginals) != graph.q:
        raise ValueError(
            "expected %d marginals, got %d" % (graph.q, len(marginals))
        )
    if cs is None:
        ok, _ = is_decomposable(graph)
        if not ok:
            raise NotDecomposableError(
                "variable graph is not decomposable; stitching requires a "
                "perfect clique sequence"
            )
        cs = perfect_clique_sequence(graph)
    ok, bad = _validate(cross, marginals, cs)
    if not ok:
        raise InvalidCrossSpecError(
            "cross parameters are not positive definite on clique %s"
            % sorted(bad)
        )
    return StitchedModel(graph, cs, knots, marginals, cross, shift, nugget)


def _validate(cross, marginals, cs):
    from .kernels import validate_cross_spec

    return validate_cross_spec(cross, marginals, cs)


def response_model(latent_or_graph, nuggets=None, **kwargs):
    """Stitch the response kernel C + D (nugget at zero lag).

    Accepts an existing latent model plus per-variable nugget list, or the
    same arguments as build with marginals already carrying tau2.
    """
    if isinstance(latent_or_graph, StitchedModel):
        m = latent_or_graph
        if nuggets is None:
            marg = m.marginals
        else:
            marg = tuple(
                MaternMarginal(sigma=mm.sigma, phi=mm.phi, nu=mm.nu, tau2=float(t))
                for mm, t in zip(m.marginals, nuggets)
            )
        return StitchedModel(
            m.graph, m.cs, m.knots, marg, m.cross, m.shift, nugget=True
        )
    return build(latent_or_graph, nugget=True, **kwargs)


def cross_cov_stitched(model, i, j, s, sp):
    """Stitched covariance M_ij(s, s'); accepts points or arrays of points.

    Same-variable requests return the exact kernel C_ii(s,s').  Cross
    requests use the fixed-rank extension through the knots:
    C_ii(s,L) C_ii(L,L)^-1 M_ij(L,L) C_jj(L,L)^-1 C_jj(L,s').
    """
    A = np.atleast_2d(np.asarray(s, dtype=float))
    B = np.atleast_2d(np.asarray(sp, dtype=float))
    scalar = np.asarray(s).ndim == 1 and np.asarray(sp).ndim == 1
    if i == j:
        out = model.data_block(i, A, B)
    else:
        locs = model.knots.locations
        ci = cov_block(
            i, i, A, locs, model.marginals, model.cross,
            shift=model.shift, nugget=model.nugget,
        )
        cj = cov_block(
            j, j, locs, B, model.marginals, model.cross,
            shift=model.shift, nugget=model.nugget,
        )
        Mij = model.knot_cov_block(i, j)
        left = solve_chol(model.var_chol[i], ci.T).T
        right = solve_chol(model.var_chol[j], cj)
        out = left @ Mij @ right
    if scalar:
        return float(out[0, 0])
    return out


def _draw_knots(model, rng):
    n = model.n
    w = np.zeros((model.q, n))
    filled = set()
    for m_idx, K in enumerate(model.cs.cliques):
        verts = tuple(sorted(K))
        CK = model.clique_blocks[m_idx]
        S = model.cs.separators[m_idx - 1] if m_idx > 0 else frozenset()
        have = [v for v in verts if v in filled]
        new = [v for v in verts if v not in filled]
        assert set(have) == set(S), "perfect order violated"
        pos = {v: a for a, v in enumerate(verts)}
        idx_new = np.concatenate([np.arange(pos[v] * n, (pos[v] + 1) * n) for v in new])
        if have:
            idx_have = np.concatenate(
                [np.arange(pos[v] * n, (pos[v] + 1) * n) for v in have]
            )
            C_ss = CK[np.ix_(idx_have, idx_have)]
            C_rs = CK[np.ix_(idx_new, idx_have)]
            C_rr = CK[np.ix_(idx_new, idx_new)]
            Ls = chol_psd(C_ss, "separator block")
            w_s = np.concatenate([w[v - 1] for v in have])
            gain = solve_chol(Ls, C_rs.T).T
            mean = gain @ w_s
            cov = C_rr - gain @ C_rs.T
            Lr = chol_psd(0.5 * (cov + cov.T), "conditional clique block")
        else:
            mean = np.zeros(len(idx_new))
            Lr = chol_psd(CK[np.ix_(idx_new, idx_new)], "clique block")
        vals = mean + Lr @ rng.standard_normal(len(idx_new))
        for a, v in enumerate(new):
            w[v - 1] = vals[a * n : (a + 1) * n]
            filled.add(v)
    return w


def _conditional_draw(model, i, D, w_i, rng):
    """w_i(D) | w_i(L): predictive-process mean plus residual draw."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n_d = D.shape[0]
    out = np.empty(n_d)
    dists = cdist(D, model.knots.locations)
    hit = dists.min(axis=1) < COINCIDENT_TOL
    if hit.any():
        out[hit] = w_i[np.argmin(dists[hit], axis=1)]
    free = ~hit
    if free.any():
        Df = D[free]
        c = model.data_block(i, Df, model.knots.locations)
        gain = solve_chol(model.var_chol[i], c.T).T
        mean = gain @ w_i
        cov = model.data_block(i, Df) - gain @ c.T
        Lr = chol_psd(0.5 * (cov + cov.T), "residual covariance")
        out[free] = mean + Lr @ rng.standard_normal(Df.shape[0])
    return out


def simulate(model, rng, data_locs=None):
    """Draw one Realization: w(L) along the perfect order, then each
    variable at its data locations independently given the knots."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    w = _draw_knots(model, rng)
    w_data = {}
    locs = {}
    if data_locs:
        for i in sorted(data_locs):
            D = np.atleast_2d(np.asarray(data_locs[i], dtype=float))
            w_data[i] = _conditional_draw(model, i, D, w[i - 1], rng)
            locs[i] = D
    return Realization(w_knots=w, w_data=w_data, data_locs=locs)


def parameter_census(model):
    """Count spatial parameter bundles: one marginal set per variable plus
    one cross parameter per retained edge."""
    q = model.q
    n_edges = len(model.graph.edges)
    return {"marginal": q, "cross": n_edges, "total": q + n_edges}


def realization_to_csv(model, rea, path):
    """Rows: every variable at every knot, then data rows per variable."""
    dim = model.knots.dim
    header = ["variable", "x", "y", "z"][: 1 + dim] + ["value"]
    lines = [",".join(header)]
    for i in range(1, model.q + 1):
        for l in range(model.n):
            coords = model.knots.locations[l]
            lines.append(
                "%d,%s,%.17g"
                % (i, ",".join("%.17g" % c for c in coords), rea.w_knots[i - 1, l])
            )
    for i in sorted(rea.w_data):
        for r in range(len(rea.w_data[i])):
            coords = rea.data_locs[i][r]
            lines.append(
                "%d,%s,%.17g"
                % (i, ",".join("%.17g" % c for c in coords), rea.w_data[i][r])
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def model_to_json(model):
    obj = {
        "graph": json.loads(graph_to_json(model.graph)),
        "params": json.loads(params_to_json(model.marginals, model.cross)),
        "knots": model.knots.locations.tolist(),
        "nugget": model.nugget,
    }
    if model.shift is not None:
        obj["shift"] = {str(i): list(map(float, np.atleast_1d(v)))
                        for i, v in model.shift.a.items()}
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def model_from_json(text):
    obj = json.loads(text) if isinstance(text, str) else text
    graph = graph_from_json(json.dumps(obj["graph"]))
    marginals, cross = params_from_json(obj["params"])
    knots = KnotSet(np.asarray(obj["knots"], dtype=float))
    shift = None
    if "shift" in obj:
        shift = ShiftSpec(
            a={int(i): np.asarray(v, dtype=float) for i, v in obj["shift"].items()}
        )
    return build(
        graph, knots, marginals, cross, shift=shift, nugget=obj.get("nugget", False)
    )
