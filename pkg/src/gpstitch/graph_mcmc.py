"""Reversible-jump sampler over decomposable variable graphs.

The chain state is (graph, junction tree, palette, kernel parameters,
field).  Moves add or delete one variable edge through junction-tree
surgery: an addable non-edge (a, b) has exactly one tree edge (C_A, C_B)
with a in C_A, b in C_B and neither in the separator, and the new clique is
{a, b} union that separator; a deletable edge lies in exactly one clique,
which splits in two.  The palette carries a cross coefficient for every
vertex pair so the move never changes the continuous state: coefficients of
absent edges sit idle, are refreshed from their prior once per sweep, and
become active the moment the edge appears.

The tree is resampled uniformly each sweep, which together with the target
weight 1/(number of junction trees) makes the tree coordinate exact and
leaves the graph marginal untouched.  Likelihood differences reduce to four
subset terms: {a,b} union S, {a} union S, {b} union S, and S itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NotPositiveDefiniteError
from .gibbs import PriorSpec, _Sampler, _substream
from .graphs import (
    VariableGraph,
    count_junction_trees,
    sample_junction_tree,
)
from .kernels import CrossSpec
from .likelihood import subset_term
from .mle import _clique_pd_ok

__all__ = [
    "GraphSamples",
    "run_graph_mcmc",
    "edge_prob_csv",
    "graph_trace_jsonl",
    "tree_adjacency",
]

# substream kinds, continuing the numbering used by the parameter sampler
KIND_PALETTE = 7
KIND_TREE = 8
KIND_MOVE = 9

_LOG2 = math.log(2.0)


def all_pairs(q):
    return tuple(
        (i, j) for i in range(1, q + 1) for j in range(i + 1, q + 1)
    )


def tree_adjacency(jt):
    """Junction tree as an adjacency dict on clique frozensets."""
    adj = {frozenset(c): set() for c in jt.cliques}
    for a, b in jt.tree_edges:
        ca, cb = frozenset(jt.cliques[a]), frozenset(jt.cliques[b])
        adj[ca].add(cb)
        adj[cb].add(ca)
    return adj


def _tree_key(adj):
    return frozenset(
        frozenset((c, d)) for c, n in adj.items() for d in n
    ), frozenset(adj)


def _copy_adj(adj):
    return {c: set(n) for c, n in adj.items()}


def _eligible_adds(graph, adj, cap):
    """Addable non-edges, each with its unique enabling tree edge."""
    out = {}
    seen = set()
    for C, nbrs in adj.items():
        for D in nbrs:
            key = frozenset((C, D))
            if key in seen:
                continue
            seen.add(key)
            S = C & D
            if cap is not None and len(S) + 2 > cap:
                continue
            for a in C - S:
                for b in D - S:
                    pair = (a, b) if a < b else (b, a)
                    if pair in graph.edges:
                        continue
                    if pair in out:
                        raise AssertionError(
                            "pair %s enabled by two tree edges" % (pair,)
                        )
                    out[pair] = (C, D) if a < b else (D, C)
    return out


def _deletable_edges(graph, adj):
    """Edges lying in exactly one clique, with that clique."""
    out = {}
    for e in graph.sorted_edges():
        hosts = [K for K in adj if e[0] in K and e[1] in K]
        if len(hosts) == 1:
            out[e] = hosts[0]
    return out


def _absorb(adj, C, into):
    """Merge tree node C into a neighbor that contains it."""
    for E in adj[C] - {into}:
        adj[E].discard(C)
        adj[E].add(into)
        adj[into].add(E)
    adj[into].discard(C)
    del adj[C]


def _add_surgery(adj, a, b, CA, CB):
    """Tree after adding edge (a, b) through tree edge (CA, CB)."""
    S = CA & CB
    K = S | {a, b}
    new = _copy_adj(adj)
    new[CA].discard(CB)
    new[CB].discard(CA)
    new[K] = {CA, CB}
    new[CA].add(K)
    new[CB].add(K)
    for C in (CA, CB):
        if C <= K:
            _absorb(new, C, K)
    return new, K


def _delete_surgery(adj, a, b, K, tie_side):
    """Tree after deleting edge (a, b) from its unique clique K.

    tie_side maps each neighbor whose separator avoids both endpoints to
    "a" or "b".  Halves that end up non-maximal are merged into their
    lexicographically smallest containing neighbor.
    """
    Ca, Cb = K - {b}, K - {a}
    new = {c: set(n) for c, n in adj.items() if c != K}
    a_side, b_side = [], []
    for D in adj[K]:
        new[D].discard(K)
        sep = D & K
        if a in sep:
            a_side.append(D)
        elif b in sep:
            b_side.append(D)
        elif tie_side[D] == "a":
            a_side.append(D)
        else:
            b_side.append(D)
    new[Ca] = set(a_side) | {Cb}
    new[Cb] = set(b_side) | {Ca}
    for D in a_side:
        new[D].add(Ca)
    for D in b_side:
        new[D].add(Cb)
    for C, side in ((Ca, a_side), (Cb, b_side)):
        hosts = sorted(
            (D for D in side if C <= D), key=lambda fs: tuple(sorted(fs))
        )
        if hosts:
            _absorb(new, C, hosts[0])
    return new


def _tie_neighbors(adj, K, a, b):
    return sorted(
        (D for D in adj[K] if not ({a, b} & (D & K))),
        key=lambda fs: tuple(sorted(fs)),
    )


@dataclass
class _Proposal:
    kind: str
    pair: tuple
    new_graph: VariableGraph
    new_adj: dict
    log_lik_delta: float
    log_mu_delta: float
    log_q_delta: float

    def log_alpha(self):
        return self.log_lik_delta + self.log_mu_delta + self.log_q_delta


@dataclass
class GraphSamples:
    """Retained graph draws plus move diagnostics.

    indicators has one 0/1 column per vertex pair; param_draws (engine runs
    only) carries sigma/phi/tau2 per variable and the palette value of every
    pair, with inactive pairs as NaN."""

    q: int
    pairs: tuple
    indicators: np.ndarray
    param_names: list
    param_draws: np.ndarray | None
    graph_draws: list
    visited: list
    acceptance: dict
    seed: int
    config: dict

    @property
    def n_draws(self):
        return self.indicators.shape[0]

    def edge_probs(self):
        """Symmetric q x q matrix of posterior edge inclusion rates."""
        P = np.zeros((self.q, self.q))
        if self.n_draws:
            rates = self.indicators.mean(axis=0)
            for (i, j), r in zip(self.pairs, rates):
                P[i - 1, j - 1] = P[j - 1, i - 1] = r
        return P

    def top_edges(self):
        """Pairs sorted by inclusion rate, highest first."""
        rates = (
            self.indicators.mean(axis=0)
            if self.n_draws
            else np.zeros(len(self.pairs))
        )
        order = np.argsort(-rates, kind="stable")
        return [(self.pairs[k], float(rates[k])) for k in order]


def edge_prob_csv(samples, path):
    """q x q inclusion-rate matrix, one row per variable."""
    P = samples.edge_probs()
    with open(path, "w") as fh:
        fh.write(",".join("v%d" % i for i in range(1, samples.q + 1)) + "\n")
        for row in P:
            fh.write(",".join("%.6f" % v for v in row) + "\n")


def graph_trace_jsonl(samples, path):
    """One JSON record per sweep: edges, move tallies."""
    with open(path, "w") as fh:
        for rec in samples.visited:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


class _GraphChain:
    """One rjMCMC chain: graph, tree, palette, and optional parameter
    engine."""

    def __init__(self, graph, engine, priors, cap, seed, flat):
        self.g = graph
        self.engine = engine
        self.priors = priors
        self.cap = cap
        self.seed = seed
        self.flat = flat
        self.pairs = all_pairs(graph.q)
        self.psi = {p: 0.0 for p in self.pairs}
        if engine is not None:
            for p, v in engine.state.b.items():
                self.psi[p] = v
        self._mu_cache = {}
        self.adj = tree_adjacency(
            sample_junction_tree(graph, _substream(seed, 0, KIND_TREE, (0,)))
        )
        self.proposed = 0
        self.accepted = 0

    # ------------------------------------------------------------ pieces

    def _log_mu(self, graph):
        key = graph.edges
        val = self._mu_cache.get(key)
        if val is None:
            val = math.log(count_junction_trees(graph))
            self._mu_cache[key] = val
        return val

    def _term(self, verts, cross):
        if not verts or self.flat:
            return 0.0
        e = self.engine
        return subset_term(
            tuple(sorted(verts)), e.knots, e._km(e.state), cross,
            e._field(e.state), nugget=(e.mode == "response"),
        )

    def _cross_with(self, extra_pair=None):
        if self.flat:
            return None
        e = self.engine
        b = dict(e.state.b)
        if extra_pair is not None:
            b[extra_pair] = self.psi[extra_pair]
        return CrossSpec(
            b=b, delta_a=e.delta_a, rule=e.rule, dim=e.knots.dim
        )

    def _lik_delta(self, a, b, S, sign, cross):
        """Factorization change for adding (sign +1) or deleting (sign -1)
        edge (a, b) with enabling separator S."""
        if self.flat:
            return 0.0
        try:
            big = self._term(S | {a, b}, cross)
            left = self._term(S | {a}, cross)
            right = self._term(S | {b}, cross)
            mid = self._term(S, cross)
        except NotPositiveDefiniteError:
            return -np.inf
        return sign * (big + mid - left - right)

    # ------------------------------------------------------------- moves

    def propose(self, rng):
        if rng.uniform() < 0.5:
            return self._propose_add(rng)
        return self._propose_delete(rng)

    def _propose_add(self, rng):
        cands = _eligible_adds(self.g, self.adj, self.cap)
        if not cands:
            return None
        n_add = len(cands)
        pair = sorted(cands)[rng.integers(0, n_add)]
        a, b = pair
        CA, CB = cands[pair]
        S = CA & CB
        K_new = S | {a, b}
        new_adj, K_node = _add_surgery(self.adj, a, b, CA, CB)
        new_graph = VariableGraph(self.g.q, self.g.edges | {pair})

        if not self.flat:
            cross = self._cross_with(extra_pair=pair)
            if not _clique_pd_ok(
                self.engine._km(self.engine.state), cross, [tuple(sorted(K_new))]
            ):
                lik = -np.inf
            else:
                lik = self._lik_delta(a, b, S, +1.0, cross)
        else:
            lik = 0.0

        n_del_rev = len(_deletable_edges(new_graph, new_adj))
        ties_rev = len(_tie_neighbors(new_adj, K_node, a, b))
        log_q = (
            -math.log(n_del_rev) - ties_rev * _LOG2 + math.log(n_add)
        )
        return _Proposal(
            "add", pair, new_graph, new_adj, lik,
            self._log_mu(self.g) - self._log_mu(new_graph), log_q,
        )

    def _propose_delete(self, rng):
        cands = _deletable_edges(self.g, self.adj)
        if not cands:
            return None
        n_del = len(cands)
        pair = sorted(cands)[rng.integers(0, n_del)]
        a, b = pair
        K = cands[pair]
        S = K - {a, b}
        ties = _tie_neighbors(self.adj, K, a, b)
        tie_side = {D: ("a" if rng.uniform() < 0.5 else "b") for D in ties}
        new_adj = _delete_surgery(self.adj, a, b, K, tie_side)
        new_graph = VariableGraph(self.g.q, self.g.edges - {pair})

        lik = self._lik_delta(a, b, S, -1.0, self._cross_with())

        # the reverse add is deterministic; it must rebuild this very tree
        rev = _eligible_adds(new_graph, new_adj, self.cap)
        if pair not in rev:
            log_q = -np.inf
        else:
            rec_adj, _ = _add_surgery(new_adj, a, b, *rev[pair])
            if _tree_key(rec_adj) != _tree_key(self.adj):
                log_q = -np.inf
            else:
                log_q = (
                    -math.log(len(rev))
                    + math.log(n_del)
                    + len(ties) * _LOG2
                )
        return _Proposal(
            "delete", pair, new_graph, new_adj, lik,
            self._log_mu(self.g) - self._log_mu(new_graph), log_q,
        )

    def move(self, rng):
        prop = self.propose(rng)
        self.proposed += 1
        if prop is None:
            return False
        la = prop.log_alpha()
        if la >= 0 or rng.uniform() < math.exp(max(la, -700.0)):
            self._apply(prop)
            self.accepted += 1
            return True
        return False

    def _apply(self, prop):
        self.g = prop.new_graph
        self.adj = prop.new_adj
        if self.engine is not None:
            state = self.engine.state
            if prop.kind == "add":
                state.b[prop.pair] = self.psi[prop.pair]
            else:
                self.psi[prop.pair] = state.b.pop(prop.pair)
            self.engine.rebind_graph(self.g)

    # ------------------------------------------------------------ sweeps

    def refresh_palette(self, it):
        if self.flat:
            return
        lo, hi = self.priors.b_box
        state_b = self.engine.state.b
        for p in self.pairs:
            if p not in state_b:
                r = _substream(self.seed, it + 1, KIND_PALETTE, p)
                self.psi[p] = lo + (hi - lo) * r.uniform()

    def refresh_tree(self, it):
        rng = _substream(self.seed, it + 1, KIND_TREE, (0,))
        self.adj = tree_adjacency(sample_junction_tree(self.g, rng))


def run_graph_mcmc(
    dataset=None,
    graph=None,
    q=None,
    priors=None,
    iters=2000,
    burn=1000,
    thin=1,
    seed=0,
    knots=None,
    nu=0.5,
    rule="simple_ag",
    delta_a=0.0,
    mode="response",
    estimate_tau2=True,
    tau2_value=None,
    cap=4,
    moves_per_sweep=None,
    flat_likelihood=False,
    threads=1,
    schedule="parallel",
):
    """Posterior sampling over decomposable graphs and model parameters.

    Each sweep runs the parameter sampler under the current graph, refreshes
    the idle palette coefficients from their prior and the junction tree
    from its conditional, then attempts a batch of single-edge moves.  With
    flat_likelihood the data model is dropped entirely and the stationary
    graph marginal is uniform over decomposable graphs under the cap, which
    is the calibration mode used to certify the move kernel."""
    if not (0 <= burn <= iters):
        raise ConfigError("need 0 <= burn <= iters")
    if thin < 1:
        raise ConfigError("thin must be >= 1")
    if flat_likelihood:
        if q is None and graph is None:
            raise ConfigError("flat run needs q or an initial graph")
        qq = q if q is not None else graph.q
        g0 = graph if graph is not None else VariableGraph(qq)
        engine = None
    else:
        if dataset is None:
            raise ConfigError("data run needs a dataset")
        qq = dataset.q
        g0 = graph if graph is not None else VariableGraph(qq)
        engine = _Sampler(
            dataset, g0, priors, knots, nu, rule, delta_a, seed, threads,
            schedule, mode, estimate_tau2=estimate_tau2,
            tau2_value=tau2_value,
        )
    priors = priors or PriorSpec()
    if cap is not None and cap < 2:
        raise ConfigError("clique cap below 2 blocks every edge")
    chain = _GraphChain(g0, engine, priors, cap, seed, flat_likelihood)
    pairs = chain.pairs
    m_moves = moves_per_sweep if moves_per_sweep is not None else max(qq, 2)

    param_names = []
    if engine is not None:
        for i in range(1, qq + 1):
            param_names += ["sigma_%d" % i, "phi_%d" % i, "tau2_%d" % i]
        param_names += ["b_%d_%d" % p for p in pairs]

    keep = (iters - burn) // thin
    indicators = np.zeros((keep, len(pairs)), dtype=np.int8)
    params = np.full((keep, len(param_names)), np.nan) if engine else None
    graph_draws = []
    visited = []
    k = 0
    for it in range(iters):
        if engine is not None:
            engine._iterate(it, adapting=it < burn)
        chain.refresh_palette(it)
        chain.refresh_tree(it)
        n_acc = 0
        for j in range(m_moves):
            rng = _substream(seed, it + 1, KIND_MOVE, (j,))
            n_acc += chain.move(rng)
        visited.append(
            {
                "sweep": it,
                "edges": [list(e) for e in chain.g.sorted_edges()],
                "accepted": int(n_acc),
                "proposed": int(m_moves),
            }
        )
        if it >= burn and (it - burn) % thin == 0 and k < keep:
            for c, p in enumerate(pairs):
                indicators[k, c] = 1 if p in chain.g.edges else 0
            if engine is not None:
                row = []
                st = engine.state
                for i in range(1, qq + 1):
                    mm = st.marginals[i - 1]
                    row += [mm.sigma, mm.phi, float(st.tau2[i - 1])]
                for p in pairs:
                    row.append(st.b.get(p, np.nan))
                params[k] = row
            graph_draws.append(chain.g.sorted_edges())
            k += 1

    acceptance = {
        "graph": chain.accepted / chain.proposed if chain.proposed else float("nan")
    }
    if engine is not None:
        acceptance.update(engine.acceptance_rates())
        if engine._pool is not None:
            engine._pool.shutdown()
            engine._pool = None
    return GraphSamples(
        q=qq,
        pairs=pairs,
        indicators=indicators[:k],
        param_names=param_names,
        param_draws=params[:k] if engine is not None else None,
        graph_draws=graph_draws,
        visited=visited,
        acceptance=acceptance,
        seed=seed,
        config={
            "iters": iters, "burn": burn, "thin": thin, "cap": cap,
            "moves_per_sweep": m_moves, "mode": mode,
            "flat_likelihood": flat_likelihood, "nu": nu, "rule": rule,
        },
    )
