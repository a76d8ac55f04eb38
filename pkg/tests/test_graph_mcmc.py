"""Edge-move sampler: surgery bookkeeping, move-kernel exactness, recovery."""

import itertools
import json
from collections import deque

import numpy as np
import pytest

from conftest import path_graph, random_decomposable_graph
from gpstitch.data import Dataset, VarData
from gpstitch.errors import ConfigError
from gpstitch.gibbs import PriorSpec, _Sampler
from gpstitch.graph_mcmc import (
    GraphSamples,
    _add_surgery,
    _delete_surgery,
    _deletable_edges,
    _eligible_adds,
    _GraphChain,
    _tie_neighbors,
    all_pairs,
    edge_prob_csv,
    graph_trace_jsonl,
    run_graph_mcmc,
    tree_adjacency,
)
from gpstitch.graphs import (
    VariableGraph,
    is_decomposable,
    perfect_clique_sequence,
    sample_junction_tree,
)
from gpstitch.kernels import CrossSpec, MaternMarginal
from gpstitch.likelihood import loglik_knots
from gpstitch.stitching import KnotSet, build, simulate


def fs(*xs):
    return frozenset(xs)


def scatter_knots(n, seed=0):
    r = np.random.default_rng(seed)
    return KnotSet(r.uniform(0.0, 1.0, size=(n, 2)))


def maximal_cliques(graph):
    cs = perfect_clique_sequence(graph)
    return {frozenset(c) for c in cs.cliques}


def tree_path(adj, s, t):
    prev = {s: None}
    dq = deque([s])
    while dq:
        u = dq.popleft()
        if u == t:
            break
        for v in adj[u]:
            if v not in prev:
                prev[v] = u
                dq.append(v)
    path = [t]
    while path[-1] != s:
        path.append(prev[path[-1]])
    return path


def junction_ok(adj):
    """Tree on clique nodes satisfying the running intersection property."""
    nodes = list(adj)
    n_edges = sum(len(v) for v in adj.values()) // 2
    if n_edges != len(nodes) - 1:
        return False
    seen = {nodes[0]}
    dq = [nodes[0]]
    while dq:
        u = dq.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                dq.append(v)
    if len(seen) != len(nodes):
        return False
    for C, D in itertools.combinations(nodes, 2):
        inter = C & D
        if inter and not all(inter <= P for P in tree_path(adj, C, D)):
            return False
    return True


def simulate_dataset(graph, knots, margs, b, tau, seed):
    cross = CrossSpec(b=b, delta_a=0.0, rule="simple_ag", dim=knots.dim)
    model = build(graph, knots, margs, cross)
    rng = np.random.default_rng(seed)
    real = simulate(model, rng)
    frames = {}
    for i in range(1, graph.q + 1):
        y = real.w_knots[i - 1] + tau * rng.standard_normal(knots.count)
        frames[i] = VarData(knots.locations.copy(), y)
    return Dataset(frames, graph.q, knots.dim)


class TestSurgery:
    def test_path_to_triangle_and_back(self):
        g = path_graph(3)
        adj = {fs(1, 2): {fs(2, 3)}, fs(2, 3): {fs(1, 2)}}
        adds = _eligible_adds(g, adj, cap=4)
        assert set(adds) == {(1, 3)}
        CA, CB = adds[(1, 3)]
        assert (CA, CB) == (fs(1, 2), fs(2, 3))

        new_adj, K = _add_surgery(adj, 1, 3, CA, CB)
        assert K == fs(1, 2, 3)
        assert set(new_adj) == {fs(1, 2, 3)} and new_adj[K] == set()

        tri = VariableGraph(3, frozenset({(1, 2), (2, 3), (1, 3)}))
        dels = _deletable_edges(tri, new_adj)
        assert set(dels) == {(1, 2), (1, 3), (2, 3)}
        back = _delete_surgery(new_adj, 1, 3, K, {})
        assert back == {fs(1, 2): {fs(2, 3)}, fs(2, 3): {fs(1, 2)}}

    def test_add_rewires_outside_neighbors(self):
        g = path_graph(4)
        adj = {
            fs(1, 2): {fs(2, 3)},
            fs(2, 3): {fs(1, 2), fs(3, 4)},
            fs(3, 4): {fs(2, 3)},
        }
        adds = _eligible_adds(g, adj, cap=4)
        assert set(adds) == {(1, 3), (2, 4)}
        new_adj, K = _add_surgery(adj, 2, 4, *adds[(2, 4)])
        assert K == fs(2, 3, 4)
        assert set(new_adj) == {fs(1, 2), fs(2, 3, 4)}
        assert new_adj[fs(1, 2)] == {K}

    def test_cap_blocks_large_cliques(self):
        g = path_graph(3)
        adj = {fs(1, 2): {fs(2, 3)}, fs(2, 3): {fs(1, 2)}}
        assert _eligible_adds(g, adj, cap=2) == {}
        assert set(_eligible_adds(g, adj, cap=3)) == {(1, 3)}

    def test_delete_tie_sides_give_distinct_valid_trees(self):
        edges = frozenset({(1, 2), (1, 3), (2, 3), (3, 4)})
        g = VariableGraph(4, edges)
        K = fs(1, 2, 3)
        adj = {K: {fs(3, 4)}, fs(3, 4): {K}}
        assert _tie_neighbors(adj, K, 1, 2) == [fs(3, 4)]

        left = _delete_surgery(adj, 1, 2, K, {fs(3, 4): "a"})
        right = _delete_surgery(adj, 1, 2, K, {fs(3, 4): "b"})
        assert junction_ok(left) and junction_ok(right)
        assert left != right
        assert fs(3, 4) in left[fs(1, 3)]
        assert fs(3, 4) in right[fs(2, 3)]

    def test_delete_absorbs_nonmaximal_half(self):
        # removing (1, 2) from clique {1,2,3} next to {1,3,4}: the half
        # {1,3} is swallowed by its host while {2,3} survives
        edges = frozenset({(1, 2), (1, 3), (2, 3), (1, 4), (3, 4)})
        g = VariableGraph(4, edges)
        K = fs(1, 2, 3)
        D = fs(1, 3, 4)
        adj = {K: {D}, D: {K}}
        new_adj = _delete_surgery(adj, 1, 2, K, {})
        assert set(new_adj) == {D, fs(2, 3)}
        assert new_adj[D] == {fs(2, 3)}
        assert junction_ok(new_adj)
        assert maximal_cliques(VariableGraph(4, edges - {(1, 2)})) == set(new_adj)

    def test_random_surgeries_preserve_structure(self, rng):
        for trial in range(40):
            q = int(rng.integers(4, 8))
            g = random_decomposable_graph(q, int(rng.integers(2, 2 * q)), rng)
            adj = tree_adjacency(sample_junction_tree(g, rng))
            assert junction_ok(adj)
            assert set(adj) == maximal_cliques(g)

            adds = _eligible_adds(g, adj, cap=None)
            if adds:
                pair = sorted(adds)[int(rng.integers(len(adds)))]
                new_adj, K = _add_surgery(adj, *pair, *adds[pair])
                g2 = VariableGraph(q, g.edges | {pair})
                assert is_decomposable(g2)[0]
                assert junction_ok(new_adj)
                assert set(new_adj) == maximal_cliques(g2)
                assert pair[0] in K and pair[1] in K

            dels = _deletable_edges(g, adj)
            if dels:
                pair = sorted(dels)[int(rng.integers(len(dels)))]
                K = dels[pair]
                ties = _tie_neighbors(adj, K, *pair)
                side = {D: ("a" if rng.uniform() < 0.5 else "b") for D in ties}
                new_adj = _delete_surgery(adj, *pair, K, side)
                g2 = VariableGraph(q, g.edges - {pair})
                assert is_decomposable(g2)[0]
                assert junction_ok(new_adj)
                assert set(new_adj) == maximal_cliques(g2)

    def test_addable_pair_has_unique_tree_edge(self, rng):
        # scan many graphs; the eligibility builder raises if any pair is
        # offered by two tree edges
        for trial in range(60):
            q = int(rng.integers(4, 9))
            g = random_decomposable_graph(q, int(rng.integers(0, 2 * q)), rng)
            adj = tree_adjacency(sample_junction_tree(g, rng))
            _eligible_adds(g, adj, cap=None)


class TestFlatUniformity:
    def test_marginal_is_uniform_over_decomposable_graphs(self):
        pairs = all_pairs(4)
        dec = []
        for r in range(len(pairs) + 1):
            for sub in itertools.combinations(pairs, r):
                if is_decomposable(VariableGraph(4, frozenset(sub)))[0]:
                    dec.append(frozenset(sub))
        assert len(dec) == 61

        s = run_graph_mcmc(
            q=4, flat_likelihood=True, iters=9000, burn=1000, seed=77, cap=4
        )
        keys = [frozenset(d) for d in s.graph_draws]
        assert set(keys) <= set(dec)
        assert len(set(keys)) == 61

        idx = {g: k for k, g in enumerate(dec)}
        ind = np.zeros((len(keys), 61))
        for r, g in enumerate(keys):
            ind[r, idx[g]] = 1.0
        B = 20
        bm = np.array([b.mean(axis=0) for b in np.array_split(ind, B)])
        se = bm.std(axis=0, ddof=1) / np.sqrt(B)
        z = (bm.mean(axis=0) - 1.0 / 61) / np.maximum(se, 1e-12)
        assert np.abs(z).max() < 5.0

        # aggregate statistics sharpen the per-cell bound
        edges_per = s.indicators.sum(axis=1).astype(float)
        bm_e = np.array([b.mean() for b in np.array_split(edges_per, B)])
        se_e = bm_e.std(ddof=1) / np.sqrt(B)
        assert abs(bm_e.mean() - 180.0 / 61) < 4 * se_e
        incl = s.indicators.mean(axis=0)
        assert np.all(np.abs(incl - 30.0 / 61) < 0.05)

    def test_cap_two_keeps_forests(self):
        s = run_graph_mcmc(
            q=5, flat_likelihood=True, iters=800, burn=100, seed=9, cap=2
        )
        for rec in s.visited:
            g = VariableGraph(5, frozenset(tuple(e) for e in rec["edges"]))
            ok, _ = is_decomposable(g)
            assert ok
            assert max(len(c) for c in maximal_cliques(g)) <= 2
            assert g.n_edges <= 4

    def test_every_visited_graph_decomposable(self):
        s = run_graph_mcmc(
            q=5, flat_likelihood=True, iters=600, burn=0, seed=4, cap=4
        )
        for rec in s.visited:
            g = VariableGraph(5, frozenset(tuple(e) for e in rec["edges"]))
            assert is_decomposable(g)[0]

    def test_same_seed_reproduces(self):
        a = run_graph_mcmc(
            q=4, flat_likelihood=True, iters=400, burn=100, seed=12, cap=4
        )
        b = run_graph_mcmc(
            q=4, flat_likelihood=True, iters=400, burn=100, seed=12, cap=4
        )
        assert np.array_equal(a.indicators, b.indicators)
        assert a.graph_draws == b.graph_draws


def _engine_chain(seed=31):
    knots = scatter_knots(14, seed=2)
    g = VariableGraph(3, frozenset({(1, 2), (2, 3)}))
    margs = [
        MaternMarginal(1.0, 4.0),
        MaternMarginal(0.8, 5.0),
        MaternMarginal(1.2, 3.0),
    ]
    ds = simulate_dataset(
        g, knots, margs, {(1, 2): 0.8, (2, 3): -0.6}, 0.08, seed
    )
    eng = _Sampler(
        ds, g, PriorSpec(), knots, 0.5, "simple_ag", 0.0, seed, 1,
        "sequential", "response",
    )
    chain = _GraphChain(g, eng, PriorSpec(), 4, seed, False)
    return eng, chain, knots


class TestLikelihoodDelta:
    def _full(self, graph, knots, km, cross, field):
        model = build(graph, knots, km, cross, nugget=True)
        return loglik_knots(model, field).total

    def test_add_delta_matches_full_difference(self):
        eng, chain, knots = _engine_chain()
        for _ in range(3):
            eng._iterate(0, adapting=False)
        adds = _eligible_adds(chain.g, chain.adj, cap=4)
        assert (1, 3) in adds
        chain.psi[(1, 3)] = 0.25
        CA, CB = adds[(1, 3)]
        S = CA & CB

        cross_new = chain._cross_with(extra_pair=(1, 3))
        inc = chain._lik_delta(1, 3, S, +1.0, cross_new)

        km = eng._km(eng.state)
        field = eng._field(eng.state)
        g2 = VariableGraph(3, chain.g.edges | {(1, 3)})
        full = self._full(g2, knots, km, cross_new, field) - self._full(
            chain.g, knots, km, chain._cross_with(), field
        )
        assert inc == pytest.approx(full, abs=1e-8)

    def test_delete_delta_matches_full_difference(self):
        eng, chain, knots = _engine_chain(seed=40)
        dels = _deletable_edges(chain.g, chain.adj)
        pair = sorted(dels)[0]
        K = dels[pair]
        S = K - set(pair)

        inc = chain._lik_delta(pair[0], pair[1], S, -1.0, chain._cross_with())

        km = eng._km(eng.state)
        field = eng._field(eng.state)
        g2 = VariableGraph(3, chain.g.edges - {pair})
        b2 = {e: v for e, v in eng.state.b.items() if e != pair}
        cross2 = CrossSpec(
            b=b2, delta_a=0.0, rule="simple_ag", dim=knots.dim
        )
        full = self._full(g2, knots, km, cross2, field) - self._full(
            chain.g, knots, km, chain._cross_with(), field
        )
        assert inc == pytest.approx(full, abs=1e-8)


class TestEngineRuns:
    def test_state_tracks_graph_through_moves(self):
        eng, chain, _ = _engine_chain(seed=8)
        rng = np.random.default_rng(5)
        flips = 0
        for it in range(40):
            eng._iterate(it, adapting=True)
            chain.refresh_palette(it)
            chain.refresh_tree(it)
            before = chain.g.edges
            chain.move(rng)
            if chain.g.edges != before:
                flips += 1
            assert set(eng.state.b) == set(chain.g.edges)
            assert eng.graph is chain.g
            assert is_decomposable(chain.g)[0]
            assert set(chain.psi) == set(all_pairs(3))
        assert flips > 0

    def test_independent_data_keeps_edges_rare(self):
        knots = scatter_knots(20, seed=6)
        g0 = VariableGraph(3)
        margs = [MaternMarginal(1.0, 4.0)] * 3
        ds = simulate_dataset(g0, knots, margs, {}, 0.1, 21)
        s = run_graph_mcmc(
            dataset=ds, iters=260, burn=130, seed=13, knots=knots,
            mode="response", cap=3,
        )
        assert s.n_draws == 130
        incl = s.indicators.mean(axis=0)
        assert np.all(incl < 0.8)

    def test_strong_edges_outrank_absent_one(self):
        knots = scatter_knots(30, seed=3)
        g = path_graph(3)
        margs = [
            MaternMarginal(1.0, 4.0),
            MaternMarginal(1.0, 5.0),
            MaternMarginal(1.0, 3.5),
        ]
        ds = simulate_dataset(
            g, knots, margs, {(1, 2): 0.9, (2, 3): -0.9}, 0.05, 17
        )
        s = run_graph_mcmc(
            dataset=ds, iters=320, burn=160, seed=19, knots=knots,
            mode="response", cap=3,
        )
        probs = {p: r for p, r in s.top_edges()}
        assert probs[(1, 2)] > probs[(1, 3)]
        assert probs[(2, 3)] > probs[(1, 3)]
        assert probs[(1, 2)] > 0.5 and probs[(2, 3)] > 0.5

    def test_param_draws_align_with_indicators(self):
        eng, chain, knots = _engine_chain(seed=50)
        ds = Dataset(
            {i: VarData(knots.locations.copy(), eng.y_obs[i]) for i in (1, 2, 3)},
            3, 2,
        )
        s = run_graph_mcmc(
            dataset=ds, graph=chain.g, iters=30, burn=10, seed=50,
            knots=knots, mode="response", cap=4,
        )
        assert s.param_draws.shape == (s.n_draws, len(s.param_names))
        for k in range(s.n_draws):
            for c, p in enumerate(s.pairs):
                col = s.param_names.index("b_%d_%d" % p)
                active = s.indicators[k, c] == 1
                assert active == bool(np.isfinite(s.param_draws[k, col]))
        # marginal scales stay positive
        sig = s.param_draws[:, s.param_names.index("sigma_1")]
        assert np.all(sig > 0)


class TestOutputs:
    def test_edge_prob_csv_roundtrip(self, tmp_path):
        s = run_graph_mcmc(
            q=4, flat_likelihood=True, iters=300, burn=100, seed=2, cap=4
        )
        path = tmp_path / "probs.csv"
        edge_prob_csv(s, str(path))
        M = np.loadtxt(path, delimiter=",", skiprows=1)
        assert M.shape == (4, 4)
        assert np.allclose(M, M.T)
        assert np.allclose(M, s.edge_probs(), atol=1e-6)

    def test_trace_jsonl_matches_visited(self, tmp_path):
        s = run_graph_mcmc(
            q=4, flat_likelihood=True, iters=50, burn=0, seed=6, cap=4
        )
        path = tmp_path / "trace.jsonl"
        graph_trace_jsonl(s, str(path))
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 50
        rec = json.loads(lines[7])
        assert rec["sweep"] == 7
        assert rec["edges"] == s.visited[7]["edges"]
        assert set(rec) == {"sweep", "edges", "accepted", "proposed"}

    def test_samples_shape_contract(self):
        s = run_graph_mcmc(
            q=4, flat_likelihood=True, iters=120, burn=40, thin=2, seed=1,
            cap=4,
        )
        assert isinstance(s, GraphSamples)
        assert s.n_draws == 40
        assert s.indicators.shape == (40, 6)
        assert s.param_draws is None
        assert len(s.graph_draws) == 40
        assert 0.0 <= s.acceptance["graph"] <= 1.0


class TestValidation:
    def test_flat_needs_dimension(self):
        with pytest.raises(ConfigError):
            run_graph_mcmc(flat_likelihood=True, iters=10, burn=0)

    def test_data_run_needs_dataset(self):
        with pytest.raises(ConfigError):
            run_graph_mcmc(iters=10, burn=0)

    def test_bad_windows(self):
        with pytest.raises(ConfigError):
            run_graph_mcmc(q=3, flat_likelihood=True, iters=10, burn=20)
        with pytest.raises(ConfigError):
            run_graph_mcmc(q=3, flat_likelihood=True, iters=10, burn=0, thin=0)

    def test_degenerate_cap(self):
        with pytest.raises(ConfigError):
            run_graph_mcmc(q=3, flat_likelihood=True, iters=10, burn=0, cap=1)
