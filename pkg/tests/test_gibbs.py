"""Sampler tests.

The full-conditional assembly is checked against dense precision oracles,
the Metropolis cross-coefficient move against quadrature, the chromatic
schedule against its bit-identity guarantee, and parameter recovery against
simulated truths.
"""

import json
import math

import numpy as np
import pytest

from conftest import gem_graph, path_graph

from gpstitch.data import Dataset, VarData
from gpstitch.errors import (
    ConfigError,
    EmptyChainError,
    MisalignedDataError,
    PriorMisconfiguredError,
)
from gpstitch.gibbs import (
    PriorSpec,
    _Sampler,
    chains_to_csv,
    chromatic_schedule,
    effective_sample_size,
    gibbs_latent,
    gibbs_response,
    predict,
    summary_json,
)
from gpstitch.graphs import VariableGraph
from gpstitch.kernels import CrossSpec, MaternMarginal
from gpstitch.likelihood import precision_apply, subset_term
from gpstitch.stitching import KnotSet, build, simulate


def simulate_field(graph, knots, marginals, cross, seed):
    model = build(graph, knots, marginals, cross)
    return simulate(model, np.random.default_rng(seed)).w_knots


def noisy_dataset(graph, knots, w, tau, seed, X=None, keep=None):
    """Dataset of knot observations w + noise; ``keep`` restricts a
    variable to a subset of knot indices, ``X`` adds covariates with
    coefficients summing into the values beforehand."""
    rng = np.random.default_rng(seed)
    locs = knots.locations
    frames = {}
    for i in range(1, graph.q + 1):
        idx = np.arange(knots.count) if keep is None or i not in keep else keep[i]
        vals = w[i - 1, idx] + tau * rng.standard_normal(idx.size)
        covars = None
        if X is not None and i in X:
            covars = X[i][idx]
        frames[i] = VarData(locs=locs[idx], values=vals, covars=covars)
    return Dataset(frames=frames, q=graph.q, dim=knots.dim)


def dense_precision(sampler, state, nugget):
    """M^{-1} over all knots via the factorized apply, as a dense matrix."""
    model = build(
        sampler.graph,
        sampler.knots,
        sampler._km(state),
        sampler._cross_from(state.b),
        nugget=nugget,
        cs=sampler.cs,
    )
    qn = sampler.q * sampler.n
    return np.column_stack(
        [precision_apply(model, col) for col in np.eye(qn)]
    )


class TestChromaticSchedule:
    def test_gem_three_variable_classes(self):
        cs = chromatic_schedule(gem_graph())
        assert len(cs.variable_classes) == 3
        assert sorted(v for c in cs.variable_classes for v in c) == [1, 2, 3, 4, 5]
        # classes are independent sets
        g = gem_graph()
        for cls in cs.variable_classes:
            for a in cls:
                for b in cls:
                    if a < b:
                        assert (a, b) not in g.edges

    def test_path_two_classes_one_edge_class(self):
        cs = chromatic_schedule(path_graph(6))
        assert len(cs.variable_classes) == 2
        assert len(cs.edge_classes) == 1
        assert len(cs.edge_classes[0]) == 5

    def test_no_edges(self):
        cs = chromatic_schedule(VariableGraph(3, frozenset()))
        assert cs.edge_classes == ()
        assert cs.edge_list == ()


class TestBitIdentity:
    """The chromatic schedule with per-coordinate random streams must give
    the same chain regardless of executor."""

    def _dataset(self):
        g = gem_graph()
        rng = np.random.default_rng(4)
        knots = KnotSet(locations=rng.uniform(0.0, 1.0, (18, 2)))
        marg = [MaternMarginal(1.0 + 0.1 * k, 4.0 + k) for k in range(5)]
        cross = CrossSpec(b={e: 0.1 for e in g.sorted_edges()}, dim=2)
        w = simulate_field(g, knots, marg, cross, 11)
        return g, knots, noisy_dataset(g, knots, w, 0.1, 5)

    def test_latent_identical(self):
        g, knots, ds = self._dataset()
        kw = dict(iters=8, burn=4, seed=9, knots=knots)
        a = gibbs_latent(ds, g, schedule="sequential", threads=1, **kw)
        b = gibbs_latent(ds, g, schedule="parallel", threads=1, **kw)
        c = gibbs_latent(ds, g, schedule="parallel", threads=4, **kw)
        assert np.array_equal(a.draws, b.draws)
        assert np.array_equal(a.draws, c.draws)
        assert np.array_equal(a.field_draws, c.field_draws)

    def test_response_identical(self):
        g, knots, ds = self._dataset()
        kw = dict(iters=8, burn=4, seed=9, knots=knots)
        a = gibbs_response(ds, g, schedule="sequential", threads=1, **kw)
        c = gibbs_response(ds, g, schedule="parallel", threads=4, **kw)
        assert np.array_equal(a.draws, c.draws)
        assert np.array_equal(a.field_draws, c.field_draws)


class TestFullConditionalOracles:
    """The clique-minus-separator assembly must reproduce the blocks of the
    dense joint precision, including singleton separators."""

    def _latent_sampler(self):
        g = path_graph(3)
        rng = np.random.default_rng(2)
        knots = KnotSet(locations=rng.uniform(0.0, 1.0, (8, 2)))
        marg = [MaternMarginal(1.1, 3.0), MaternMarginal(0.9, 5.0),
                MaternMarginal(1.3, 4.0)]
        cross = CrossSpec(b={(1, 2): 0.2, (2, 3): -0.15}, dim=2)
        w = simulate_field(g, knots, marg, cross, 3)
        keep = {2: np.array([0, 2, 3, 5, 7])}
        ds = noisy_dataset(g, knots, w, 0.1, 6, keep=keep)
        s = _Sampler(ds, g, None, knots, 0.5, "simple_ag", 0.0, 0, 1,
                     "sequential", "latent")
        # pin the state to known values so the oracle sees the same model
        s.state.marginals = marg
        s.state.b = dict(cross.b)
        s.state.tau2 = np.array([0.04, 0.09, 0.0625])
        s.state.w = simulate_field(g, knots, marg, cross, 12)
        s._tcache.clear()
        return s

    def test_field_conditional_matches_dense(self):
        s = self._latent_sampler()
        state = s.state
        n, q = s.n, s.q
        Minv = dense_precision(s, state, nugget=False)
        wflat = state.w.reshape(-1)
        for i in range(1, q + 1):
            prec, lin = s._field_pieces(i, state)
            rows = slice((i - 1) * n, i * n)
            data_prec = np.diag(s.obs_mask[i - 1] / state.tau2[i - 1])
            resid = np.zeros(n)
            resid[s.obs_idx[i]] = s.y_obs[i]
            data_lin = resid / state.tau2[i - 1]
            spatial = prec - data_prec
            assert np.allclose(spatial, Minv[rows, rows], atol=1e-8)
            other = np.ones(q * n, dtype=bool)
            other[rows] = False
            expect_lin = -Minv[rows, :][:, other] @ wflat[other]
            assert np.allclose(lin - data_lin, expect_lin, atol=1e-8)

    def test_impute_conditional_matches_dense(self):
        g = path_graph(3)
        rng = np.random.default_rng(7)
        knots = KnotSet(locations=rng.uniform(0.0, 1.0, (8, 2)))
        marg = [MaternMarginal(1.1, 3.0), MaternMarginal(0.9, 5.0),
                MaternMarginal(1.3, 4.0)]
        cross = CrossSpec(b={(1, 2): 0.2, (2, 3): -0.15}, dim=2)
        w = simulate_field(g, knots, marg, cross, 8)
        keep = {2: np.array([1, 4, 6])}
        ds = noisy_dataset(g, knots, w, 0.2, 9, keep=keep)
        s = _Sampler(ds, g, None, knots, 0.5, "simple_ag", 0.0, 0, 1,
                     "sequential", "response")
        state = s.state
        state.marginals = marg
        state.b = dict(cross.b)
        state.tau2 = np.array([0.04, 0.04, 0.04])
        s._tcache.clear()

        H, lin, miss = s._impute_pieces(2, state)
        Minv = dense_precision(s, state, nugget=True)
        n = s.n
        t_rows = (2 - 1) * n + miss
        u_mask = np.ones(s.q * n, dtype=bool)
        u_mask[t_rows] = False
        x = state.y_full.reshape(-1)
        assert np.allclose(H, Minv[np.ix_(t_rows, t_rows)], atol=1e-8)
        expect_lin = -Minv[np.ix_(t_rows, np.flatnonzero(u_mask))] @ x[u_mask]
        assert np.allclose(lin, expect_lin, atol=1e-8)


class TestDetailedBalance:
    """Driving only the cross-coefficient move must leave its conditional
    law invariant; quadrature over the one free coefficient is exact."""

    def test_b_update_matches_quadrature(self):
        g = path_graph(2)
        locs = np.array([[0.0, 0.0], [0.45, 0.2], [0.1, 0.8]])
        knots = KnotSet(locations=locs)
        marg = [MaternMarginal(1.0, 1.5), MaternMarginal(1.0, 1.5)]
        cross0 = CrossSpec(b={(1, 2): 0.2}, dim=2)
        w = simulate_field(g, knots, marg, cross0, 21)
        ds = noisy_dataset(g, knots, w, 0.1, 22)
        s = _Sampler(ds, g, None, knots, 0.5, "simple_ag", 0.0, 5, 1,
                     "sequential", "latent")
        e = (1, 2)
        s.state.marginals = marg
        s.state.w = w
        s.state.b = {e: 0.0}
        s.state.steps[("b", e)] = math.log(0.6)
        s._tcache.clear()

        N, B = 20000, 20
        draws = np.empty(N)
        for t in range(N):
            _, val, _, terms = s._update_b(e, t)
            if val is not None:
                s.state.b[e] = val
                s._tcache.update(terms)
            draws[t] = s.state.b[e]

        # exact conditional density on the prior box by quadrature
        grid = np.linspace(-3.0, 3.0, 4001)
        logf = np.full(grid.size, -np.inf)
        for k, bval in enumerate(grid):
            try:
                logf[k] = subset_term(
                    (1, 2), knots, marg,
                    CrossSpec(b={e: bval}, dim=2), w,
                )
            except Exception:
                pass
        f = np.exp(logf - logf.max())
        f /= np.trapezoid(f, grid)
        mean_q = np.trapezoid(grid * f, grid)
        med_q = grid[np.searchsorted(np.cumsum(f) / np.sum(f), 0.5)]

        batches = draws.reshape(B, -1)
        bm = batches.mean(axis=1)
        se_mean = bm.std(ddof=1) / math.sqrt(B)
        assert abs(draws.mean() - mean_q) < 3 * se_mean
        bp = (batches <= med_q).mean(axis=1)
        se_p = bp.std(ddof=1) / math.sqrt(B)
        assert abs((draws <= med_q).mean() - 0.5) < 3 * max(se_p, 1e-3)


class TestRecovery:
    def test_beta_and_tau_recovery_latent(self):
        g = VariableGraph(1, frozenset())
        rng = np.random.default_rng(31)
        knots = KnotSet(locations=rng.uniform(0.0, 1.0, (60, 2)))
        marg = [MaternMarginal(1.0, 4.0)]
        cross = CrossSpec(b={}, dim=2)
        w = simulate_field(g, knots, marg, cross, 32)
        beta_true = np.array([2.0, -1.0])
        X = {1: np.column_stack([np.ones(60), knots.locations[:, 0]])}
        tau = 0.15
        base = noisy_dataset(g, knots, w, tau, 33, X=X)
        f = base.frames[1]
        ds = Dataset(
            frames={1: VarData(locs=f.locs, values=f.values + X[1] @ beta_true,
                               covars=f.covars)},
            q=1, dim=2,
        )
        s = gibbs_latent(ds, g, iters=300, burn=150, seed=34, knots=knots)
        summ = s.summary()
        for k, truth in enumerate(beta_true, start=1):
            st = summ["beta_1_%d" % k]
            assert abs(st["mean"] - truth) < 3 * st["sd"]
        st = summ["tau2_1"]
        assert abs(st["mean"] - tau**2) < 4 * st["sd"]

    def test_sigma_and_b_recovery_response(self):
        g = path_graph(2)
        rng = np.random.default_rng(41)
        knots = KnotSet(locations=rng.uniform(0.0, 1.0, (50, 2)))
        marg = [MaternMarginal(1.2, 4.0), MaternMarginal(0.8, 6.0)]
        cross = CrossSpec(b={(1, 2): 0.25}, dim=2)
        w = simulate_field(g, knots, marg, cross, 42)
        ds = noisy_dataset(g, knots, w, 0.1, 43)
        s = gibbs_response(ds, g, iters=400, burn=200, seed=44, knots=knots)
        summ = s.summary()
        st = summ["b_1_2"]
        assert abs(st["mean"] - 0.25) < 3 * st["sd"]
        for i, m in enumerate(marg, start=1):
            st = summ["sigma_%d" % i]
            assert abs(st["mean"] - m.sigma) < 3 * st["sd"]
        # adapted Metropolis moves should not be degenerate
        for name, rate in s.acceptance.items():
            assert 0.05 < rate < 0.95, name


class TestStateAndDiagnostics:
    def _pair(self, keep=None):
        g = path_graph(2)
        rng = np.random.default_rng(51)
        knots = KnotSet(locations=rng.uniform(0.0, 1.0, (12, 2)))
        marg = [MaternMarginal(1.0, 4.0), MaternMarginal(1.0, 4.0)]
        cross = CrossSpec(b={(1, 2): 0.2}, dim=2)
        w = simulate_field(g, knots, marg, cross, 52)
        ds = noisy_dataset(g, knots, w, 0.1, 53, keep=keep)
        return g, knots, ds

    def test_response_state_smaller_by_field_size(self):
        g, knots, ds = self._pair()
        lat = gibbs_latent(ds, g, iters=4, burn=2, seed=1, knots=knots)
        res = gibbs_response(ds, g, iters=4, burn=2, seed=1, knots=knots)
        assert lat.state_dimension - res.state_dimension == 2 * knots.count

    def test_partial_overlap_counts_imputed(self):
        keep = {2: np.arange(7)}
        g, knots, ds = self._pair(keep=keep)
        res = gibbs_response(ds, g, iters=4, burn=2, seed=1, knots=knots)
        # tau2 pair + four kernel scalars + one edge + five imputed slots
        assert res.state_dimension == 2 + 4 + 1 + (12 - 7)

    def test_zero_draws(self):
        g, knots, ds = self._pair()
        s = gibbs_latent(ds, g, iters=0, burn=0, seed=1, knots=knots)
        assert s.n_draws == 0
        with pytest.raises(EmptyChainError):
            predict(s, {1: knots.locations[:2]})

    def test_adaptation_moves_steps(self):
        g, knots, ds = self._pair()
        s = gibbs_response(ds, g, iters=60, burn=50, seed=2, knots=knots)
        steps = s.final_state.steps
        assert steps[("theta", 1)] != pytest.approx(math.log(0.3))
        assert steps[("b", (1, 2))] != pytest.approx(math.log(0.2))

    def test_ess_and_outputs(self, tmp_path):
        g, knots, ds = self._pair()
        s = gibbs_latent(ds, g, iters=40, burn=20, seed=3, knots=knots)
        ess = s.ess()
        assert set(ess) == set(s.names)
        assert all(0 < v <= s.n_draws for v in ess.values())
        p = tmp_path / "chains.csv"
        chains_to_csv(s, p)
        arr = np.loadtxt(p, delimiter=",", skiprows=1)
        assert arr.shape == s.draws.shape
        assert np.allclose(arr, s.draws)
        blob = json.dumps(summary_json(s))
        assert "acceptance" in blob

    def test_ess_iid_close_to_n(self):
        x = np.random.default_rng(0).standard_normal(4000)
        assert effective_sample_size(x) > 2500
        y = np.repeat(np.random.default_rng(1).standard_normal(40), 100)
        assert effective_sample_size(y) < 400


class TestValidation:
    def _pair(self):
        g = path_graph(2)
        rng = np.random.default_rng(61)
        knots = KnotSet(locations=rng.uniform(0.0, 1.0, (10, 2)))
        marg = [MaternMarginal(1.0, 4.0), MaternMarginal(1.0, 4.0)]
        cross = CrossSpec(b={(1, 2): 0.2}, dim=2)
        w = simulate_field(g, knots, marg, cross, 62)
        return g, knots, noisy_dataset(g, knots, w, 0.1, 63)

    def test_prior_validation(self):
        with pytest.raises(PriorMisconfiguredError):
            PriorSpec(beta_var=-1.0)
        with pytest.raises(PriorMisconfiguredError):
            PriorSpec(sigma_factor=(2.0, 1.0))
        with pytest.raises(PriorMisconfiguredError):
            PriorSpec(b_box=(1.0, 1.0))

    def test_config_validation(self):
        g, knots, ds = self._pair()
        with pytest.raises(ConfigError):
            gibbs_latent(ds, g, iters=10, burn=20, knots=knots)
        with pytest.raises(ConfigError):
            gibbs_latent(ds, g, iters=10, burn=2, thin=0, knots=knots)
        with pytest.raises(ConfigError):
            gibbs_latent(ds, g, schedule="sometimes", knots=knots)
        with pytest.raises(ConfigError):
            gibbs_latent(ds, g, threads=0, knots=knots)

    def test_data_off_knots_rejected(self):
        g, knots, ds = self._pair()
        bad_locs = knots.locations + 0.21
        bad = Dataset(
            frames={1: ds.frames[1],
                    2: VarData(locs=bad_locs, values=ds.frames[2].values)},
            q=2, dim=2,
        )
        with pytest.raises(MisalignedDataError):
            gibbs_latent(bad, g, iters=2, burn=0, knots=knots)

    def test_response_covariates_require_full_overlap(self):
        g, knots, ds = self._pair()
        X = np.ones((7, 1))
        frames = dict(ds.frames)
        f2 = ds.frames[2]
        frames[2] = VarData(locs=f2.locs[:7], values=f2.values[:7], covars=X)
        partial = Dataset(frames=frames, q=2, dim=2)
        with pytest.raises(MisalignedDataError):
            gibbs_response(partial, g, iters=2, burn=0, knots=knots)


class TestPredict:
    def _samples(self, kind):
        g = path_graph(2)
        rng = np.random.default_rng(71)
        knots = KnotSet(locations=rng.uniform(0.0, 1.0, (15, 2)))
        marg = [MaternMarginal(1.0, 4.0), MaternMarginal(1.0, 4.0)]
        cross = CrossSpec(b={(1, 2): 0.2}, dim=2)
        w = simulate_field(g, knots, marg, cross, 72)
        ds = noisy_dataset(g, knots, w, 0.1, 73)
        fit = gibbs_latent if kind == "latent" else gibbs_response
        return fit(ds, g, iters=30, burn=15, seed=74, knots=knots), knots

    def test_coincident_response_reproduces_field(self):
        s, knots = self._samples("response")
        out = predict(s, {1: knots.locations[:4]}, keep_draws=True)
        assert np.array_equal(out[1].draws, s.field_draws[:, 0, :4])

    def test_latent_coincident_adds_noise(self):
        s, knots = self._samples("latent")
        out = predict(s, {1: knots.locations[:4]}, keep_draws=True)
        gaps = out[1].draws - s.field_draws[:, 0, :4]
        assert not np.allclose(gaps, 0.0)
        tau = math.sqrt(s.param("tau2_1").mean())
        assert gaps.std() < 6 * tau

    def test_new_locations_dimensions_and_determinism(self):
        s, knots = self._samples("response")
        pts = np.random.default_rng(75).uniform(0.0, 1.0, (6, 2))
        a = predict(s, {1: pts, 2: pts[:2]}, seed=5)
        b = predict(s, {1: pts, 2: pts[:2]}, seed=5)
        assert a[1].mean.shape == (6,)
        assert np.array_equal(a[1].mean, b[1].mean)
        assert np.all(a[2].lower <= a[2].median)
        assert np.all(a[2].median <= a[2].upper)

    def test_no_field_raises(self):
        g = path_graph(2)
        rng = np.random.default_rng(76)
        knots = KnotSet(locations=rng.uniform(0.0, 1.0, (10, 2)))
        marg = [MaternMarginal(1.0, 4.0), MaternMarginal(1.0, 4.0)]
        w = simulate_field(g, knots, marg, CrossSpec(b={(1, 2): 0.1}, dim=2), 77)
        ds = noisy_dataset(g, knots, w, 0.1, 78)
        s = gibbs_latent(ds, g, iters=6, burn=3, knots=knots, keep_field=False)
        with pytest.raises(EmptyChainError):
            predict(s, {1: knots.locations[:2]})
