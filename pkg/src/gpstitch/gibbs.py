"""Gibbs samplers for the stitched spatial model, plus posterior prediction.

Two samplers share one engine.  The latent sampler keeps the spatial field at
the knots as part of the chain state; the response sampler folds the nugget
into the kernel, so the field never enters the state and only missing
responses at knots are imputed.

Coordinate updates are batched by graph color class.  Within a class the
updates are conditionally independent, so they read an immutable snapshot of
the rest of the state and can run on several threads; results are applied by
a single writer once the class finishes.  Every update draws its randomness
from a counter-based stream keyed by (iteration, update kind, coordinate), so
the chain is bit-identical no matter how many threads execute it.
"""

from __future__ import annotations

import copy
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from ._linalg import chol_psd, solve_chol
from .data import choose_knots
from .errors import (
    ConfigError,
    EmptyChainError,
    MisalignedDataError,
    NotPositiveDefiniteError,
    PriorMisconfiguredError,
)
from .graphs import edge_graph, greedy_coloring, perfect_clique_sequence
from .kernels import CrossSpec, MaternMarginal, cov_block
from .likelihood import block_cov, precision_apply, subset_term
from .mle import MleConfig, _clique_pd_ok, _marginal_init
from .stitching import COINCIDENT_TOL, build, simulate

__all__ = [
    "PriorSpec",
    "ChainState",
    "PosteriorSamples",
    "ColorSchedule",
    "chromatic_schedule",
    "gibbs_latent",
    "gibbs_response",
    "predict",
    "PredictionSummary",
    "chains_to_csv",
    "summary_json",
    "effective_sample_size",
]

# substream kinds; the triple (iteration, kind, coordinate) names one update
KIND_INIT = 0
KIND_BETA = 1
KIND_TAU2 = 2
KIND_THETA = 3
KIND_B = 4
KIND_FIELD = 5
KIND_IMPUTE = 6

TARGET_ACCEPT = 0.35
_STEP_CLAMP = (-8.0, 3.0)


def _substream(seed, iteration, kind, unit):
    ss = np.random.SeedSequence(
        entropy=seed, spawn_key=(iteration, kind) + tuple(unit)
    )
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class PriorSpec:
    """Priors: Normal trend coefficients, inverse-gamma nugget, bounded
    uniform spatial parameters, uniform cross coefficients on a fixed box.

    The sigma/phi bounds are factors applied to per-variable moment
    estimates at initialization; b_box is absolute so its normalization
    never depends on the rest of the state.
    """

    beta_mean: float = 0.0
    beta_var: float = 100.0
    tau2_shape: float = 2.0
    tau2_rate: float = 0.5
    sigma_factor: tuple = (1e-2, 1e2)
    phi_factor: tuple = (1e-2, 1e2)
    b_box: tuple = (-3.0, 3.0)

    def __post_init__(self):
        for name in ("beta_var", "tau2_shape", "tau2_rate"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise PriorMisconfiguredError("%s must be finite and > 0" % name)
        if not np.isfinite(self.beta_mean):
            raise PriorMisconfiguredError("beta_mean must be finite")
        for name in ("sigma_factor", "phi_factor"):
            lo, hi = getattr(self, name)
            if not (0 < lo < hi and np.isfinite(hi)):
                raise PriorMisconfiguredError("%s must satisfy 0 < lo < hi" % name)
        lo, hi = self.b_box
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise PriorMisconfiguredError("b_box must be a finite interval")


@dataclass(frozen=True)
class ColorSchedule:
    """Variables and edges partitioned into conditionally independent
    batches."""

    variable_classes: tuple
    edge_list: tuple
    edge_classes: tuple


def chromatic_schedule(graph):
    """Greedy color classes for variable updates, and for cross-coefficient
    updates via the clique-overlap graph on edges."""
    vc = greedy_coloring(graph).classes()
    edges = graph.sorted_edges()
    if not edges:
        return ColorSchedule(tuple(tuple(c) for c in vc), (), ())
    elist, eg = edge_graph(graph)
    ec = greedy_coloring(eg).classes()
    edge_classes = tuple(tuple(elist[k - 1] for k in cls) for cls in ec if cls)
    return ColorSchedule(tuple(tuple(c) for c in vc), tuple(elist), edge_classes)


@dataclass
class ChainState:
    """Mutable sampler state.  w holds the latent field at the knots
    (latent sampler); y_full holds observed-plus-imputed responses at the
    knots (response sampler)."""

    beta: dict
    tau2: np.ndarray
    marginals: list
    b: dict
    w: np.ndarray | None = None
    y_full: np.ndarray | None = None
    n_imputed: int = 0
    steps: dict = field(default_factory=dict)

    def dimension(self):
        """Number of scalar state entries the sampler cycles through."""
        d = sum(v.size for v in self.beta.values())
        d += self.tau2.size + 2 * len(self.marginals) + len(self.b)
        if self.w is not None:
            d += self.w.size
        d += self.n_imputed
        return d


@dataclass
class PosteriorSamples:
    """Retained draws plus diagnostics.  field_draws carries the latent
    field (latent sampler) or the completed response surface (response
    sampler) at the knots, one (q, n) slab per retained draw."""

    names: list
    draws: np.ndarray
    field_draws: np.ndarray | None
    kind: str
    acceptance: dict
    seed: int
    config: dict
    knots: np.ndarray
    state_dimension: int
    init_state: ChainState
    final_state: ChainState

    @property
    def n_draws(self):
        return self.draws.shape[0]

    def param(self, name):
        return self.draws[:, self.names.index(name)]

    def ess(self, name=None):
        if name is not None:
            return effective_sample_size(self.param(name))
        return {nm: effective_sample_size(self.param(nm)) for nm in self.names}

    def summary(self):
        out = {}
        for k, nm in enumerate(self.names):
            col = self.draws[:, k]
            qs = (
                np.percentile(col, [2.5, 50, 97.5])
                if col.size
                else np.full(3, np.nan)
            )
            out[nm] = {
                "mean": float(col.mean()) if col.size else float("nan"),
                "sd": float(col.std(ddof=1)) if col.size > 1 else float("nan"),
                "q025": float(qs[0]),
                "q500": float(qs[1]),
                "q975": float(qs[2]),
            }
        return out


def effective_sample_size(x):
    """Autocorrelation-based ESS with the initial positive-sequence
    truncation."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    centered = x - x.mean()
    v = float(centered @ centered) / n
    if v <= 0:
        return float(n)
    acf = np.correlate(centered, centered, "full")[n - 1 :] / (v * n)
    s = 0.0
    for k in range(1, n // 2):
        pair = acf[2 * k - 1] + acf[2 * k]
        if pair <= 0:
            break
        s += pair
    return float(min(n, n / (1 + 2 * s)))


def chains_to_csv(samples, path):
    """One column per parameter, one row per retained draw."""
    with open(path, "w") as fh:
        fh.write(",".join(samples.names) + "\n")
        for row in samples.draws:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def summary_json(samples):
    return {
        "kind": samples.kind,
        "seed": samples.seed,
        "config": samples.config,
        "n_draws": samples.n_draws,
        "state_dimension": samples.state_dimension,
        "parameters": samples.summary(),
        "ess": samples.ess() if samples.n_draws else {},
        "acceptance": samples.acceptance,
    }


def _match_to_knots(dataset, knots):
    """Map each observation row to its knot index.  Every data location must
    coincide with a knot; rows of one variable must hit distinct knots."""
    obs_idx = {}
    for i, f in sorted(dataset.frames.items()):
        D = cdist(f.locs, knots.locations)
        idx = D.argmin(axis=1)
        if (D[np.arange(f.n), idx] >= COINCIDENT_TOL).any():
            raise MisalignedDataError(
                "variable %d has observations away from the knot set" % i
            )
        if np.unique(idx).size != idx.size:
            raise MisalignedDataError(
                "variable %d maps two rows onto one knot" % i
            )
        obs_idx[i] = idx
    return obs_idx


def _ig_logpdf(x, a, b):
    return -(a + 1.0) * math.log(x) - b / x


class _Sampler:
    """Shared engine behind gibbs_latent and gibbs_response."""

    def __init__(
        self,
        dataset,
        graph,
        priors,
        knots,
        nu,
        rule,
        delta_a,
        seed,
        threads,
        schedule,
        mode,
        estimate_tau2=True,
        tau2_value=None,
        init=None,
    ):
        if schedule not in ("parallel", "sequential"):
            raise ConfigError("schedule must be 'parallel' or 'sequential'")
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        self.mode = mode
        self.priors = priors or PriorSpec()
        self.graph = graph
        self.knots = knots if knots is not None else choose_knots(dataset)
        self.nu = nu
        self.rule = rule
        self.delta_a = delta_a
        self.seed = seed
        self.estimate_tau2 = estimate_tau2
        self.schedule_mode = schedule
        self.threads = threads
        self._pool = (
            ThreadPoolExecutor(max_workers=threads)
            if schedule == "parallel" and threads > 1
            else None
        )
        self._tcache = {}
        self._tally = {}

        self.cs = perfect_clique_sequence(graph)
        self.schedule = chromatic_schedule(graph)
        self._bind_factors()

        self.obs_idx = _match_to_knots(dataset, self.knots)
        n = self.knots.count
        q = graph.q
        self.q, self.n = q, n
        self.y_obs = {i: dataset.frames[i].values for i in self.obs_idx}
        self.X_obs = {i: dataset.frames[i].covars for i in self.obs_idx}
        self.obs_mask = np.zeros((q, n), dtype=bool)
        for i, idx in self.obs_idx.items():
            self.obs_mask[i - 1, idx] = True
        self.has_trend = any(
            x is not None and x.shape[1] for x in self.X_obs.values()
        )
        if mode == "response" and self.has_trend and not self.obs_mask.all():
            raise MisalignedDataError(
                "response sampler with covariates needs every variable "
                "observed at every knot"
            )

        self._init_state(dataset, init, tau2_value)

    def rebind_graph(self, graph):
        """Point the engine at a new graph, keeping data and state.

        Used by the graph sampler after an accepted move; the caller is
        responsible for syncing state.b with the new edge set."""
        self.graph = graph
        self.cs = perfect_clique_sequence(graph)
        self.schedule = chromatic_schedule(graph)
        self._bind_factors()
        self._tcache.clear()
        if hasattr(self, "state"):
            for e in graph.sorted_edges():
                self.state.steps.setdefault(("b", e), math.log(0.2))

    def _bind_factors(self):
        """Clique and separator bookkeeping for the current graph."""
        cliques = [tuple(sorted(K)) for K in self.cs.cliques]
        seps = [tuple(sorted(S)) for S in self.cs.separators if S]
        self.cliques = cliques
        self.seps = seps
        self.cliques_of = {
            i: [K for K in cliques if i in K] for i in range(1, self.graph.q + 1)
        }
        self.seps_of = {
            i: [S for S in seps if i in S] for i in range(1, self.graph.q + 1)
        }
        self.pair_cliques = {
            e: [K for K in cliques if e[0] in K and e[1] in K]
            for e in self.graph.sorted_edges()
        }
        self.pair_seps = {
            e: [S for S in seps if e[0] in S and e[1] in S]
            for e in self.graph.sorted_edges()
        }

    # ---------------------------------------------------------------- init

    def _init_state(self, dataset, init, tau2_value):
        q = self.q
        pr = self.priors
        cfg = MleConfig(estimate_nugget=self.estimate_tau2, compute_se=False)
        marginals, beta, tau2 = [], {}, np.empty(q)
        self.sigma_bounds, self.phi_bounds = {}, {}
        for i in range(1, q + 1):
            f = dataset.frames[i]
            sig, ph, t2, bi = _marginal_init(
                f.values, f.covars, f.locs, self.nu, cfg
            )
            if not self.estimate_tau2:
                t2 = float(tau2_value if tau2_value is not None else 0.0)
            else:
                t2 = max(t2, 1e-8)
            marginals.append(MaternMarginal(sigma=sig, phi=ph, nu=self.nu))
            tau2[i - 1] = t2
            beta[i] = bi if bi is not None else np.zeros(0)
        b = {e: 0.0 for e in self.graph.sorted_edges()}
        if init is not None:
            marginals = list(init.get("marginals", marginals))
            b = dict(init.get("b", b))
            if "beta" in init:
                beta = {
                    i: np.asarray(v, dtype=float)
                    for i, v in init["beta"].items()
                }
            if "tau2" in init:
                tau2 = np.asarray(init["tau2"], dtype=float).copy()
        for i, m in enumerate(marginals, start=1):
            self.sigma_bounds[i] = (
                m.sigma * pr.sigma_factor[0],
                m.sigma * pr.sigma_factor[1],
            )
            self.phi_bounds[i] = (
                m.phi * pr.phi_factor[0],
                m.phi * pr.phi_factor[1],
            )

        steps = {}
        for i in range(1, q + 1):
            steps[("theta", i)] = math.log(0.3)
            if self.mode == "response" and self.estimate_tau2:
                steps[("tau2", i)] = math.log(0.5)
        for e in b:
            steps[("b", e)] = math.log(0.2)

        state = ChainState(
            beta=beta, tau2=tau2, marginals=marginals, b=b, steps=steps
        )
        rng = _substream(self.seed, 0, KIND_INIT, (0,))
        if self.mode == "latent":
            model = build(
                self.graph, self.knots, marginals, self._cross_from(b),
                cs=self.cs,
            )
            state.w = simulate(model, rng).w_knots
        else:
            state.y_full = np.zeros((q, self.n))
            for i in range(1, q + 1):
                state.y_full[i - 1, self.obs_idx[i]] = self.y_obs[i]
            state.n_imputed = int((~self.obs_mask).sum())
            self._init_impute(state, rng)
        self.state = state

    def _init_impute(self, state, rng):
        """Fill unobserved response slots by a per-variable conditional draw
        under the initial marginal kernel."""
        km = self._km(state)
        cross = self._cross_from(state.b)
        locs = self.knots.locations
        for i in range(1, self.q + 1):
            miss = np.flatnonzero(~self.obs_mask[i - 1])
            if miss.size == 0:
                continue
            obs = self.obs_idx[i]
            Coo = cov_block(i, i, locs[obs], locs[obs], km, cross, nugget=True)
            Cmo = cov_block(i, i, locs[miss], locs[obs], km, cross, nugget=True)
            Cmm = cov_block(i, i, locs[miss], locs[miss], km, cross, nugget=True)
            L = chol_psd(Coo, "imputation base")
            mean = Cmo @ solve_chol(L, self.y_obs[i])
            cov = Cmm - Cmo @ solve_chol(L, Cmo.T)
            Lc = chol_psd(0.5 * (cov + cov.T), "imputation conditional")
            state.y_full[i - 1, miss] = mean + Lc @ rng.standard_normal(miss.size)

    # ------------------------------------------------------------- helpers

    def _cross_from(self, b):
        return CrossSpec(
            b=dict(b), delta_a=self.delta_a, rule=self.rule, dim=self.knots.dim
        )

    def _km(self, state, marginals=None, tau2=None):
        """Kernel marginals: the response model carries the nugget inside
        the kernel, the latent model does not."""
        marginals = state.marginals if marginals is None else marginals
        if self.mode == "latent":
            return marginals
        tau2 = state.tau2 if tau2 is None else tau2
        return [
            MaternMarginal(sigma=m.sigma, phi=m.phi, nu=m.nu, tau2=float(t))
            for m, t in zip(marginals, tau2)
        ]

    def _trend_rows(self, i, idx, state):
        X = self.X_obs[i]
        if X is None or state.beta[i].size == 0:
            return np.zeros(len(idx))
        # a trend needs a covariate row per requested knot; response mode
        # enforces full overlap whenever covariates are present, and latent
        # mode only evaluates the trend at observed knots
        pos = {knot: k for k, knot in enumerate(self.obs_idx[i])}
        rows = np.array([pos[j] for j in idx])
        return X[rows] @ state.beta[i]

    def _field(self, state):
        if self.mode == "latent":
            return state.w
        if not self.has_trend:
            return state.y_full
        resid = state.y_full.copy()
        allk = np.arange(self.n)
        for i in range(1, self.q + 1):
            resid[i - 1] -= self._trend_rows(i, allk, state)
        return resid

    def _term(self, verts, state):
        """Cached clique/separator log density at the current state."""
        val = self._tcache.get(verts)
        if val is None:
            val = subset_term(
                verts, self.knots, self._km(state), self._cross_from(state.b),
                self._field(state), nugget=(self.mode == "response"),
            )
            self._tcache[verts] = val
        return val

    def _fresh_term(self, verts, state, marginals=None, b=None, tau2=None):
        return subset_term(
            verts, self.knots,
            self._km(state, marginals=marginals, tau2=tau2),
            self._cross_from(state.b if b is None else b),
            self._field(state), nugget=(self.mode == "response"),
        )

    def _drop_terms(self, variables):
        hits = set(variables)
        for key in [k for k in self._tcache if hits.intersection(k)]:
            del self._tcache[key]

    def _run_units(self, units, fn):
        if self._pool is None:
            return [fn(u) for u in units]
        return list(self._pool.map(fn, units))

    def _adapt(self, key, alpha, accepted, adapting):
        tally = self._tally.setdefault(key, [0.0, 0, 0])
        tally[0] += alpha
        tally[1] += int(accepted)
        tally[2] += 1
        if adapting:
            self.state.steps[key] = float(
                np.clip(
                    self.state.steps[key]
                    + (alpha - TARGET_ACCEPT) / tally[2] ** 0.6,
                    *_STEP_CLAMP,
                )
            )

    def acceptance_rates(self):
        out = {}
        for key, (_, acc, total) in self._tally.items():
            unit = key[1] if isinstance(key[1], tuple) else (key[1],)
            name = "%s_%s" % (key[0], "_".join(str(v) for v in unit))
            out[name] = acc / total if total else float("nan")
        return out

    # ------------------------------------------------------------- updates

    def _update_beta_latent(self, i, it):
        state = self.state
        X = self.X_obs[i]
        if X is None or X.shape[1] == 0:
            return None
        rng = _substream(self.seed, it + 1, KIND_BETA, (i,))
        pr = self.priors
        t2 = float(state.tau2[i - 1])
        resid = self.y_obs[i] - state.w[i - 1, self.obs_idx[i]]
        P = X.T @ X / t2 + np.eye(X.shape[1]) / pr.beta_var
        c = X.T @ resid / t2 + pr.beta_mean / pr.beta_var
        L = chol_psd(P, "trend precision")
        mean = solve_chol(L, c)
        z = rng.standard_normal(X.shape[1])
        return i, mean + solve_triangular(L, z, lower=True, trans="T")

    def _update_beta_response(self, it):
        """Joint conjugate draw of all trend coefficients under the
        stitched response precision."""
        state = self.state
        rng = _substream(self.seed, it + 1, KIND_BETA, (0,))
        pr = self.priors
        n, q = self.n, self.q
        model = build(
            self.graph, self.knots, self._km(state),
            self._cross_from(state.b), nugget=True, cs=self.cs,
        )
        cols, owners = [], []
        for i in range(1, q + 1):
            X = self.X_obs[i]
            if X is None or X.shape[1] == 0:
                continue
            for k in range(X.shape[1]):
                v = np.zeros(q * n)
                v[(i - 1) * n + self.obs_idx[i]] = X[:, k]
                cols.append(v)
                owners.append(i)
        Xt = np.column_stack(cols)
        p = Xt.shape[1]
        A = np.column_stack(
            [precision_apply(model, Xt[:, k]) for k in range(p)]
        )
        P = Xt.T @ A + np.eye(p) / pr.beta_var
        c = A.T @ state.y_full.reshape(-1) + pr.beta_mean / pr.beta_var
        L = chol_psd(P, "trend precision")
        mean = solve_chol(L, c)
        draw = mean + solve_triangular(
            L, rng.standard_normal(p), lower=True, trans="T"
        )
        pos = 0
        for i in range(1, q + 1):
            k = state.beta[i].size
            if k:
                state.beta[i] = draw[pos : pos + k]
                pos += k
        self._drop_terms(set(owners))

    def _update_tau2_conjugate(self, i, it):
        state = self.state
        rng = _substream(self.seed, it + 1, KIND_TAU2, (i,))
        pr = self.priors
        r = (
            self.y_obs[i]
            - self._trend_rows(i, self.obs_idx[i], state)
            - state.w[i - 1, self.obs_idx[i]]
        )
        shape = pr.tau2_shape + 0.5 * r.size
        rate = pr.tau2_rate + 0.5 * float(r @ r)
        return i, max(1.0 / rng.gamma(shape, 1.0 / rate), 1e-12)

    def _update_tau2_mh(self, i, it):
        """Response-model nugget: random-walk Metropolis on the log scale."""
        state = self.state
        rng = _substream(self.seed, it + 1, KIND_TAU2, (i,))
        z = rng.standard_normal()
        u = rng.uniform()
        cur = float(state.tau2[i - 1])
        cand = cur * math.exp(math.exp(state.steps[("tau2", i)]) * z)
        pr = self.priors
        tau_new = state.tau2.copy()
        tau_new[i - 1] = cand
        try:
            delta = 0.0
            new_terms = {}
            for K in self.cliques_of[i]:
                val = self._fresh_term(K, state, tau2=tau_new)
                new_terms[K] = val
                delta += val - self._term(K, state)
            for S in self.seps_of[i]:
                val = self._fresh_term(S, state, tau2=tau_new)
                new_terms[S] = val
                delta -= val - self._term(S, state)
        except NotPositiveDefiniteError:
            return i, None, 0.0, {}
        delta += _ig_logpdf(cand, pr.tau2_shape, pr.tau2_rate)
        delta -= _ig_logpdf(cur, pr.tau2_shape, pr.tau2_rate)
        delta += math.log(cand) - math.log(cur)  # log-scale proposal Jacobian
        alpha = min(1.0, math.exp(min(delta, 50.0)))
        accept = u < alpha
        return i, (cand if accept else None), alpha, (new_terms if accept else {})

    def _update_theta(self, i, it):
        """Joint Metropolis step on (log sigma, log phi) for one variable."""
        state = self.state
        rng = _substream(self.seed, it + 1, KIND_THETA, (i,))
        z = rng.standard_normal(2)
        u = rng.uniform()
        m = state.marginals[i - 1]
        step = math.exp(state.steps[("theta", i)])
        sig = math.exp(math.log(m.sigma) + step * z[0])
        ph = math.exp(math.log(m.phi) + step * z[1])
        lo_s, hi_s = self.sigma_bounds[i]
        lo_p, hi_p = self.phi_bounds[i]
        if not (lo_s <= sig <= hi_s and lo_p <= ph <= hi_p):
            return i, None, 0.0, {}
        cand = list(state.marginals)
        cand[i - 1] = MaternMarginal(sigma=sig, phi=ph, nu=m.nu, tau2=m.tau2)
        if not _clique_pd_ok(
            self._km(state, marginals=cand), self._cross_from(state.b),
            self.cliques_of[i],
        ):
            return i, None, 0.0, {}
        try:
            delta = 0.0
            new_terms = {}
            for K in self.cliques_of[i]:
                val = self._fresh_term(K, state, marginals=cand)
                new_terms[K] = val
                delta += val - self._term(K, state)
            for S in self.seps_of[i]:
                val = self._fresh_term(S, state, marginals=cand)
                new_terms[S] = val
                delta -= val - self._term(S, state)
        except NotPositiveDefiniteError:
            return i, None, 0.0, {}
        alpha = min(1.0, math.exp(min(delta, 50.0)))
        accept = u < alpha
        return i, (cand[i - 1] if accept else None), alpha, (new_terms if accept else {})

    def _update_b(self, e, it):
        state = self.state
        rng = _substream(self.seed, it + 1, KIND_B, e)
        z = rng.standard_normal()
        u = rng.uniform()
        cur = state.b[e]
        cand = cur + math.exp(state.steps[("b", e)]) * z
        lo, hi = self.priors.b_box
        if not (lo <= cand <= hi):
            return e, None, 0.0, {}
        b_new = dict(state.b)
        b_new[e] = cand
        if not _clique_pd_ok(
            self._km(state), self._cross_from(b_new), self.pair_cliques[e]
        ):
            return e, None, 0.0, {}
        try:
            delta = 0.0
            new_terms = {}
            for K in self.pair_cliques[e]:
                val = self._fresh_term(K, state, b=b_new)
                new_terms[K] = val
                delta += val - self._term(K, state)
            for S in self.pair_seps[e]:
                val = self._fresh_term(S, state, b=b_new)
                new_terms[S] = val
                delta -= val - self._term(S, state)
        except NotPositiveDefiniteError:
            return e, None, 0.0, {}
        alpha = min(1.0, math.exp(min(delta, 50.0)))
        accept = u < alpha
        return e, (cand if accept else None), alpha, (new_terms if accept else {})

    def _cond_pieces(self, i, verts, state):
        """Conditional precision of variable i's knot block given the other
        members of one clique or separator, and the matching linear term."""
        n = self.n
        others = tuple(j for j in verts if j != i)
        km = self._km(state)
        cross = self._cross_from(state.b)
        nugget = self.mode == "response"
        if not others:
            C = block_cov((i,), self.knots, km, cross, nugget=nugget)
            L = chol_psd(C, "marginal knot block")
            return solve_chol(L, np.eye(n)), np.zeros(n)
        C = block_cov((i,) + others, self.knots, km, cross, nugget=nugget)
        Cii = C[:n, :n]
        Cio = C[:n, n:]
        Coo = C[n:, n:]
        Lo = chol_psd(Coo, "clique remainder block")
        W = solve_chol(Lo, Cio.T)
        cond = Cii - Cio @ W
        Lc = chol_psd(0.5 * (cond + cond.T), "conditional knot block")
        x = self._field(state)
        w_o = np.concatenate([x[j - 1] for j in others])
        Q = solve_chol(Lc, np.eye(n))
        lin = solve_chol(Lc, W.T @ w_o)
        return Q, lin

    def _field_pieces(self, i, state):
        """Precision and linear term of the latent-field full conditional
        for one variable: data part plus clique-minus-separator part."""
        n = self.n
        t2 = float(state.tau2[i - 1])
        prec = np.zeros((n, n))
        lin = np.zeros(n)
        resid = np.zeros(n)
        resid[self.obs_idx[i]] = self.y_obs[i] - self._trend_rows(
            i, self.obs_idx[i], state
        )
        prec[np.diag_indices(n)] += self.obs_mask[i - 1] / t2
        lin += resid / t2
        for K in self.cliques_of[i]:
            Q, li = self._cond_pieces(i, K, state)
            prec += Q
            lin += li
        for S in self.seps_of[i]:
            Q, li = self._cond_pieces(i, S, state)
            prec -= Q
            lin -= li
        return prec, lin

    def _update_field(self, i, it):
        """Gaussian draw of the latent field of one variable at the knots
        from its full conditional."""
        state = self.state
        rng = _substream(self.seed, it + 1, KIND_FIELD, (i,))
        prec, lin = self._field_pieces(i, state)
        L = chol_psd(0.5 * (prec + prec.T), "field full conditional")
        mean = solve_chol(L, lin)
        z = rng.standard_normal(self.n)
        return i, mean + solve_triangular(L, z, lower=True, trans="T")

    def _impute_pieces(self, i, state):
        """Precision and linear term of the conditional for variable i's
        unobserved responses, assembled clique-minus-separator."""
        miss = np.flatnonzero(~self.obs_mask[i - 1])
        n, m = self.n, miss.size
        km = self._km(state)
        cross = self._cross_from(state.b)
        resid = self._field(state)
        obs_rows = np.setdiff1d(np.arange(n), miss, assume_unique=True)
        H = np.zeros((m, m))
        lin = np.zeros(m)
        for sign, groups in ((1.0, self.cliques_of[i]), (-1.0, self.seps_of[i])):
            for verts in groups:
                order = (i,) + tuple(j for j in verts if j != i)
                C = block_cov(order, self.knots, km, cross, nugget=True)
                u_rows = np.concatenate(
                    [obs_rows]
                    + [np.arange(k * n, (k + 1) * n) for k in range(1, len(order))]
                )
                Ctt = C[np.ix_(miss, miss)]
                Ctu = C[np.ix_(miss, u_rows)]
                Cuu = C[np.ix_(u_rows, u_rows)]
                Lu = chol_psd(Cuu, "imputation remainder")
                W = solve_chol(Lu, Ctu.T)
                cond = Ctt - Ctu @ W
                Lc = chol_psd(0.5 * (cond + cond.T), "imputation conditional")
                r_u = np.concatenate([resid[j - 1] for j in order])[u_rows]
                H += sign * solve_chol(Lc, np.eye(m))
                lin += sign * solve_chol(Lc, W.T @ r_u)
        return H, lin, miss

    def _update_impute(self, i, it):
        """Draw the unobserved responses of variable i given everything
        else, via the clique-minus-separator conditional precision."""
        state = self.state
        if self.obs_mask[i - 1].all():
            return i, None
        rng = _substream(self.seed, it + 1, KIND_IMPUTE, (i,))
        H, lin, miss = self._impute_pieces(i, state)
        L = chol_psd(0.5 * (H + H.T), "imputation precision")
        mean = solve_chol(L, lin)
        z = rng.standard_normal(miss.size)
        draw = mean + solve_triangular(L, z, lower=True, trans="T")
        return i, draw + self._trend_rows(i, miss, state)

    # ----------------------------------------------------------- iteration

    def _iterate(self, it, adapting):
        state = self.state
        if self.mode == "latent":
            for res in self._run_units(
                range(1, self.q + 1), lambda i: self._update_beta_latent(i, it)
            ):
                if res is not None:
                    state.beta[res[0]] = res[1]
            if self.estimate_tau2:
                for i, val in self._run_units(
                    range(1, self.q + 1),
                    lambda i: self._update_tau2_conjugate(i, it),
                ):
                    state.tau2[i - 1] = val
        else:
            if self.has_trend:
                self._update_beta_response(it)
            if self.estimate_tau2:
                for cls in self.schedule.variable_classes:
                    for i, val, alpha, terms in self._run_units(
                        cls, lambda i: self._update_tau2_mh(i, it)
                    ):
                        self._adapt(("tau2", i), alpha, val is not None, adapting)
                        if val is not None:
                            state.tau2[i - 1] = val
                            self._tcache.update(terms)

        for cls in self.schedule.variable_classes:
            for i, val, alpha, terms in self._run_units(
                cls, lambda i: self._update_theta(i, it)
            ):
                self._adapt(("theta", i), alpha, val is not None, adapting)
                if val is not None:
                    state.marginals[i - 1] = val
                    self._tcache.update(terms)

        for cls in self.schedule.edge_classes:
            for e, val, alpha, terms in self._run_units(
                cls, lambda e: self._update_b(e, it)
            ):
                self._adapt(("b", e), alpha, val is not None, adapting)
                if val is not None:
                    state.b[e] = val
                    self._tcache.update(terms)
        assert _clique_pd_ok(
            self._km(state), self._cross_from(state.b), self.cliques
        ), "accepted cross coefficients broke clique positive definiteness"

        if self.mode == "latent":
            for cls in self.schedule.variable_classes:
                for i, w_new in self._run_units(
                    cls, lambda i: self._update_field(i, it)
                ):
                    state.w[i - 1] = w_new
                    self._drop_terms((i,))
        else:
            for cls in self.schedule.variable_classes:
                for i, y_new in self._run_units(
                    cls, lambda i: self._update_impute(i, it)
                ):
                    if y_new is not None:
                        state.y_full[i - 1, ~self.obs_mask[i - 1]] = y_new
                        self._drop_terms((i,))

    # ----------------------------------------------------------------- run

    def run(self, iters, burn, thin, keep_field):
        if not (0 <= burn <= iters):
            raise ConfigError("need 0 <= burn <= iters")
        if thin < 1:
            raise ConfigError("thin must be >= 1")
        init_state = copy.deepcopy(self.state)
        names = self._names()
        keep = (iters - burn) // thin
        rows = np.empty((keep, len(names)))
        fld = np.empty((keep, self.q, self.n)) if keep_field else None
        k = 0
        for it in range(iters):
            self._iterate(it, adapting=it < burn)
            if it >= burn and (it - burn) % thin == 0 and k < keep:
                rows[k] = self._record()
                if keep_field:
                    fld[k] = (
                        self.state.w
                        if self.mode == "latent"
                        else self.state.y_full
                    )
                k += 1
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None
        return PosteriorSamples(
            names=names,
            draws=rows[:k],
            field_draws=fld[:k] if keep_field else None,
            kind=self.mode,
            acceptance=self.acceptance_rates(),
            seed=self.seed,
            config={
                "iters": iters, "burn": burn, "thin": thin,
                "nu": self.nu, "rule": self.rule, "delta_a": self.delta_a,
                "threads": self.threads, "schedule": self.schedule_mode,
                "mode": self.mode, "estimate_tau2": self.estimate_tau2,
            },
            knots=self.knots.locations.copy(),
            state_dimension=self.state.dimension(),
            init_state=init_state,
            final_state=self.state,
        )

    def _names(self):
        names = []
        for i in range(1, self.q + 1):
            for k in range(self.state.beta[i].size):
                names.append("beta_%d_%d" % (i, k + 1))
            names.append("tau2_%d" % i)
            names.append("sigma_%d" % i)
            names.append("phi_%d" % i)
        for i, j in self.graph.sorted_edges():
            names.append("b_%d_%d" % (i, j))
        return names

    def _record(self):
        state = self.state
        vals = []
        for i in range(1, self.q + 1):
            vals.extend(state.beta[i].tolist())
            vals.append(float(state.tau2[i - 1]))
            m = state.marginals[i - 1]
            vals.append(m.sigma)
            vals.append(m.phi)
        for e in self.graph.sorted_edges():
            vals.append(state.b[e])
        return np.array(vals)


def gibbs_latent(
    dataset,
    graph,
    priors=None,
    iters=1000,
    burn=500,
    thin=1,
    seed=0,
    knots=None,
    nu=0.5,
    rule="simple_ag",
    delta_a=0.0,
    threads=1,
    schedule="parallel",
    keep_field=True,
    init=None,
):
    """Gibbs sampler for the hierarchical model with a latent stitched field.

    Per iteration: conjugate Normal draws for the trend coefficients,
    conjugate inverse-gamma draws for the nuggets, Metropolis moves for the
    marginal kernel parameters and cross coefficients over their clique and
    separator factors, and a Gaussian draw of each variable's knot field
    from its full conditional.  Variables absent from some knots are handled
    by the observation indicator in the field update."""
    sampler = _Sampler(
        dataset, graph, priors, knots, nu, rule, delta_a, seed, threads,
        schedule, "latent", init=init,
    )
    return sampler.run(iters, burn, thin, keep_field)


def gibbs_response(
    dataset,
    graph,
    priors=None,
    iters=1000,
    burn=500,
    thin=1,
    seed=0,
    knots=None,
    nu=0.5,
    rule="simple_ag",
    delta_a=0.0,
    threads=1,
    schedule="parallel",
    keep_field=True,
    estimate_tau2=True,
    tau2_value=None,
    init=None,
):
    """Gibbs sampler for the collapsed model whose stitched kernel includes
    the nugget, so the latent field never enters the state.

    Missing responses at knots are imputed from their conditional Normal;
    the nugget loses conjugacy and moves by Metropolis.  With every variable
    observed at every knot the imputation step is a no-op and the state
    carries only O(q + edges) parameters beyond the trend."""
    sampler = _Sampler(
        dataset, graph, priors, knots, nu, rule, delta_a, seed, threads,
        schedule, "response", estimate_tau2=estimate_tau2,
        tau2_value=tau2_value, init=init,
    )
    return sampler.run(iters, burn, thin, keep_field)


@dataclass(frozen=True)
class PredictionSummary:
    locations: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    draws: np.ndarray | None = None


def predict(samples, new_locs, X_new=None, seed=0, keep_draws=False,
            max_draws=None):
    """Posterior predictive summaries of the response at new locations.

    For every retained draw, each variable's field at the new points is
    drawn from its conditional given that draw's knot values and marginal
    kernel (the stitched process beyond the knots depends only on the
    variable's own knot block), the trend is added, and for the latent kind
    nugget noise is attached.  Points coinciding with a knot reproduce the
    knot value exactly.  Summaries are computed across draws."""
    if samples.n_draws == 0:
        raise EmptyChainError("no retained draws to predict from")
    if samples.field_draws is None:
        raise EmptyChainError("chain was run without keep_field")
    nu = samples.config["nu"]
    rule = samples.config["rule"]
    delta_a = samples.config["delta_a"]
    knots = samples.knots
    use = np.arange(samples.n_draws)
    if max_draws is not None and samples.n_draws > max_draws:
        use = use[-max_draws:]
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    )
    out = {}
    for i in sorted(new_locs):
        pts = np.atleast_2d(np.asarray(new_locs[i], dtype=float))
        m_new = pts.shape[0]
        draws = np.empty((use.size, m_new))
        dists = cdist(pts, knots)
        hit_idx = dists.argmin(axis=1)
        is_hit = dists[np.arange(m_new), hit_idx] < COINCIDENT_TOL
        free = ~is_hit
        sig_col = samples.param("sigma_%d" % i)
        phi_col = samples.param("phi_%d" % i)
        tau_col = samples.param("tau2_%d" % i)
        for t, d in enumerate(use):
            marg = MaternMarginal(
                sigma=sig_col[d], phi=phi_col[d], nu=nu,
                tau2=tau_col[d] if samples.kind == "response" else 0.0,
            )
            cross = CrossSpec(b={}, delta_a=delta_a, rule=rule,
                              dim=knots.shape[1])
            nug = samples.kind == "response"
            margs = [marg] * i  # cov_block reads entry i-1
            K_LL = cov_block(i, i, knots, knots, margs, cross, nugget=nug)
            K_nL = cov_block(i, i, pts, knots, margs, cross, nugget=nug)
            fld = samples.field_draws[d, i - 1]
            L = chol_psd(K_LL, "knot kernel")
            y = np.empty(m_new)
            y[is_hit] = fld[hit_idx[is_hit]]
            if free.any():
                K_nn = cov_block(
                    i, i, pts[free], pts[free], margs, cross, nugget=nug
                )
                gain = K_nL[free]
                mean = gain @ solve_chol(L, fld)
                cov = K_nn - gain @ solve_chol(L, gain.T)
                Lf = chol_psd(0.5 * (cov + cov.T), "predictive residual")
                y[free] = mean + Lf @ rng.standard_normal(int(free.sum()))
            if samples.kind == "latent":
                y = y + math.sqrt(tau_col[d]) * rng.standard_normal(m_new)
            if X_new is not None and i in X_new:
                Xi = np.asarray(X_new[i], dtype=float)
                beta = np.array([
                    samples.param("beta_%d_%d" % (i, k + 1))[d]
                    for k in range(Xi.shape[1])
                ])
                y = y + Xi @ beta
            draws[t] = y
        qs = np.percentile(draws, [2.5, 50, 97.5], axis=0)
        out[i] = PredictionSummary(
            locations=pts,
            mean=draws.mean(axis=0),
            sd=draws.std(axis=0, ddof=1),
            lower=qs[0],
            median=qs[1],
            upper=qs[2],
            draws=draws if keep_draws else None,
        )
    return out
