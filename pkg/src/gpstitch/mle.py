"""Coordinate-descent maximum likelihood for the response process.

Requires every variable observed at the knots, so the likelihood is the
factorized knot density of the response model (kernel plus nugget).  Sweeps
alternate a generalized-least-squares update of the trend coefficients with
golden-section line searches for each spatial parameter; each line search
maximizes only the clique and separator terms its parameter touches, so the
objective never decreases.
"""

from __future__ import annotations

import types
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky

from ._linalg import chol_psd, solve_chol
from .data import aligned_arrays, choose_knots
from .errors import (
    ConfigError,
    InvalidCrossSpecError,
    NotDecomposableError,
    NotPositiveDefiniteError,
)
from .graphs import is_decomposable, perfect_clique_sequence
from .kernels import CrossSpec, MaternMarginal, b_from_sigma
from .likelihood import loglik_knots, subset_term
from .stitching import build

__all__ = ["MleConfig", "MleResult", "fit_mle", "golden_max", "feasible_b_interval"]


@dataclass(frozen=True)
class MleConfig:
    max_outer: int = 30
    inner_evals: int = 50
    tol: float = 1e-6
    sigma_bounds: tuple = (1e-6, 1e3)
    phi_bounds: tuple = (1e-2, 1e2)
    tau2_bounds: tuple = (1e-8, 1e2)
    b_box: tuple = (-1e3, 1e3)
    nu_policy: str = "fixed"
    nu_bounds: tuple = (0.2, 3.0)
    estimate_nugget: bool = True
    b_margin: float = 1e-6
    compute_se: bool = True

    def __post_init__(self):
        if self.tol <= 0 or self.max_outer < 1 or self.inner_evals < 5:
            raise ConfigError("tol must be positive and budgets sensible")
        if self.nu_policy not in ("fixed", "estimated"):
            raise ConfigError("nu_policy must be 'fixed' or 'estimated'")


@dataclass(frozen=True)
class MleResult:
    beta: dict
    marginals: tuple
    cross: CrossSpec
    loglik: float
    trace: tuple
    se_b: dict = field(default_factory=dict)
    n_iter: int = 0
    converged: bool = False


GOLDEN = 0.6180339887498949


def golden_max(f, lo, hi, budget, include=None):
    """Golden-section maximization on [lo, hi]; returns (argmax, max).

    ``include`` adds one extra candidate (the current value) so a coordinate
    step can never make things worse.
    """
    best_x, best_f = None, -np.inf
    if include is not None and lo <= include <= hi:
        best_x, best_f = include, f(include)
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    evals = 2
    while evals < budget:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        evals += 1
    for x, fx in ((x1, f1), (x2, f2)):
        if fx > best_f:
            best_x, best_f = x, fx
    return best_x, best_f


def _clique_pd_ok(marginals, cross, cliques):
    from .kernels import validate_cross_spec

    shim = types.SimpleNamespace(cliques=list(cliques))
    ok, _ = validate_cross_spec(cross, marginals, shim)
    return ok


def feasible_b_interval(marginals, cross, cliques, i, j, box, margin=1e-6):
    """Interval of b_ij values keeping every clique block PD.

    Doubling then bisection from the current (feasible) value; the returned
    interval is shrunk by ``margin`` relative to its width so line searches
    stay strictly inside the PD region.
    """
    b0 = cross.b_value(i, j)
    touch = [K for K in cliques if i in K and j in K]

    def ok(val):
        return _clique_pd_ok(marginals, cross.with_b(i, j, val), touch)

    if not ok(b0):
        raise ConfigError("current b_%d%d is outside the PD region" % (i, j))

    def boundary(direction):
        step = max(0.25, 0.25 * abs(b0))
        inside = b0
        limit = box[1] if direction > 0 else box[0]
        while True:
            cand = inside + direction * step
            if direction * (cand - limit) >= 0:
                cand = limit
                if ok(cand):
                    return cand
            if ok(cand):
                inside = cand
                step *= 2.0
            else:
                break
        outside = cand
        for _ in range(60):
            mid = 0.5 * (inside + outside)
            if ok(mid):
                inside = mid
            else:
                outside = mid
        return inside

    hi = boundary(+1.0)
    lo = boundary(-1.0)
    width = hi - lo
    return lo + margin * width, hi - margin * width


def _marginal_init(y, X_i, locs, nu, config):
    """Per-variable dense MLE: coordinate sweeps over sigma, phi, tau2
    with GLS trend refits."""
    from scipy.spatial.distance import cdist

    from .kernels import matern_corr

    n = y.shape[0]
    D = cdist(locs, locs)
    beta = np.zeros(X_i.shape[1]) if X_i is not None else None
    sigma = float(np.var(y)) or 1.0
    phi = 3.0 / max(D.max(), 1e-3)
    tau2 = 0.1 * sigma if config.estimate_nugget else 0.0

    def negll(sig, ph, t2, r):
        C = sig * matern_corr(D, nu, ph) + t2 * np.eye(n)
        try:
            L = cholesky(C, lower=True)
        except np.linalg.LinAlgError:
            return np.inf
        z = np.linalg.solve(L, r)
        return float(np.sum(np.log(np.diag(L))) + 0.5 * z @ z)

    for _ in range(4):
        if X_i is not None:
            C = sigma * matern_corr(D, nu, phi) + max(tau2, 1e-10) * np.eye(n)
            L = chol_psd(C, "marginal covariance")
            Xw = solve_chol(L, X_i)
            beta = np.linalg.solve(X_i.T @ Xw, Xw.T @ y)
            r = y - X_i @ beta
        else:
            r = y
        sigma, _ = golden_max(
            lambda s: -negll(s, phi, tau2, r), *config.sigma_bounds, 30
        )
        phi, _ = golden_max(
            lambda p: -negll(sigma, p, tau2, r), *config.phi_bounds, 30
        )
        if config.estimate_nugget:
            tau2, _ = golden_max(
                lambda t: -negll(sigma, phi, t, r), *config.tau2_bounds, 30
            )
    return sigma, phi, tau2, beta


def _gls_beta(model, Y, X):
    """One generalized-least-squares update of all trend coefficients."""
    q, n = Y.shape
    cols = []
    owners = []
    for i in range(1, q + 1):
        if X.get(i) is None:
            continue
        for k in range(X[i].shape[1]):
            v = np.zeros(q * n)
            v[(i - 1) * n : i * n] = X[i][:, k]
            cols.append(v)
            owners.append((i, k))
    if not cols:
        return {}, Y.copy()
    Xt = np.column_stack(cols)
    PX = model.precision.apply(Xt)
    y = Y.reshape(-1)
    A = Xt.T @ PX
    rhs = PX.T @ y
    beta_flat = np.linalg.solve(A, rhs)
    beta = {}
    for (i, k), val in zip(owners, beta_flat):
        beta.setdefault(i, []).append(val)
    beta = {i: np.asarray(v) for i, v in beta.items()}
    R = Y.copy()
    for i, bvec in beta.items():
        R[i - 1] -= X[i] @ bvec
    return beta, R


def _local_obj(knots, marginals, cross, cliques, seps, R):
    out = 0.0
    for K in cliques:
        out += subset_term(K, knots, marginals, cross, R, nugget=True)
    for S in seps:
        out -= subset_term(S, knots, marginals, cross, R, nugget=True)
    return out


def fit_mle(dataset, graph, knots=None, init=None, config=None,
            rule="simple_ag", delta_a=0.0, nu=0.5):
    """Maximum likelihood for the response model on aligned data."""
    config = config or MleConfig()
    ok, _ = is_decomposable(graph)
    if not ok:
        raise NotDecomposableError("fit_mle requires a decomposable graph")
    cs = perfect_clique_sequence(graph)
    if knots is None:
        knots = choose_knots(dataset)
    Y, X = aligned_arrays(dataset, knots)
    q = graph.q

    if init is not None:
        marginals, cross = init
        marginals = list(marginals)
    else:
        marginals = []
        for i in range(1, q + 1):
            s, p, t2, _ = _marginal_init(
                Y[i - 1], X.get(i), knots.locations, nu, config
            )
            marginals.append(MaternMarginal(sigma=s, phi=p, nu=nu, tau2=t2))
        cross = CrossSpec(
            b={e: 0.0 for e in graph.sorted_edges()},
            delta_a=delta_a,
            rule=rule,
            dim=knots.dim,
        )

    cliques_of = {i: [K for K in cs.cliques if i in K] for i in range(1, q + 1)}
    seps_of = {i: [S for S in cs.separators if S and i in S] for i in range(1, q + 1)}

    def model_at(marg, crs):
        return build(graph, knots, marg, crs, cs=cs, nugget=True)

    model = model_at(marginals, cross)
    beta, R = _gls_beta(model, Y, X)
    trace = [loglik_knots(model, R).total]

    def coord_update_marginal(i, attr, bounds):
        nonlocal marginals
        m = marginals[i - 1]
        cliques, seps = cliques_of[i], seps_of[i]

        def obj(val):
            cand = list(marginals)
            kw = {"sigma": m.sigma, "phi": m.phi, "nu": m.nu, "tau2": m.tau2}
            kw[attr] = val
            cand[i - 1] = MaternMarginal(**kw)
            try:
                return _local_obj(knots, cand, cross, cliques, seps, R)
            except (NotPositiveDefiniteError, ValueError):
                return -np.inf

        cur = getattr(m, attr)
        best, _ = golden_max(obj, *bounds, config.inner_evals, include=cur)
        kw = {"sigma": m.sigma, "phi": m.phi, "nu": m.nu, "tau2": m.tau2}
        kw[attr] = best
        marginals[i - 1] = MaternMarginal(**kw)

    def coord_update_b(i, j):
        nonlocal cross
        lo, hi = feasible_b_interval(
            marginals, cross, cs.cliques, i, j, config.b_box, config.b_margin
        )
        cliques = [K for K in cs.cliques if i in K and j in K]
        seps = [S for S in cs.separators if S and i in S and j in S]

        def obj(val):
            try:
                return _local_obj(
                    knots, marginals, cross.with_b(i, j, val), cliques, seps, R
                )
            except (NotPositiveDefiniteError, ValueError):
                return -np.inf

        cur = cross.b_value(i, j)
        best, _ = golden_max(obj, lo, hi, config.inner_evals, include=cur)
        cross = cross.with_b(i, j, best)

    converged = False
    it = 0
    for it in range(1, config.max_outer + 1):
        for i in range(1, q + 1):
            coord_update_marginal(i, "sigma", config.sigma_bounds)
            coord_update_marginal(i, "phi", config.phi_bounds)
            if config.estimate_nugget:
                coord_update_marginal(i, "tau2", config.tau2_bounds)
            if config.nu_policy == "estimated":
                coord_update_marginal(i, "nu", config.nu_bounds)
        for (i, j) in graph.sorted_edges():
            coord_update_b(i, j)
        model = model_at(marginals, cross)
        beta, R = _gls_beta(model, Y, X)
        total = loglik_knots(model, R).total
        trace.append(total)
        if trace[-1] - trace[-2] < config.tol and it >= 2:
            converged = True
            break

    se_b = {}
    if config.compute_se and graph.edges:
        se_b = _b_standard_errors(graph, knots, marginals, cross, cs, R)

    return MleResult(
        beta=beta,
        marginals=tuple(marginals),
        cross=cross,
        loglik=trace[-1],
        trace=tuple(trace),
        se_b=se_b,
        n_iter=it,
        converged=converged,
    )


def _b_standard_errors(graph, knots, marginals, cross, cs, R):
    """Asymptotic SEs from a central finite-difference Hessian in b."""
    edges = graph.sorted_edges()
    E = len(edges)

    def total_at(bvals):
        crs = cross
        for e, val in zip(edges, bvals):
            crs = crs.with_b(e[0], e[1], val)
        try:
            model = build(graph, knots, marginals, crs, cs=cs, nugget=True)
        except (NotPositiveDefiniteError, InvalidCrossSpecError):
            return -np.inf
        return loglik_knots(model, R).total

    b0 = np.array([cross.b_value(i, j) for (i, j) in edges])
    h = 1e-4 * np.maximum(1.0, np.abs(b0))
    H = np.empty((E, E))
    f0 = total_at(b0)
    for a in range(E):
        for c in range(a, E):
            if a == c:
                up = b0.copy(); up[a] += h[a]
                dn = b0.copy(); dn[a] -= h[a]
                H[a, a] = (total_at(up) - 2 * f0 + total_at(dn)) / h[a] ** 2
            else:
                pp = b0.copy(); pp[a] += h[a]; pp[c] += h[c]
                pm = b0.copy(); pm[a] += h[a]; pm[c] -= h[c]
                mp = b0.copy(); mp[a] -= h[a]; mp[c] += h[c]
                mm = b0.copy(); mm[a] -= h[a]; mm[c] -= h[c]
                H[a, c] = H[c, a] = (
                    total_at(pp) - total_at(pm) - total_at(mp) + total_at(mm)
                ) / (4 * h[a] * h[c])
    info = -H
    try:
        cov = np.linalg.inv(info)
        diag = np.clip(np.diag(cov), 0.0, np.inf)
        ses = np.sqrt(diag)
    except np.linalg.LinAlgError:
        ses = np.full(E, np.nan)
    return {e: float(s) for e, s in zip(edges, ses)}
