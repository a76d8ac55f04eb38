"""Covariance selection on the knot set.

Given a covariance C over graph vertices (variable, knot) and a conditional
independence pattern, find the unique positive definite M that keeps the
prescribed entries of C (within-variable blocks and cross blocks on edges)
while zeroing the precision everywhere else.  Two routes:

* ips_select: iterative proportional scaling on the precision, valid for any
  clique cover (caller-supplied for non-decomposable patterns).
* decomposable_select: closed-form assembly of the precision from per-clique
  and per-separator blocks, exact in one pass, never forming the full matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import chol_psd, logdet_chol, solve_chol, solve_lower
from .errors import NoConvergenceError, NotDecomposableError
from .graphs import perfect_clique_sequence

__all__ = [
    "SelectionProblem",
    "SelectedCovariance",
    "SelectionResiduals",
    "ips_select",
    "decomposable_select",
    "ImplicitPrecision",
    "verify_selection",
]


@dataclass(frozen=True)
class SelectionProblem:
    """Inputs to covariance selection over the product vertices.

    C is symmetric PD with one row/column per product-graph vertex.  When the
    vertices come from strong_product(graph, n), pass n_locations=n so the
    residual report can split within-variable from cross-edge conditions.
    For a non-decomposable pattern supply ``cliques`` (a cover; every kept
    entry must lie inside some clique).
    """

    C: np.ndarray
    product_graph: object
    tol: float = 1e-10
    max_iter: int = 10_000
    n_locations: int = 1
    cliques: tuple = None

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("C must be square")
        if C.shape[0] != self.product_graph.q:
            raise ValueError(
                "C dimension %d does not match graph vertex count %d"
                % (C.shape[0], self.product_graph.q)
            )
        if self.tol <= 0 or self.max_iter <= 0:
            raise ValueError("tol and max_iter must be positive")
        object.__setattr__(self, "C", C)
        if self.cliques is not None:
            object.__setattr__(
                self, "cliques", tuple(frozenset(K) for K in self.cliques)
            )


@dataclass(frozen=True)
class SelectionResiduals:
    residual_a: float
    residual_b: float
    residual_c: float

    @property
    def max(self):
        return max(self.residual_a, self.residual_b, self.residual_c)


@dataclass(frozen=True)
class SelectedCovariance:
    M: np.ndarray
    residual_a: float
    residual_b: float
    residual_c: float
    n_sweeps: int = 0

    @property
    def residuals(self):
        return SelectionResiduals(self.residual_a, self.residual_b, self.residual_c)


def _clique_cover(prob):
    if prob.cliques is not None:
        return list(prob.cliques)
    ok, _ = _try_decomposable(prob.product_graph)
    if not ok:
        raise NotDecomposableError(
            "pattern is not decomposable; supply an explicit clique cover"
        )
    return list(perfect_clique_sequence(prob.product_graph).cliques)


def _try_decomposable(g):
    from .graphs import is_decomposable

    return is_decomposable(g)


def _masks(g, n_locations):
    """Boolean masks (same-variable, cross-edge, excluded) over vertex pairs."""
    N = g.q
    keep = np.eye(N, dtype=bool)
    for u, v in g.edges:
        keep[u - 1, v - 1] = keep[v - 1, u - 1] = True
    var = (np.arange(N) // n_locations)[:, None]
    same_var = var == var.T
    mask_a = keep & same_var
    mask_b = keep & ~same_var
    mask_c = ~keep
    return mask_a, mask_b, mask_c


def verify_selection(M, C, product_graph, n_locations=1):
    """Max violations of the three selection conditions (dense, small cases)."""
    M = np.asarray(M, dtype=float)
    C = np.asarray(C, dtype=float)
    mask_a, mask_b, mask_c = _masks(product_graph, n_locations)
    diff = np.abs(M - C)
    ra = float(diff[mask_a].max()) if mask_a.any() else 0.0
    rb = float(diff[mask_b].max()) if mask_b.any() else 0.0
    Theta = solve_chol(chol_psd(M, "selected covariance"), np.eye(M.shape[0]))
    rc = float(np.abs(Theta)[mask_c].max()) if mask_c.any() else 0.0
    return SelectionResiduals(ra, rb, rc)


def ips_select(prob, start=None):
    """Iterative proportional scaling in precision space.

    Cycles over the clique cover updating the within-clique precision block
    so the implied marginal matches C exactly; entries outside every clique
    are never written, so the zero pattern of the start is preserved.  The
    start must be PD with zeros outside the pattern; the default is the
    inverse diagonal of C.  Stops when the max entrywise change of the
    implied covariance over a full sweep drops below tol.
    """
    C = prob.C
    N = C.shape[0]
    chol_psd(C, "selection input")
    cliques = _clique_cover(prob)
    idx = [np.array(sorted(v - 1 for v in K), dtype=int) for K in cliques]
    Cinv_blocks = []
    for a in idx:
        L = chol_psd(C[np.ix_(a, a)], "clique block of C")
        Cinv_blocks.append(solve_chol(L, np.eye(len(a))))
    if start is None:
        Theta = np.diag(1.0 / np.diag(C))
    else:
        Theta = np.array(start, dtype=float)
    all_idx = np.arange(N)
    M_prev = None
    for sweep in range(1, prob.max_iter + 1):
        for a, Cinv in zip(idx, Cinv_blocks):
            b = np.setdiff1d(all_idx, a, assume_unique=True)
            if b.size == 0:
                Theta[np.ix_(a, a)] = Cinv
                continue
            Tab = Theta[np.ix_(a, b)]
            Lbb = chol_psd(Theta[np.ix_(b, b)], "precision complement block")
            S = Tab @ solve_chol(Lbb, Tab.T)
            # exact marginal match: (Theta^{-1})_aa becomes C_aa
            Theta[np.ix_(a, a)] = Cinv + 0.5 * (S + S.T)
        M = solve_chol(chol_psd(Theta, "precision iterate"), np.eye(N))
        M = 0.5 * (M + M.T)
        if M_prev is not None and float(np.abs(M - M_prev).max()) < prob.tol:
            res = verify_selection(M, C, prob.product_graph, prob.n_locations)
            return SelectedCovariance(
                M, res.residual_a, res.residual_b, res.residual_c, n_sweeps=sweep
            )
        M_prev = M
    raise NoConvergenceError(
        "IPS did not converge in %d sweeps (tol %g)" % (prob.max_iter, prob.tol)
    )


class ImplicitPrecision:
    """M(knots)^-1 represented by clique and separator factorizations.

    Assembled per the decomposable identity
        M^-1 = sum_K pad(C_K^-1) - sum_S pad(C_S^-1),
    where each block covers (clique variables) x (all knots).  Supports
    matrix-vector application, quadratic forms, and log-determinants without
    forming the full matrix; the largest factorization is one clique block.
    """

    def __init__(self, cs, n_locations, clique_factors, sep_factors, q):
        self.cs = cs
        self.n = n_locations
        self.q = q
        self.dim = q * n_locations
        self._cliques = clique_factors
        self._seps = sep_factors

    @property
    def clique_factors(self):
        """(index array, lower Cholesky) per clique block."""
        return self._cliques

    @property
    def sep_factors(self):
        return self._seps

    @staticmethod
    def _indices(verts, n):
        return np.concatenate(
            [np.arange((i - 1) * n, i * n) for i in sorted(verts)]
        ).astype(int)

    def apply(self, v):
        """M^{-1} v for v of shape (dim,) or (dim, R)."""
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        for a, L in self._cliques:
            out[a] += solve_chol(L, v[a])
        for a, L in self._seps:
            out[a] -= solve_chol(L, v[a])
        return out

    def quad_form(self, v):
        """v^T M^{-1} v (per column for batched v)."""
        v = np.asarray(v, dtype=float)
        out = 0.0
        for a, L in self._cliques:
            z = solve_lower(L, v[a])
            out = out + np.sum(z * z, axis=0)
        for a, L in self._seps:
            z = solve_lower(L, v[a])
            out = out - np.sum(z * z, axis=0)
        return float(out) if np.ndim(out) == 0 else out

    def cov_logdet(self):
        """log det M = sum_K log det C_K - sum_S log det C_S."""
        out = 0.0
        for _, L in self._cliques:
            out += logdet_chol(L)
        for _, L in self._seps:
            out -= logdet_chol(L)
        return out

    def precision_logdet(self):
        return -self.cov_logdet()

    def dense_precision(self):
        P = np.zeros((self.dim, self.dim))
        for a, L in self._cliques:
            P[np.ix_(a, a)] += solve_chol(L, np.eye(len(a)))
        for a, L in self._seps:
            P[np.ix_(a, a)] -= solve_chol(L, np.eye(len(a)))
        return 0.5 * (P + P.T)

    def dense_cov(self):
        P = self.dense_precision()
        M = solve_chol(chol_psd(P, "assembled precision"), np.eye(self.dim))
        return 0.5 * (M + M.T)


def decomposable_select(cs, n_locations, block_of, q=None):
    """Closed-form selection for a decomposable variable graph.

    block_of(verts) must return the PD covariance over the stacked
    (variable-major) indices for the sorted variable tuple ``verts`` crossed
    with all knots.  Empty separators are skipped.
    """
    if q is None:
        q = max(max(K) for K in cs.cliques)
    clique_factors = []
    for K in cs.cliques:
        verts = tuple(sorted(K))
        a = ImplicitPrecision._indices(verts, n_locations)
        L = chol_psd(np.asarray(block_of(verts), dtype=float), "clique block")
        clique_factors.append((a, L))
    sep_factors = []
    for S in cs.separators:
        if not S:
            continue
        verts = tuple(sorted(S))
        a = ImplicitPrecision._indices(verts, n_locations)
        L = chol_psd(np.asarray(block_of(verts), dtype=float), "separator block")
        sep_factors.append((a, L))
    return ImplicitPrecision(cs, n_locations, clique_factors, sep_factors, q)
