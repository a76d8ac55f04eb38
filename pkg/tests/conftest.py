import math

import numpy as np
import pytest

from gpstitch.graphs import VariableGraph, is_decomposable
from gpstitch.kernels import CrossSpec, MaternMarginal, b_from_sigma, cov_block


def gem_graph():
    """Path 1-2-3-4 plus vertex 5 adjacent to all of 1..4."""
    return VariableGraph(
        5, frozenset({(1, 2), (2, 3), (3, 4), (1, 5), (2, 5), (3, 5), (4, 5)})
    )


def path_graph(q):
    return VariableGraph(q, frozenset((i, i + 1) for i in range(1, q)))


def random_decomposable_graph(q, n_edges, rng, cap=None):
    """Random decomposable graph grown by chordality-preserving edge additions."""
    edges = set()
    pairs = [(i, j) for i in range(1, q + 1) for j in range(i + 1, q + 1)]
    for _ in range(6 * n_edges):
        if len(edges) >= n_edges:
            break
        i, j = pairs[rng.integers(0, len(pairs))]
        if (i, j) in edges:
            continue
        cand = VariableGraph(q, frozenset(edges | {(i, j)}))
        ok, _ = is_decomposable(cand)
        if not ok:
            continue
        if cap is not None:
            from gpstitch.graphs import perfect_clique_sequence

            if perfect_clique_sequence(cand).q_star > cap:
                continue
        edges.add((i, j))
    return VariableGraph(q, frozenset(edges))


def matern_marginals(q, rng, nus=(0.5, 1.5, 2.5), tau2=0.0):
    return [
        MaternMarginal(
            sigma=float(rng.uniform(0.5, 2.0)),
            phi=float(rng.uniform(0.5, 3.0)),
            nu=float(rng.choice(nus)),
            tau2=tau2,
        )
        for _ in range(q)
    ]


def pd_cross_spec(marginals, rng, delta_a=0.0, rule="simple_ag", shrink=0.9):
    """Random cross spec whose full b matrix is PD (hence clique-wise PD)."""
    q = len(marginals)
    spec0 = CrossSpec(b={}, delta_a=delta_a, rule=rule, dim=2)
    diag = np.array([b_from_sigma(m.sigma, m, spec0) for m in marginals])
    A = rng.standard_normal((q, q + 2))
    W = A @ A.T
    d = np.sqrt(np.diag(W))
    R = W / np.outer(d, d)
    b = {}
    for i in range(q):
        for j in range(i + 1, q):
            b[(i + 1, j + 1)] = shrink * R[i, j] * math.sqrt(diag[i] * diag[j])
    return CrossSpec(b=b, delta_a=delta_a, rule=rule, dim=2)


def dense_joint_cov(locs, marginals, spec, shift=None, nugget=False):
    """Full covariance over variables x locations, variable-major stacking."""
    q = len(marginals)
    n = len(locs)
    out = np.empty((q * n, q * n))
    for i in range(1, q + 1):
        for j in range(1, q + 1):
            out[(i - 1) * n : i * n, (j - 1) * n : j * n] = cov_block(
                i, j, locs, locs, marginals, spec, shift=shift, nugget=nugget
            )
    return out


def joint_block_provider(locs, marginals, spec, shift=None, nugget=False):
    """block_of callable for decomposable_select over the given knots."""

    def block_of(verts):
        verts = tuple(sorted(verts))
        k = len(verts)
        n = len(locs)
        out = np.empty((k * n, k * n))
        for a, i in enumerate(verts):
            for c, j in enumerate(verts):
                out[a * n : (a + 1) * n, c * n : (c + 1) * n] = cov_block(
                    i, j, locs, locs, marginals, spec, shift=shift, nugget=nugget
                )
        return out

    return block_of


@pytest.fixture
def gem():
    return gem_graph()


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
