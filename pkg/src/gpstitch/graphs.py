"""Undirected-graph machinery for graphical Gaussian process models.

Decomposability testing, perfect clique sequences, junction trees (building,
counting, uniform sampling), strong products with a complete location graph,
greedy colorings, moralization, and builders for autoregressive / factor-model
conditional independence structures.

Vertices are labeled 1..q everywhere in this module; numeric array indexing
elsewhere in the package subtracts 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

from .errors import CycleDetectedError, NotDecomposableError

__all__ = [
    "VariableGraph",
    "CliqueSequence",
    "JunctionTree",
    "Coloring",
    "is_decomposable",
    "perfect_clique_sequence",
    "strong_product",
    "greedy_coloring",
    "edge_graph",
    "moralize",
    "ar_graph",
    "var_graph",
    "lmc_graph",
    "junction_tree",
    "count_junction_trees",
    "sample_junction_tree",
    "graph_to_json",
    "graph_from_json",
]


def _canonical_edges(edges):
    out = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise ValueError("self-loop (%d,%d) not allowed" % (i, j))
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


@dataclass(frozen=True)
class VariableGraph:
    """Undirected graph on vertices 1..q with canonical (min,max) edge pairs."""

    q: int
    edges: frozenset = frozenset()

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        edges = _canonical_edges(self.edges)
        for i, j in edges:
            if not (1 <= i <= self.q and 1 <= j <= self.q):
                raise ValueError("edge (%d,%d) outside 1..%d" % (i, j, self.q))
        object.__setattr__(self, "edges", edges)

    def has_edge(self, i, j):
        return (min(i, j), max(i, j)) in self.edges

    def neighbors(self, i):
        out = set()
        for a, b in self.edges:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return out

    def adjacency(self):
        """Neighbor sets for all vertices, as a dict."""
        adj = {v: set() for v in range(1, self.q + 1)}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    @property
    def n_edges(self):
        return len(self.edges)

    def sorted_edges(self):
        return sorted(self.edges)

    @staticmethod
    def complete(q):
        return VariableGraph(q, frozenset(combinations(range(1, q + 1), 2)))

    @staticmethod
    def empty(q):
        return VariableGraph(q)


@dataclass(frozen=True)
class CliqueSequence:
    """A perfect sequence of cliques with its separators.

    ``separators[m]`` belongs to ``cliques[m+1]`` (no separator for the first
    clique).  ``parents[m]`` is the index of an earlier clique containing
    ``separators[m]`` (running intersection witness).
    """

    cliques: tuple
    separators: tuple
    parents: tuple
    q_star: int
    p_star: int

    @property
    def p(self):
        return len(self.cliques)

    def cliques_containing(self, vertex):
        return [m for m, K in enumerate(self.cliques) if vertex in K]

    def separators_containing(self, vertex):
        return [m for m, S in enumerate(self.separators) if vertex in S]


@dataclass(frozen=True)
class JunctionTree:
    """Tree on clique indices; edge (a,b) carries separator cliques[a] & cliques[b]."""

    cliques: tuple
    tree_edges: tuple  # pairs of clique indices, canonical order

    def separator(self, a, b):
        return self.cliques[a] & self.cliques[b]

    def neighbors_of(self, a):
        out = []
        for u, v in self.tree_edges:
            if u == a:
                out.append(v)
            elif v == a:
                out.append(u)
        return out

    def satisfies_junction_property(self):
        """Exhaustive check: every clique on the path between two cliques
        contains their intersection."""
        p = len(self.cliques)
        adj = {i: [] for i in range(p)}
        for u, v in self.tree_edges:
            adj[u].append(v)
            adj[v].append(u)
        if p > 1 and len(self.tree_edges) != p - 1:
            return False
        for a in range(p):
            # BFS paths from a
            prev = {a: None}
            stack = [a]
            while stack:
                u = stack.pop()
                for v in adj[u]:
                    if v not in prev:
                        prev[v] = u
                        stack.append(v)
            if len(prev) != p:
                return False
            for b in range(a + 1, p):
                need = self.cliques[a] & self.cliques[b]
                u = b
                while u is not None:
                    if not need <= self.cliques[u]:
                        return False
                    u = prev[u]
        return True


@dataclass(frozen=True)
class Coloring:
    color: dict
    num_colors: int

    def classes(self):
        """Color classes as lists of vertices, ordered by color index."""
        out = [[] for _ in range(self.num_colors)]
        for v in sorted(self.color):
            out[self.color[v]].append(v)
        return out


def _mcs_order(g, tie_break=None):
    """Maximum cardinality search visit order.

    Ties are broken by smallest vertex label, or by position in ``tie_break``
    (a permutation of 1..q) when given.
    """
    if tie_break is None:
        priority = {v: v for v in range(1, g.q + 1)}
    else:
        priority = {v: r for r, v in enumerate(tie_break)}
    adj = g.adjacency()
    weight = {v: 0 for v in range(1, g.q + 1)}
    unvisited = set(weight)
    order = []
    while unvisited:
        best = min(unvisited, key=lambda v: (-weight[v], priority[v]))
        order.append(best)
        unvisited.remove(best)
        for u in adj[best]:
            if u in unvisited:
                weight[u] += 1
    return order


def is_decomposable(g, tie_break=None):
    """Chordality test via maximum cardinality search.

    Returns (True, elimination_order) or (False, None).  The elimination
    order is the reverse of the MCS visit order.
    """
    order = _mcs_order(g, tie_break)
    adj = g.adjacency()
    seen = set()
    for v in order:
        pred = adj[v] & seen
        for a, b in combinations(sorted(pred), 2):
            if b not in adj[a]:
                return False, None
        seen.add(v)
    return True, list(reversed(order))


def perfect_clique_sequence(g, tie_break=None):
    """Perfect clique sequence from an MCS ordering.

    Raises NotDecomposableError when the graph is not chordal.  Cliques are
    emitted in MCS discovery order (by the visit rank of their last vertex),
    which guarantees the running-intersection property.
    """
    order = _mcs_order(g, tie_break)
    rank = {v: r for r, v in enumerate(order)}
    adj = g.adjacency()
    seen = set()
    candidates = []
    for v in order:
        pred = adj[v] & seen
        for a, b in combinations(sorted(pred), 2):
            if b not in adj[a]:
                raise NotDecomposableError(
                    "graph is not decomposable: earlier neighbors of vertex "
                    "%d are not mutually adjacent" % v
                )
        seen.add(v)
        candidates.append(frozenset(pred | {v}))
    # keep maximal candidates, ordered by the visit rank of their last vertex
    maximal = []
    for c in candidates:
        if not any(c < other for other in candidates):
            if c not in maximal:
                maximal.append(c)
    maximal.sort(key=lambda c: max(rank[v] for v in c))

    separators = []
    parents = []
    running = set(maximal[0])
    for m in range(1, len(maximal)):
        sep = frozenset(running & maximal[m])
        parent = None
        for h in range(m):
            if sep <= maximal[h]:
                parent = h
                break
        if parent is None:
            raise NotDecomposableError("running intersection property failed")
        separators.append(sep)
        parents.append(parent)
        running |= maximal[m]

    counts = {v: 0 for v in range(1, g.q + 1)}
    for c in maximal:
        for v in c:
            counts[v] += 1
    return CliqueSequence(
        cliques=tuple(maximal),
        separators=tuple(separators),
        parents=tuple(parents),
        q_star=max(len(c) for c in maximal),
        p_star=max(counts.values()),
    )


def strong_product(g, n):
    """Product of g with the complete graph on n locations.

    Vertex (i, l) maps to label (i-1)*n + l for i in 1..q, l in 1..n.
    Edge ((i,l),(i',l')) present iff (i = i' and l != l') or (i,i') in E.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    edges = set()
    for i in range(1, g.q + 1):
        base = (i - 1) * n
        for l, m in combinations(range(1, n + 1), 2):
            edges.add((base + l, base + m))
    for i, j in g.edges:
        bi, bj = (i - 1) * n, (j - 1) * n
        for l in range(1, n + 1):
            for m in range(1, n + 1):
                edges.add((bi + l, bj + m))
    return VariableGraph(g.q * n, frozenset(edges))


def greedy_coloring(g):
    """First-fit coloring in vertex order 1..q; deterministic."""
    adj = g.adjacency()
    color = {}
    for v in range(1, g.q + 1):
        used = {color[u] for u in adj[v] if u in color}
        c = 0
        while c in used:
            c += 1
        color[v] = c
    return Coloring(color=color, num_colors=max(color.values()) + 1 if color else 0)


def edge_graph(g):
    """Graph on the edges of g: two edges are adjacent iff the union of their
    endpoints lies inside some clique.

    Returns (edge_list, VariableGraph) where edge k of the sorted edge_list is
    vertex k+1 of the returned graph.
    """
    cs = perfect_clique_sequence(g)
    edge_list = g.sorted_edges()
    meta_edges = set()
    for a, b in combinations(range(len(edge_list)), 2):
        union = set(edge_list[a]) | set(edge_list[b])
        if any(union <= K for K in cs.cliques):
            meta_edges.add((a + 1, b + 1))
    return edge_list, VariableGraph(max(len(edge_list), 1), frozenset(meta_edges))


def moralize(dag_edges, n_vertices):
    """Moral graph of a DAG: undirected skeleton plus marriages of co-parents.

    dag_edges are (parent, child) pairs on vertices 1..n_vertices.
    """
    parents = {v: set() for v in range(1, n_vertices + 1)}
    children = {v: set() for v in range(1, n_vertices + 1)}
    for a, b in dag_edges:
        if a == b:
            raise CycleDetectedError("self-loop %d->%d" % (a, b))
        parents[b].add(a)
        children[a].add(b)
    # Kahn's algorithm to reject cycles
    indeg = {v: len(parents[v]) for v in parents}
    queue = [v for v in indeg if indeg[v] == 0]
    seen = 0
    while queue:
        v = queue.pop()
        seen += 1
        for u in children[v]:
            indeg[u] -= 1
            if indeg[u] == 0:
                queue.append(u)
    if seen != n_vertices:
        raise CycleDetectedError("directed graph contains a cycle")

    edges = {(min(a, b), max(a, b)) for a, b in dag_edges}
    for v in parents:
        for a, b in combinations(sorted(parents[v]), 2):
            edges.add((a, b))
    return VariableGraph(n_vertices, frozenset(edges))


def ar_graph(T, order):
    """Moralized graph of an autoregressive lag structure on T time points."""
    if T < 1 or order < 0:
        raise ValueError("need T >= 1 and order >= 0")
    dag = []
    for t in range(2, T + 1):
        for k in range(1, order + 1):
            if t - k >= 1:
                dag.append((t - k, t))
    return moralize(dag, T)


def var_graph(q, T, lag_edges):
    """Moralized graph of a vector-autoregression lag DAG.

    lag_edges are triples (src_var, dst_var, lag >= 1): variable src at time
    t-lag points at variable dst at time t, for every valid t.  Vertex (i, t)
    maps to label (t-1)*q + i.
    """
    dag = []
    for i, j, lag in lag_edges:
        if lag < 1:
            raise ValueError("lags must be >= 1")
        for t in range(1 + lag, T + 1):
            src = (t - lag - 1) * q + i
            dst = (t - 1) * q + j
            dag.append((src, dst))
    return moralize(dag, q * T)


def lmc_graph(q, r):
    """Conditional-independence graph of a q-variable, r-factor coregionalization:
    latent vertices q+1..q+r mutually complete, every observed vertex adjacent
    to every latent vertex, no observed-observed edges."""
    if q < 1 or r < 1:
        raise ValueError("need q >= 1 and r >= 1")
    edges = set()
    latents = range(q + 1, q + r + 1)
    for a, b in combinations(latents, 2):
        edges.add((a, b))
    for i in range(1, q + 1):
        for j in latents:
            edges.add((i, j))
    return VariableGraph(q + r, frozenset(edges))


def junction_tree(cs):
    """Junction tree from a perfect clique sequence: each clique links to an
    earlier clique containing its separator."""
    edges = []
    for m in range(1, cs.p):
        edges.append((cs.parents[m - 1], m))
    return JunctionTree(cliques=cs.cliques, tree_edges=tuple(edges))


# -- junction-tree counting and uniform sampling ------------------------------
#
# A spanning tree of the complete clique graph (edge weight = separator size
# |C_a & C_b|) is a junction tree exactly when it has maximum total weight.
# Maximum-weight spanning trees decompose by weight level: processing weights
# in decreasing order, every maximum tree restricted to one level forms a
# spanning tree of each connected component of that level's multigraph on the
# contracted vertices, and the per-component choices are free and independent.
# Counting multiplies matrix-tree determinants; uniform sampling runs Wilson's
# algorithm per component.


def _int_det(mat):
    """Exact integer determinant (fraction-free Bareiss elimination)."""
    a = [row[:] for row in mat]
    n = len(a)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for r in range(k + 1, n):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def _spanning_tree_count(nodes, multi_edges):
    """Number of spanning trees of a multigraph (matrix-tree theorem)."""
    idx = {u: i for i, u in enumerate(nodes)}
    n = len(nodes)
    if n == 1:
        return 1
    lap = [[0] * n for _ in range(n)]
    for u, v in multi_edges:
        a, b = idx[u], idx[v]
        lap[a][a] += 1
        lap[b][b] += 1
        lap[a][b] -= 1
        lap[b][a] -= 1
    minor = [row[1:] for row in lap[1:]]
    return _int_det(minor)


def _components(nodes, edges):
    adj = {u: set() for u in nodes}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    seen = set()
    comps = []
    for u in nodes:
        if u in seen:
            continue
        comp = {u}
        stack = [u]
        seen.add(u)
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    comp.add(y)
                    stack.append(y)
        comps.append(comp)
    return comps


def _weight_levels(cliques):
    """Group complete-clique-graph edges by separator size, descending."""
    levels = {}
    p = len(cliques)
    for a, b in combinations(range(p), 2):
        w = len(cliques[a] & cliques[b])
        levels.setdefault(w, []).append((a, b))
    return sorted(levels.items(), key=lambda kv: -kv[0])


def count_junction_trees(g):
    """Number of junction trees of a decomposable graph."""
    cs = perfect_clique_sequence(g)
    cliques = cs.cliques
    p = len(cliques)
    if p == 1:
        return 1
    group = {a: a for a in range(p)}  # contraction map: clique -> super-node
    total = 1
    for _, level_edges in _weight_levels(cliques):
        contracted = [
            (group[a], group[b]) for a, b in level_edges if group[a] != group[b]
        ]
        if not contracted:
            continue
        touched = sorted({u for e in contracted for u in e})
        for comp in _components(touched, contracted):
            comp_edges = [e for e in contracted if e[0] in comp]
            comp_nodes = sorted(comp)
            total *= _spanning_tree_count(comp_nodes, comp_edges)
            root = comp_nodes[0]
            for a in range(p):
                if group[a] in comp:
                    group[a] = root
    return total


def _wilson_spanning_tree(nodes, multi_edges, rng):
    """Uniform spanning tree of a connected multigraph via loop-erased walks.

    multi_edges entries are (u, v, tag); the returned tree is a list of tags.
    Parallel edges must carry distinct tags.
    """
    incident = {u: [] for u in nodes}
    for u, v, tag in multi_edges:
        incident[u].append((v, tag))
        incident[v].append((u, tag))
    nodes = sorted(nodes)
    in_tree = {nodes[0]}
    tree_tags = []
    for start in nodes[1:]:
        if start in in_tree:
            continue
        # random walk with loop erasure
        path = [start]
        path_edges = []
        u = start
        while u not in in_tree:
            nbrs = incident[u]
            v, tag = nbrs[rng.integers(0, len(nbrs))]
            if v in path:
                k = path.index(v)
                path = path[: k + 1]
                path_edges = path_edges[:k]
            else:
                path.append(v)
                path_edges.append(tag)
            u = v
        in_tree.update(path)
        tree_tags.extend(path_edges)
    return tree_tags


def sample_junction_tree(g, rng):
    """Draw a junction tree of g uniformly at random.

    Decomposes by separator-size level like count_junction_trees and samples a
    uniform spanning tree of each level component with Wilson's algorithm.
    """
    cs = perfect_clique_sequence(g)
    cliques = cs.cliques
    p = len(cliques)
    if p == 1:
        return JunctionTree(cliques=cliques, tree_edges=())
    group = {a: a for a in range(p)}
    chosen = []
    for _, level_edges in _weight_levels(cliques):
        contracted = [
            (group[a], group[b], (a, b))
            for a, b in level_edges
            if group[a] != group[b]
        ]
        if not contracted:
            continue
        touched = sorted({u for u, v, _ in contracted} | {v for u, v, _ in contracted})
        for comp in _components(touched, [(u, v) for u, v, _ in contracted]):
            comp_edges = [e for e in contracted if e[0] in comp]
            comp_nodes = sorted(comp)
            if len(comp_nodes) > 1:
                chosen.extend(_wilson_spanning_tree(comp_nodes, comp_edges, rng))
            root = comp_nodes[0]
            for a in range(p):
                if group[a] in comp:
                    group[a] = root
    return JunctionTree(cliques=cliques, tree_edges=tuple(sorted(chosen)))


def enumerate_junction_trees(g):
    """Brute-force enumeration of junction trees (test oracle; small p only)."""
    cs = perfect_clique_sequence(g)
    cliques = cs.cliques
    p = len(cliques)
    if p == 1:
        return [JunctionTree(cliques=cliques, tree_edges=())]
    all_pairs = list(combinations(range(p), 2))
    out = []
    for subset in combinations(all_pairs, p - 1):
        jt = JunctionTree(cliques=cliques, tree_edges=tuple(sorted(subset)))
        if jt.satisfies_junction_property():
            out.append(jt)
    return out


def graph_to_json(g):
    return json.dumps(
        {"q": g.q, "edges": [list(e) for e in g.sorted_edges()]},
        sort_keys=True,
        separators=(",", ":"),
    )


def graph_from_json(text):
    obj = json.loads(text) if isinstance(text, str) else text
    return VariableGraph(int(obj["q"]), frozenset(tuple(e) for e in obj["edges"]))
