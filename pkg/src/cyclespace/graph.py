"""Cycle-space machinery for oriented multigraphs.

Edges keep the branch orientation of the case (``from -> to``); parallel
branches are distinct edges, so a pair of them forms a 2-cycle.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .case_io import GridCase

__all__ = [
    "OrientedGraph",
    "Cycle",
    "CycleBasis",
    "build_graph",
    "cycle_from_edges",
    "fundamental_cycle_basis",
    "random_spanning_tree",
    "minimum_cycle_basis",
    "signed_indicator",
    "unsigned_indicator",
    "indicator_matrix",
    "gf2_rank",
    "topology_null_space",
    "prune_leaves",
    "basis_to_json",
    "basis_from_json",
]


@dataclass(frozen=True)
class OrientedGraph:
    n_vertices: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))
        for a, b in self.edges:
            if not (0 <= a < self.n_vertices and 0 <= b < self.n_vertices):
                raise ValueError(f"edge ({a}, {b}) references a vertex outside [0, {self.n_vertices})")
            if a == b:
                raise ValueError("self-loops are not supported")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per vertex, ``(edge id, neighbour)`` pairs in increasing edge id."""
        adj = [[] for _ in range(self.n_vertices)]
        for e, (a, b) in enumerate(self.edges):
            adj[a].append((e, b))
            adj[b].append((e, a))
        return adj

    def n_components(self) -> int:
        seen = [False] * self.n_vertices
        adj = self.adjacency()
        count = 0
        for s in range(self.n_vertices):
            if seen[s]:
                continue
            count += 1
            seen[s] = True
            stack = [s]
            while stack:
                u = stack.pop()
                for _, w in adj[u]:
                    if not seen[w]:
                        seen[w] = True
                        stack.append(w)
        return count

    def cycle_rank(self) -> int:
        return self.n_edges - self.n_vertices + self.n_components()

    def without_edges(self, removed) -> tuple["OrientedGraph", list[int]]:
        """Drop edges, keep vertices. Returns the graph and original ids of kept edges."""
        removed = set(removed)
        kept = [e for e in range(self.n_edges) if e not in removed]
        return OrientedGraph(self.n_vertices, [self.edges[e] for e in kept]), kept


@dataclass(frozen=True)
class Cycle:
    """A simple cycle as an ordered edge walk with per-edge orientation signs."""

    edge_ids: tuple[int, ...]
    signs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "edge_ids", tuple(int(e) for e in self.edge_ids))
        object.__setattr__(self, "signs", tuple(int(s) for s in self.signs))
        if len(self.edge_ids) != len(self.signs):
            raise ValueError("edge_ids and signs differ in length")
        if len(self.edge_ids) < 2 or len(set(self.edge_ids)) != len(self.edge_ids):
            raise ValueError("a cycle needs at least two distinct edges")
        if any(s not in (1, -1) for s in self.signs):
            raise ValueError("signs must be +1 or -1")

    def __len__(self):
        return len(self.edge_ids)

    @property
    def edge_set(self) -> frozenset:
        return frozenset(self.edge_ids)

    def sign_map(self) -> dict[int, int]:
        return dict(zip(self.edge_ids, self.signs))

    def remap(self, mapping) -> "Cycle":
        return Cycle([mapping[e] for e in self.edge_ids], self.signs)


@dataclass(frozen=True)
class CycleBasis:
    cycles: tuple[Cycle, ...]
    kind: str
    n_edges: int

    def __post_init__(self):
        object.__setattr__(self, "cycles", tuple(self.cycles))

    def __len__(self):
        return len(self.cycles)

    def __iter__(self):
        return iter(self.cycles)

    def __getitem__(self, i):
        return self.cycles[i]

    @property
    def lengths(self) -> list[int]:
        return [len(c) for c in self.cycles]

    @property
    def total_length(self) -> int:
        return sum(self.lengths)


def build_graph(case: GridCase) -> OrientedGraph:
    idx = case.bus_index()
    return OrientedGraph(case.n_buses, [(idx[br.from_bus], idx[br.to_bus]) for br in case.branches])


def cycle_from_edges(g: OrientedGraph, edge_ids, first: int | None = None) -> Cycle:
    """Order an edge set forming a simple cycle into a signed walk.

    The walk starts on ``first`` (default: lowest edge id) in that edge's
    graph orientation, so that edge always carries sign +1.
    """
    edge_ids = set(int(e) for e in edge_ids)
    if first is None:
        first = min(edge_ids)
    incident = {}
    for e in edge_ids:
        a, b = g.edges[e]
        incident.setdefault(a, []).append(e)
        incident.setdefault(b, []).append(e)
    if any(len(v) != 2 for v in incident.values()):
        raise ValueError(f"edges {sorted(edge_ids)} do not form a simple cycle")
    start, cur = g.edges[first]
    order, signs = [first], [1]
    prev = first
    while cur != start:
        e = next(x for x in incident[cur] if x != prev)
        a, b = g.edges[e]
        if a == cur:
            signs.append(1)
            cur = b
        else:
            signs.append(-1)
            cur = a
        order.append(e)
        prev = e
    if len(order) != len(edge_ids):
        raise ValueError(f"edges {sorted(edge_ids)} form more than one cycle")
    return Cycle(order, signs)


# ------------------------------------------------------- fundamental bases


def random_spanning_tree(g: OrientedGraph, rng: np.random.Generator) -> set[int]:
    """Edge ids of a spanning forest built by Kruskal over a random edge order."""
    parent = list(range(g.n_vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = set()
    for e in rng.permutation(g.n_edges):
        a, b = g.edges[e]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.add(int(e))
    return tree


def _tree_structure(g: OrientedGraph, tree_edges):
    """BFS forest over the given edges: parent, parent edge and depth per vertex."""
    adj = [[] for _ in range(g.n_vertices)]
    for e in sorted(tree_edges):
        a, b = g.edges[e]
        adj[a].append((e, b))
        adj[b].append((e, a))
    parent = [-1] * g.n_vertices
    parent_edge = [-1] * g.n_vertices
    depth = [-1] * g.n_vertices
    for root in range(g.n_vertices):
        if depth[root] >= 0:
            continue
        depth[root] = 0
        q = deque([root])
        while q:
            u = q.popleft()
            for e, w in adj[u]:
                if depth[w] < 0:
                    depth[w] = depth[u] + 1
                    parent[w] = u
                    parent_edge[w] = e
                    q.append(w)
    return parent, parent_edge, depth


def fundamental_cycle_basis(g: OrientedGraph, tree_edges=None) -> CycleBasis:
    """Fundamental cycles of a spanning forest (BFS from vertex 0 by default).

    Each non-tree edge closes one cycle; the walk starts on that edge, which
    therefore carries sign +1.
    """
    if tree_edges is None:
        parent, parent_edge, depth = _tree_structure(g, range(g.n_edges))
        tree_edges = {e for e in parent_edge if e >= 0}
    else:
        tree_edges = set(tree_edges)
        parent, parent_edge, depth = _tree_structure(g, tree_edges)

    cycles = []
    for e in range(g.n_edges):
        if e in tree_edges:
            continue
        u, v = g.edges[e]
        # walk u -> v on e, then v back to u through the tree
        a, b = v, u
        up_a, up_b = [], []
        while depth[a] > depth[b]:
            up_a.append(parent_edge[a])
            a = parent[a]
        while depth[b] > depth[a]:
            up_b.append(parent_edge[b])
            b = parent[b]
        while a != b:
            up_a.append(parent_edge[a])
            up_b.append(parent_edge[b])
            a, b = parent[a], parent[b]
        cycles.append(cycle_from_edges(g, [e, *up_a, *up_b], first=e))
    return CycleBasis(cycles, "fundamental", g.n_edges)


# ----------------------------------------------------- minimum cycle basis


def _shortest_path_tree(g, adj, weights, source):
    """Dijkstra with ties broken by the lexicographically smallest edge-id path."""
    inf = float("inf")
    dist = [inf] * g.n_vertices
    path = [None] * g.n_vertices
    dist[source] = 0.0
    path[source] = ()
    heap = [(0.0, (), source)]
    done = [False] * g.n_vertices
    while heap:
        d, p, u = heapq.heappop(heap)
        if done[u] or (d, p) != (dist[u], path[u]):
            continue
        done[u] = True
        for e, w in adj[u]:
            if done[w]:
                continue
            nd, np_ = d + weights[e], p + (e,)
            if (nd, np_) < (dist[w], path[w] if path[w] is not None else ()) or path[w] is None:
                dist[w], path[w] = nd, np_
                heapq.heappush(heap, (nd, np_, w))
    return dist, path


def _path_vertices(g, source, path):
    verts = [source]
    cur = source
    for e in path:
        a, b = g.edges[e]
        cur = b if a == cur else a
        verts.append(cur)
    return verts


def minimum_cycle_basis(g: OrientedGraph, weights=None) -> CycleBasis:
    """Minimum-weight cycle basis via Horton's candidate set.

    Candidates are ``SP(v, a) + (a, b) + SP(b, v)`` for every vertex ``v`` and
    edge ``(a, b)``; they are scanned in increasing weight and kept when
    independent over GF(2) of the cycles already chosen.
    """
    m = g.n_edges
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (m,) or np.any(w < 0):
        raise ValueError("weights must be a nonnegative per-edge vector")
    target = g.cycle_rank()
    if target == 0:
        return CycleBasis([], "minimum", m)

    adj = g.adjacency()
    candidates = {}
    for v in range(g.n_vertices):
        dist, path = _shortest_path_tree(g, adj, w, v)
        vsets = {}
        for e, (a, b) in enumerate(g.edges):
            if path[a] is None or path[b] is None:
                continue
            pa, pb = path[a], path[b]
            if e in pa or e in pb:
                continue
            if a not in vsets:
                vsets[a] = set(_path_vertices(g, v, pa))
            if b not in vsets:
                vsets[b] = set(_path_vertices(g, v, pb))
            if vsets[a] & vsets[b] != {v}:
                continue
            key = frozenset(pa) | frozenset(pb) | {e}
            if len(key) != len(pa) + len(pb) + 1 or key in candidates:
                continue
            candidates[key] = dist[a] + dist[b] + w[e]

    ordered = sorted(candidates.items(), key=lambda kv: (kv[1], len(kv[0]), sorted(kv[0])))
    pivots = {}  # leading bit -> reduced row
    chosen = []
    for edges, _ in ordered:
        vec = 0
        for e in edges:
            vec |= 1 << e
        while vec:
            top = vec.bit_length() - 1
            if top not in pivots:
                pivots[top] = vec
                chosen.append(edges)
                break
            vec ^= pivots[top]
        if len(chosen) == target:
            break
    if len(chosen) != target:
        raise RuntimeError("Horton candidate set did not span the cycle space")
    return CycleBasis([cycle_from_edges(g, c) for c in chosen], "minimum", m)


# ------------------------------------------------------ indicator vectors


def signed_indicator(c: Cycle, m: int) -> np.ndarray:
    vec = np.zeros(m)
    for e, s in zip(c.edge_ids, c.signs):
        vec[e] = s
    return vec


def unsigned_indicator(c: Cycle, m: int) -> np.ndarray:
    return np.abs(signed_indicator(c, m))


def indicator_matrix(basis: CycleBasis, signed: bool = True) -> np.ndarray:
    """m x |basis| matrix of (signed or unsigned) indicators as columns."""
    f = signed_indicator if signed else unsigned_indicator
    if len(basis) == 0:
        return np.zeros((basis.n_edges, 0))
    return np.column_stack([f(c, basis.n_edges) for c in basis])


def gf2_rank(matrix) -> int:
    """Rank over GF(2) of a 0/1 matrix (rows or columns, rank is the same)."""
    a = (np.asarray(matrix) % 2).astype(bool)
    rows = [int("".join("1" if x else "0" for x in r), 2) if r.size else 0 for r in a]
    pivots = {}
    rank = 0
    for vec in rows:
        while vec:
            top = vec.bit_length() - 1
            if top not in pivots:
                pivots[top] = vec
                rank += 1
                break
            vec ^= pivots[top]
    return rank


def topology_null_space(case: GridCase, basis: CycleBasis) -> np.ndarray:
    """Unit columns ``zeta_c * x`` spanning the null space of ``H^T``."""
    x = case.reactances
    if len(basis) == 0:
        return np.zeros((case.n_branches, 0))
    cols = indicator_matrix(basis) * x[:, None]
    return cols / np.linalg.norm(cols, axis=0)


def _on_some_cycle(g: OrientedGraph) -> list[bool]:
    # edge e lies on a cycle iff its endpoints stay connected without it
    adj = g.adjacency()
    out = []
    for e, (a, b) in enumerate(g.edges):
        seen = {a}
        stack = [a]
        found = False
        while stack and not found:
            u = stack.pop()
            for f, w in adj[u]:
                if f == e or w in seen:
                    continue
                if w == b:
                    found = True
                    break
                seen.add(w)
                stack.append(w)
        out.append(found)
    return out


def prune_leaves(g: OrientedGraph) -> tuple[OrientedGraph, list[int]]:
    """Drop branches that lie on no cycle (pendant trees and bridges).

    Returns the reindexed subgraph and the original ids of the kept edges.
    Vertices left without edges are removed.
    """
    kept = [e for e, ok in enumerate(_on_some_cycle(g)) if ok]
    verts = sorted({v for e in kept for v in g.edges[e]})
    vmap = {v: i for i, v in enumerate(verts)}
    sub = OrientedGraph(len(verts), [(vmap[g.edges[e][0]], vmap[g.edges[e][1]]) for e in kept])
    return sub, kept


# ------------------------------------------------------------------ export


def basis_to_json(basis: CycleBasis) -> str:
    return json.dumps(
        {
            "kind": basis.kind,
            "n_edges": basis.n_edges,
            "cycles": [
                {"edge_ids": list(c.edge_ids), "signs": list(c.signs), "length": len(c)}
                for c in basis
            ],
        },
        indent=2,
    )


def basis_from_json(text: str) -> CycleBasis:
    data = json.loads(text)
    return CycleBasis(
        [Cycle(c["edge_ids"], c["signs"]) for c in data["cycles"]], data["kind"], int(data["n_edges"])
    )
