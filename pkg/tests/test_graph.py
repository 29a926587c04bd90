import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyclespace.case_io import load_case
from cyclespace.dcsim import build_h, isotropic_states
from cyclespace.graph import (
    Cycle,
    CycleBasis,
    OrientedGraph,
    basis_from_json,
    basis_to_json,
    build_graph,
    fundamental_cycle_basis,
    gf2_rank,
    indicator_matrix,
    minimum_cycle_basis,
    prune_leaves,
    random_spanning_tree,
    signed_indicator,
    topology_null_space,
    unsigned_indicator,
)
from conftest import make_case


def incidence(g):
    A = np.zeros((g.n_vertices, g.n_edges))
    for e, (a, b) in enumerate(g.edges):
        A[a, e] += 1
        A[b, e] -= 1
    return A


def check_basis(g, basis):
    assert len(basis) == g.cycle_rank()
    if len(basis):
        assert gf2_rank(indicator_matrix(basis, signed=False)) == len(basis)
        # every signed indicator is a circulation
        np.testing.assert_array_equal(incidence(g) @ indicator_matrix(basis), 0)


def test_triangle_graph(triangle):
    g = build_graph(triangle)
    assert (g.n_vertices, g.n_edges) == (3, 3)
    for basis in (fundamental_cycle_basis(g), minimum_cycle_basis(g)):
        assert basis.lengths == [3]
        check_basis(g, basis)


def test_path_graph_has_empty_basis():
    g = build_graph(make_case([(1, 2), (2, 3), (3, 4)]))
    assert len(fundamental_cycle_basis(g)) == 0
    assert len(minimum_cycle_basis(g)) == 0


@pytest.mark.parametrize("name", ["ieee14", "ieee30", "ieee57", "ieee118"])
def test_builtin_bases(name):
    g = build_graph(load_case(name))
    for basis in (fundamental_cycle_basis(g), minimum_cycle_basis(g)):
        check_basis(g, basis)


def test_ieee14_basis_size(ieee14):
    g = build_graph(ieee14)
    assert (g.n_vertices, g.n_edges) == (14, 20)
    assert len(fundamental_cycle_basis(g)) == 7


@pytest.mark.parametrize("name", ["ieee14", "ieee30", "ieee57", "ieee118"])
def test_mcb_total_matches_networkx(name):
    case = load_case(name)
    g = build_graph(case)
    simple = nx.Graph()
    simple.add_nodes_from(range(g.n_vertices))
    simple.add_edges_from(g.edges)
    extra = g.n_edges - simple.number_of_edges()  # each parallel duplicate adds a 2-cycle
    expected = sum(len(c) for c in nx.minimum_cycle_basis(simple)) + 2 * extra
    assert minimum_cycle_basis(g).total_length == expected


def _all_cycle_edge_sets(g):
    out = []
    for k in range(2, g.n_edges + 1):
        for sub in itertools.combinations(range(g.n_edges), k):
            deg = np.zeros(g.n_vertices, int)
            for e in sub:
                for v in g.edges[e]:
                    deg[v] += 1
            if np.any((deg != 0) & (deg != 2)):
                continue
            h = nx.MultiGraph()
            h.add_edges_from(g.edges[e] for e in sub)
            if nx.is_connected(h):
                out.append(sub)
    return out


def _brute_force_mcb_length(g):
    cycles = _all_cycle_edge_sets(g)
    best = None
    for combo in itertools.combinations(cycles, g.cycle_rank()):
        M = np.zeros((len(combo), g.n_edges), int)
        for i, c in enumerate(combo):
            M[i, list(c)] = 1
        if gf2_rank(M) == len(combo):
            tot = sum(len(c) for c in combo)
            best = tot if best is None else min(best, tot)
    return best


def test_square_with_diagonal_picks_two_triangles():
    g = OrientedGraph(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)])
    mcb = minimum_cycle_basis(g)
    assert sorted(mcb.lengths) == [3, 3]
    assert mcb.total_length == _brute_force_mcb_length(g) == 6


def test_parallel_pair_gives_two_cycle():
    g = build_graph(make_case([(1, 2), (1, 2), (2, 3), (3, 4)]))
    mcb = minimum_cycle_basis(g)
    assert mcb.lengths == [2]
    assert mcb[0].edge_set == {0, 1}
    assert mcb[0].signs == (1, -1)


def test_mcb_beats_random_fundamental_bases(ieee14):
    g = build_graph(ieee14)
    mcb = minimum_cycle_basis(g).total_length
    rng = np.random.default_rng(0)
    for _ in range(100):
        fb = fundamental_cycle_basis(g, random_spanning_tree(g, rng))
        check_basis(g, fb)
        assert mcb <= fb.total_length


def test_weighted_mcb_matches_networkx(rng):
    g = build_graph(load_case("ieee30"))
    w = rng.uniform(0.5, 2.0, g.n_edges)
    simple = nx.Graph()
    for e, (a, b) in enumerate(g.edges):
        simple.add_edge(a, b, weight=w[e])
    ref = nx.minimum_cycle_basis(simple, weight="weight")

    def cyc_weight(nodes):
        cyc = nx.cycle_graph(nodes)
        return sum(simple[a][b]["weight"] for a, b in cyc.edges)

    ours = minimum_cycle_basis(g, w)
    ours_w = sum(w[list(c.edge_ids)].sum() for c in ours)
    assert ours_w == pytest.approx(sum(cyc_weight(c) for c in ref), rel=1e-12)


def test_signed_indicator():
    g = OrientedGraph(3, [(0, 1), (1, 2), (2, 0)])
    c = minimum_cycle_basis(g)[0]
    np.testing.assert_array_equal(signed_indicator(c, 4), [1, 1, 1, 0])
    flipped = OrientedGraph(3, [(0, 1), (1, 2), (0, 2)])
    c = minimum_cycle_basis(flipped)[0]
    np.testing.assert_array_equal(signed_indicator(c, 3), [1, 1, -1])
    np.testing.assert_array_equal(unsigned_indicator(c, 3), [1, 1, 1])


def test_cycle_starts_on_lowest_edge(ieee30):
    for c in minimum_cycle_basis(build_graph(ieee30)):
        assert c.edge_ids[0] == min(c.edge_ids)
        assert c.signs[0] == 1


def test_fundamental_non_tree_edge_positive(ieee14):
    g = build_graph(ieee14)
    tree = random_spanning_tree(g, np.random.default_rng(4))
    for c in fundamental_cycle_basis(g, tree):
        assert c.edge_ids[0] not in tree and c.signs[0] == 1


def test_triangle_null_space(triangle):
    basis = minimum_cycle_basis(build_graph(triangle))
    N = topology_null_space(triangle, basis)
    np.testing.assert_allclose(N[:, 0], np.array([1, 2, 3]) / np.sqrt(14), atol=1e-15)


@pytest.mark.parametrize("name", ["ieee14", "ieee30", "ieee57", "ieee118"])
def test_kvl_on_noise_free_flows(name):
    case = load_case(name)
    h = build_h(case)
    clean = h.matrix @ isotropic_states(h.n_states, 50, seed=1)
    for basis in (minimum_cycle_basis(build_graph(case)), fundamental_cycle_basis(build_graph(case))):
        N = topology_null_space(case, basis)
        np.testing.assert_allclose(N.T @ h.matrix, 0, atol=1e-10)
        assert np.max(np.abs(N.T @ clean)) <= 1e-10 * np.abs(clean).max()
        np.testing.assert_allclose(np.linalg.norm(N, axis=0), 1.0)


def test_tree_null_space_empty():
    case = make_case([(1, 2), (2, 3)])
    assert topology_null_space(case, minimum_cycle_basis(build_graph(case))).shape == (2, 0)


def test_prune_leaves():
    g = OrientedGraph(4, [(0, 1), (1, 2), (2, 0), (2, 3)])
    sub, kept = prune_leaves(g)
    assert kept == [0, 1, 2]
    assert (sub.n_vertices, sub.n_edges) == (3, 3)
    tree = OrientedGraph(3, [(0, 1), (1, 2)])
    assert prune_leaves(tree)[1] == []


def test_prune_leaves_drops_bridges():
    # two triangles joined by a bridge: the bridge lies on no cycle
    g = OrientedGraph(6, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)])
    assert prune_leaves(g)[1] == [0, 1, 2, 4, 5, 6]


def test_prune_leaves_ieee14(ieee14):
    g = build_graph(ieee14)
    kept = set(prune_leaves(g)[1])
    on_cycles = {e for c in fundamental_cycle_basis(g) for e in c.edge_ids}
    assert kept == on_cycles


def test_basis_json_round_trip(ieee14):
    basis = minimum_cycle_basis(build_graph(ieee14))
    back = basis_from_json(basis_to_json(basis))
    assert back == basis


def test_cycle_validation():
    with pytest.raises(ValueError):
        Cycle([1], [1])
    with pytest.raises(ValueError):
        Cycle([1, 2], [1, 0])
    assert len(CycleBasis([], "minimum", 3)) == 0


@st.composite
def connected_graphs(draw):
    n = draw(st.integers(2, 8))
    edges = [(draw(st.integers(0, i - 1)), i) for i in range(1, n)]  # random tree
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=8))
    edges += [(a, b) for a, b in extra if a != b]
    order = draw(st.permutations(range(len(edges))))
    flips = draw(st.lists(st.booleans(), min_size=len(edges), max_size=len(edges)))
    return OrientedGraph(n, [edges[i][::-1] if f else edges[i] for i, f in zip(order, flips)])


@settings(max_examples=60, deadline=None)
@given(connected_graphs())
def test_basis_properties(g):
    mcb = minimum_cycle_basis(g)
    fb = fundamental_cycle_basis(g)
    check_basis(g, mcb)
    check_basis(g, fb)
    assert mcb.total_length <= fb.total_length
    kept = set(prune_leaves(g)[1])
    assert kept == {e for c in mcb for e in c.edge_ids}


@settings(max_examples=25, deadline=None)
@given(connected_graphs().filter(lambda g: g.n_edges <= 7))
def test_mcb_matches_brute_force(g):
    assert minimum_cycle_basis(g).total_length == (_brute_force_mcb_length(g) or 0)
