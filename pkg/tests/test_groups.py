import math
from itertools import product

import numpy as np
import pytest

from coarsekit.errors import InputError, NotGeneratingError
from coarsekit.groups import (BoxSpace, FiniteGroup, GeneratingSet, box_space,
                              cayley_graph, cyclic_box_space, cyclic_group,
                              direct_product, girth, group_from_dict,
                              invariant_mean_defect, sl2_group,
                              sl2_standard_generators)


def bfs_distances(edges, n, source):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[int(u)].append(int(v))
        adj[int(v)].append(int(u))
    dist = {source: 0}
    frontier = [source]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def girth_oracle(space):
    """Shortest cycle through any edge, via BFS with that edge removed."""
    best = math.inf
    edges = [(int(u), int(v)) for u, v in space.edges]
    for u, v in edges:
        remaining = [e for e in edges if e != (u, v)]
        dist = bfs_distances(remaining, space.n, u)
        if v in dist:
            best = min(best, dist[v] + 1)
    return best


def test_cyclic_cayley_is_cycle():
    g = cyclic_group(6)
    sp = cayley_graph(g, [1, 5])
    oracle = bfs_distances(sp.edges, 6, 0)
    for v in range(6):
        assert sp.distance(0, v) == oracle[v]
    assert sp.distance(0, 3) == 3
    degrees = np.zeros(6, dtype=int)
    for u, v in sp.edges:
        degrees[u] += 1
        degrees[v] += 1
    assert (degrees == 2).all()


def test_z2_cayley():
    g = cyclic_group(2)
    sp = cayley_graph(g, [1])
    assert sp.n == 2 and sp.distance(0, 1) == 1


def test_sl2_3_order():
    # independent enumeration: all 2x2 matrices mod 3 with det 1
    count = sum(1 for a, b, c, d in product(range(3), repeat=4)
                if (a * d - b * c) % 3 == 1)
    g = sl2_group(3)
    assert g.order == count == 24


def test_sl2_cayley_vertex_transitive():
    g = sl2_group(3)
    sp = cayley_graph(g, sl2_standard_generators(3))
    sizes = {int((sp.dist[v] <= 2).sum()) for v in range(sp.n)}
    assert len(sizes) == 1  # ball sizes independent of the center


def test_cayley_vertex_transitive_cyclic():
    g = cyclic_group(12)
    sp = cayley_graph(g, [1, 11])
    for radius in range(sp.diameter + 1):
        counts = (sp.dist <= radius).sum(axis=1)
        assert len(set(counts.tolist())) == 1


def test_non_generating_error_names_element():
    g = cyclic_group(6)
    with pytest.raises(NotGeneratingError) as err:
        cayley_graph(g, [2, 4])
    assert "1" in str(err.value)


def test_generating_set_symmetry_check():
    g = cyclic_group(5)
    with pytest.raises(InputError):
        GeneratingSet(g, [1])  # inverse 4 missing


def test_direct_product():
    g = direct_product(cyclic_group(2), cyclic_group(3))
    assert g.order == 6
    e = g.identity
    assert g.labels[e] == "0|0"


def test_group_from_dict():
    assert group_from_dict({"kind": "cyclic", "n": 5}).order == 5
    assert group_from_dict({"kind": "sl2", "p": 3}).order == 24
    tbl = [[0, 1], [1, 0]]
    assert group_from_dict({"kind": "table", "mul": tbl}).order == 2


def test_bad_table_rejected():
    with pytest.raises(InputError):
        FiniteGroup(np.array([[0, 1], [0, 1]]))  # no identity column
    # associative magma without inverses
    with pytest.raises(InputError):
        FiniteGroup(np.zeros((2, 2), dtype=int))


def test_box_space_structure():
    box = cyclic_box_space([4, 8, 16])
    assert isinstance(box, BoxSpace)
    assert [c.n for c in box.components] == [4, 8, 16]
    gaps = [box.gap(i, i + 1) for i in range(2)]
    assert gaps[0] < gaps[1]


def test_box_space_decreasing_orders_rejected():
    quots = [cyclic_group(8), cyclic_group(4)]
    with pytest.raises(InputError):
        box_space(quots, [[1, 7], [1, 3]])


def test_box_space_single_quotient():
    box = cyclic_box_space([2])
    assert box.n == 2 and box.distance(0, 1) == 1


def test_invariant_mean_constant_function():
    box = cyclic_box_space([4, 8])
    f = np.ones(box.n)
    assert invariant_mean_defect(box, f, 1) == 0.0


def test_invariant_mean_indicator():
    box = cyclic_box_space([4, 8])
    f = np.zeros(box.n)
    f[0] = 1.0
    # mean over C_4 is 1/4; rotation only relabels, defect 0
    assert invariant_mean_defect(box, f, 1) <= 1e-15
    assert abs(float(f[:4].mean()) - 0.25) < 1e-15


def test_invariant_mean_random():
    box = cyclic_box_space([4, 8])
    rng = np.random.default_rng(3)
    for _ in range(25):
        f = rng.standard_normal(box.n)
        assert invariant_mean_defect(box, f, 1) <= 1e-12
        assert invariant_mean_defect(box, f, -1) <= 1e-12


def test_invariant_mean_unrepresentable_element():
    quots = [cyclic_group(4), cyclic_group(8)]
    box = box_space(quots, [[1, 3], [1, 7]])
    with pytest.raises(InputError):
        invariant_mean_defect(box, np.ones(box.n), "nonsense")


def test_girth_cycle():
    for n in (3, 5, 6, 11):
        g = cyclic_group(n)
        sp = cayley_graph(g, [1, n - 1]) if n > 2 else None
        assert girth(sp) == n


def test_girth_tree_unbounded():
    from coarsekit.spaces import path_space
    assert girth(path_space(6)) == math.inf


def test_girth_sl2_5_matches_oracle():
    g = sl2_group(5)
    sp = cayley_graph(g, sl2_standard_generators(5))
    assert girth(sp) == girth_oracle(sp)


def test_girth_cyclic_matches_oracle():
    sp = cayley_graph(cyclic_group(9), [2, 7])
    assert girth(sp) == girth_oracle(sp)
