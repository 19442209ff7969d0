import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bfs_hops
from usdn_sim.topology import hop_counts, ring_layout, ring_sizes


def unit_disk(positions, r):
    adj = {n: set() for n in positions}
    for a in positions:
        for b in positions:
            if a != b and math.dist(positions[a], positions[b]) <= r:
                adj[a].add(b)
    return adj


def test_ring_sizes_split_evenly_inner_first():
    assert ring_sizes(30, 5) == [6, 6, 6, 6, 5]
    assert ring_sizes(8, 3) == [3, 2, 2]
    assert sum(ring_sizes(30, 5)) == 29


def test_too_few_nodes_for_rings():
    with pytest.raises(ValueError):
        ring_sizes(4, 5)


@pytest.mark.parametrize("seed", range(1, 11))
def test_ring_layout_puts_nodes_at_exact_depth(seed):
    pos = ring_layout(30, 5, 100.0, seed)
    hops = hop_counts(pos, 1, 100.0)
    sizes = ring_sizes(30, 5)
    assert len(pos) == 30 and pos[1] == (0.0, 0.0)
    for h in range(1, 6):
        assert sum(1 for n in pos if hops[n] == h) == sizes[h - 1]


def test_layout_is_seeded():
    assert ring_layout(30, 5, 100.0, 3) == ring_layout(30, 5, 100.0, 3)
    assert ring_layout(30, 5, 100.0, 3) != ring_layout(30, 5, 100.0, 4)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.integers(1, 20), st.tuples(st.floats(0, 300), st.floats(0, 300)), min_size=1))
def test_hop_counts_match_bfs(positions):
    root = min(positions)
    assert hop_counts(positions, root, 100.0) == bfs_hops(unit_disk(positions, 100.0), root)
