"""Node placement for the random multi-hop scenarios."""

from __future__ import annotations

import math
from collections import deque

from .simkernel import KeyedRng


def ring_sizes(n_nodes: int, max_hops: int) -> list[int]:
    """Split the non-root nodes over hop rings 1..max_hops, inner rings first."""
    rest = n_nodes - 1
    if rest < max_hops:
        raise ValueError(f"{n_nodes} nodes cannot fill {max_hops} hop rings")
    base, extra = divmod(rest, max_hops)
    return [base + (1 if i < extra else 0) for i in range(max_hops)]


def hop_counts(positions: dict[int, tuple[float, float]], root: int, tx_range: float) -> dict[int, int]:
    ids = sorted(positions)
    seen = {root: 0}
    q = deque([root])
    while q:
        a = q.popleft()
        for b in ids:
            if b not in seen and math.dist(positions[a], positions[b]) <= tx_range:
                seen[b] = seen[a] + 1
                q.append(b)
    return seen


def ring_layout(
    n_nodes: int,
    max_hops: int,
    tx_range: float,
    seed: int,
    root: int = 1,
    attempts: int = 2000,
) -> dict[int, tuple[float, float]]:
    """Seeded layout in which ring ``h`` nodes are exactly ``h`` hops from the root.

    Each node is dropped near a random node of the previous ring, moving
    outward, and is re-drawn until it reaches that ring but nothing closer
    to the root.
    """
    rng = KeyedRng(seed)
    sizes = ring_sizes(n_nodes, max_hops)
    pos: dict[int, tuple[float, float]] = {root: (0.0, 0.0)}
    rings: list[list[int]] = [[root]]
    next_id = root + 1
    for h, size in enumerate(sizes, start=1):
        ring: list[int] = []
        inner = [n for r in rings[:-1] for n in r]
        for _ in range(size):
            nid = next_id
            next_id += 1
            for k in range(attempts):
                anchor = rings[-1][int(rng.u("anchor", nid, k) * len(rings[-1]))]
                ax, ay = pos[anchor]
                outward = math.atan2(ay, ax) if anchor != root else 0.0
                spread = math.pi / 2 if h > 1 else math.pi / 3
                ang = outward + (rng.u("ang", nid, k) - 0.5) * 2 * spread
                dist = tx_range * (0.55 + 0.4 * rng.u("dist", nid, k))
                p = (ax + dist * math.cos(ang), ay + dist * math.sin(ang))
                if any(math.dist(p, pos[o]) <= tx_range for o in inner):
                    continue
                if any(math.dist(p, pos[o]) < 0.1 * tx_range for o in pos):
                    continue
                break
            else:
                raise RuntimeError(f"could not place node {nid} in ring {h}")
            pos[nid] = (round(p[0], 3), round(p[1], 3))
            ring.append(nid)
        rings.append(ring)
    hops = hop_counts(pos, root, tx_range)
    for h, ring in enumerate(rings):
        assert all(hops[n] == h for n in ring)
    return pos
