"""Parent selection for one (peer, content) request: MLH, MPH and a random baseline.

All three share one greedy skeleton. Candidates are nodes that currently hold
the content, sit at logical hop <= H-1 and have enough upload headroom. They
are engaged in order of a (layer key, in-layer key, node id) triple, each
contributing ``min(remaining demand, headroom)`` until the demand is met.
If it cannot be met every partial flow is rolled back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_model import World


@dataclass
class SelectionOutcome:
    admitted: bool
    flows: list[tuple[int, int]] = field(default_factory=list)

    @property
    def parents(self) -> list[int]:
        return [src for src, _ in self.flows]


REJECTED = SelectionOutcome(False)


def candidates(world: World, i: int, k: int, min_headroom: int) -> list[int]:
    """Holders of k other than i, at hop <= H-1, with headroom >= ``min_headroom``.

    Treating the requester's hop as H keeps the admitted peer at hop <= H.
    Returned in ascending id order.
    """
    return _eligible(world, i, k, min_headroom).tolist()


def _eligible(world: World, i: int, k: int, min_headroom: int) -> np.ndarray:
    mask = world.holder_arr[k] & world.served_arr[k]
    mask &= world.hop[k].arr <= world.H - 1
    mask &= world.capacity_arr - world.used_arr >= min_headroom
    mask[i] = False
    return np.flatnonzero(mask)


def _ordered(world: World, i: int, k: int, ids: np.ndarray, by_hop: bool) -> np.ndarray:
    """``ids`` sorted by (hop, distance, id) or (distance, hop, id)."""
    h = world.hop[k].arr[ids]
    d = world.as_hops_arr[world.node_as[i]][world.node_as_arr[ids]]
    return ids[np.lexsort((ids, d, h) if by_hop else (ids, h, d))]


def _engage(world: World, i: int, k: int, order) -> SelectionOutcome:
    node = world.nodes[i]
    need = node.demand[k] - node.received[k]
    flows = []
    for j in order:
        if need == 0 or len(flows) == world.D:
            break
        parent = world.nodes[j]
        x = min(need, parent.capacity - parent.used)
        if x <= 0:
            continue
        world.add_flow(j, i, k, x)
        flows.append((j, x))
        need -= x
    if need:
        for j, _ in flows:
            world.remove_flow(j, i, k)
        return REJECTED
    hop = world.hop[k]
    hop[i] = 1 + max(hop[j] for j, _ in flows)
    world.admit(i, k)
    return SelectionOutcome(True, flows)


def _layered(world: World, i: int, k: int, full_headroom: bool, by_hop: bool) -> SelectionOutcome:
    node = world.nodes[i]
    ids = _eligible(world, i, k, node.demand[k] if full_headroom else 1)
    # with full headroom every candidate covers the whole demand, so only the first is engaged
    order = _ordered(world, i, k, ids, by_hop).tolist()
    return _engage(world, i, k, order[:1] if full_headroom else order)


def mlh_select(world: World, i: int, k: int, full_headroom: bool = True) -> SelectionOutcome:
    """Minimum logical hop: peel layers by hop, pick nearest physically within a layer."""
    return _layered(world, i, k, full_headroom, by_hop=True)


def mph_select(world: World, i: int, k: int, full_headroom: bool = True) -> SelectionOutcome:
    """Minimum physical hop: peel layers by distance to i, lowest hop first within a layer."""
    return _layered(world, i, k, full_headroom, by_hop=False)


def random_select(world: World, i: int, k: int, rng) -> SelectionOutcome:
    """Uniform draws without replacement from holders with positive headroom."""
    cands = candidates(world, i, k, 1)
    order = [cands[p] for p in rng.permutation(len(cands))]
    return _engage(world, i, k, order)
