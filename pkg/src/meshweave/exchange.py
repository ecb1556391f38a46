"""Position exchanges between two peers: bandwidth-driven and traffic-driven.

A swap relabels a and b in every flow touching either of them, for the
contents in scope. An edge b->a becomes a->b, so a child that swaps with its
parent ends up as that parent's parent. Relabeling two nodes maps a DAG to an
isomorphic DAG, so acyclicity and the hop bound survive every swap; only the
upload ledgers need an explicit feasibility check.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core_model import World


@dataclass
class SwapPlan:
    a: int
    b: int
    contents: tuple[int, ...]
    old: dict[tuple[int, int, int], int]
    new: dict[tuple[int, int, int], int]

    def weight_delta(self, world: World) -> int:
        """Change of sum(d * x) over all flows if the plan were applied."""
        before = sum(x * world.distance(s, d) for (s, d, _), x in self.old.items())
        after = sum(x * world.distance(s, d) for (s, d, _), x in self.new.items())
        return after - before


def plan_swap(world: World, a: int, b: int, contents) -> SwapPlan | None:
    """Build the relabeling for a <-> b, or None if a ledger would overflow."""
    if a == b:
        raise ValueError("cannot swap a node with itself")
    na, nb = world.nodes[a], world.nodes[b]
    if na.is_oss or nb.is_oss:
        raise ValueError("OSS nodes never change position")
    contents = tuple(contents)
    for k in contents:
        if k not in na.admitted or k not in nb.admitted:
            raise ValueError(f"both {a} and {b} must be admitted for content {k}")
    inc, out = world.flows.inc, world.flows.out
    old: dict[tuple[int, int, int], int] = {}
    for k in contents:
        for v in (a, b):
            for p, x in inc[k][v].items():
                old[(p, v, k)] = x
            for c, x in out[k][v].items():
                old[(v, c, k)] = x

    def sigma(v: int) -> int:
        return b if v == a else a if v == b else v

    new = {(sigma(s), sigma(d), k): x for (s, d, k), x in old.items()}
    up = {a: na.used, b: nb.used}
    for (s, _, _), x in old.items():
        if s in up:
            up[s] -= x
    for (s, _, _), x in new.items():
        if s in up:
            up[s] += x
    if up[a] > na.capacity or up[b] > nb.capacity:
        return None
    for k in contents:
        if nb.received[k] > na.demand[k] or na.received[k] > nb.demand[k]:
            return None
    return SwapPlan(a, b, contents, old, new)


def apply_swap(world: World, plan: SwapPlan) -> None:
    for s, d, k in plan.old:
        world.remove_flow(s, d, k)
    for (s, d, k), x in plan.new.items():
        world.add_flow(s, d, k, x)
    a, b = plan.a, plan.b
    if world.touched is not None:
        world.touched.update((a, b))
    for k in plan.contents:
        hop = world.hop[k]
        hop[a], hop[b] = hop[b], hop[a]
    # every receiver whose parent set changed may now hold a parent in reserve
    for _, d, k in sorted(plan.new):
        world.trim_reserves(d, k)
    for k in plan.contents:
        world.trim_reserves(a, k)
        world.trim_reserves(b, k)


def swap_positions(world: World, a: int, b: int, contents) -> bool:
    """Exchange the overlay positions of peers a and b; False if infeasible."""
    plan = plan_swap(world, a, b, contents)
    if plan is None:
        return False
    apply_swap(world, plan)
    return True


def exchange1_candidates(world: World, i: int, k: int) -> list[int]:
    """Peer parents l of i with M_i > M_l and m_i <= m_l."""
    me = world.nodes[i]
    out = []
    for l in world.flows.inc[k][i]:
        node = world.nodes[l]
        if not node.is_oss and me.capacity > node.capacity and me.used <= node.used:
            out.append(l)
    return out


def exchange1(world: World, i: int, k: int) -> int:
    """Move i above lower-bandwidth parents until none qualifies.

    Each round swaps i with the qualifying parent of smallest capacity (ties
    by id). Candidates whose swap would overflow a ledger are skipped. Stops
    when no qualifying parent is left, including the case where every parent
    is an OSS. Returns the number of swaps committed.
    """
    swaps = 0
    skipped: set[int] = set()
    while True:
        cands = [l for l in exchange1_candidates(world, i, k) if l not in skipped]
        if not cands:
            return swaps
        j = min(cands, key=lambda l: (world.nodes[l].capacity, l))
        if swap_positions(world, i, j, (k,)):
            swaps += 1
            skipped.clear()
        else:
            skipped.add(j)


def is_exchange1_fixed_point(world: World, i: int, k: int) -> bool:
    """True if no qualifying parent of i could still be swapped."""
    return all(plan_swap(world, i, l, (k,)) is None for l in exchange1_candidates(world, i, k))


def traffic_cost(world: World, i: int) -> int:
    """Distance-weighted volume over all of i's inbound and outbound flows."""
    total = 0
    for k in range(world.K):
        for j, x in world.flows.inc[k][i].items():
            total += world.distance(j, i) * x
        for j, x in world.flows.out[k][i].items():
            total += world.distance(i, j) * x
    return total


def bandwidth_class(capacity: int, granularity: int) -> int:
    return capacity // granularity


def exchange2_candidates(world: World, i: int, granularity: int) -> list[int]:
    """Viewing peers j != i in i's bandwidth class sharing an admitted content."""
    me = world.nodes[i]
    cls = bandwidth_class(me.capacity, granularity)
    out = []
    for node in world.peers_in_class(cls, granularity):
        if node.id != i and node.viewing and node.admitted & me.admitted:
            out.append(node.id)
    return out


def _incident(world: World, v: int, contents) -> tuple[list[tuple[int, int, int]], int]:
    """(other node, other AS, rate) for v's flows in ``contents``, and v's upload in them."""
    inc, out, node_as = world.flows.inc, world.flows.out, world.node_as
    edges = []
    up = 0
    for k in contents:
        for p, x in inc[k][v].items():
            edges.append((p, node_as[p], x))
        for c, x in out[k][v].items():
            edges.append((c, node_as[c], x))
            up += x
    return edges, up


def swap_gain(world: World, a: int, b: int, contents) -> int | None:
    """(Z_a + Z_b) - (Z'_a + Z'_b) for swapping a and b, or None if infeasible.

    Only flows with exactly one endpoint in {a, b} change distance; a flow
    between a and b keeps both its rate and its endpoints.
    """
    return _gain(world, a, b, _incident(world, a, contents), _incident(world, b, contents))


def _gain(world: World, a: int, b: int, inc_a, inc_b) -> int | None:
    (ea, up_a), (eb, up_b) = inc_a, inc_b
    na, nb = world.nodes[a], world.nodes[b]
    if na.used - up_a + up_b > na.capacity or nb.used - up_b + up_a > nb.capacity:
        return None
    row_a = world.as_hops[world.node_as[a]]
    row_b = world.as_hops[world.node_as[b]]
    gain = 0
    for o, o_as, x in ea:
        if o != b:
            gain += x * (row_a[o_as] - row_b[o_as])
    for o, o_as, x in eb:
        if o != a:
            gain += x * (row_b[o_as] - row_a[o_as])
    return gain


def best_exchange2(world: World, i: int, granularity: int) -> tuple[int, int] | None:
    """Partner with the largest strict drop in Z_i + Z_j, as (gain, partner).

    Ties go to the lowest partner id.
    """
    me = world.nodes[i]
    mine: dict[tuple[int, ...], tuple] = {}
    best = None
    for j in sorted(exchange2_candidates(world, i, granularity)):
        shared = tuple(sorted(me.admitted & world.nodes[j].admitted))
        if shared not in mine:
            mine[shared] = _incident(world, i, shared)
        gain = _gain(world, i, j, mine[shared], _incident(world, j, shared))
        if gain is not None and gain > 0 and (best is None or gain > best[0]):
            best = (gain, j)
    return best


def exchange2(world: World, i: int, granularity: int) -> int | None:
    """Commit the single most cost-reducing swap for i, if any. Returns the partner."""
    best = best_exchange2(world, i, granularity)
    if best is None:
        return None
    j = best[1]
    shared = sorted(world.nodes[i].admitted & world.nodes[j].admitted)
    if not swap_positions(world, i, j, shared):
        raise AssertionError("feasible exchange2 partner became infeasible")
    return j
