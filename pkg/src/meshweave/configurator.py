"""Join processing (selection, exchanges, reserve fill) and departure repair."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import exchange, selection
from .core_model import World, to_units

POLICIES = ("mlh", "mph", "scamp-like", "mlh+ex", "mph+ex", "scamp-like+ex")


@dataclass(frozen=True)
class Policy:
    selector: str
    exchanges: bool

    @classmethod
    def parse(cls, name: str) -> Policy:
        if name not in POLICIES:
            raise ValueError(f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}")
        base, _, ex = name.partition("+")
        return cls({"mlh": "mlh", "mph": "mph", "scamp-like": "random"}[base], bool(ex))


@dataclass(frozen=True)
class JoinOptions:
    # True: selection candidates need headroom >= N (literal filter); False: any positive headroom
    full_headroom: bool = True
    class_granularity: int = to_units(0.5)
    all_or_nothing: bool = False
    # refill B^k(j) whenever one of j's reserves departs, not only after a repair
    refill_lost_reserves: bool = True
    # "self": a reserve must keep the orphan itself at hop <= H, descendants pushed past H
    # are evicted; "subtree": the reserve must keep the orphan's whole subtree within H
    repair_hop_rule: str = "self"

    def __post_init__(self):
        if self.repair_hop_rule not in ("self", "subtree"):
            raise ValueError(f"repair_hop_rule must be 'self' or 'subtree', got {self.repair_hop_rule!r}")


@dataclass
class JoinRequest:
    peer: int
    contents: tuple[int, ...]
    timestamp: float = 0.0


@dataclass
class JoinResult:
    admitted: dict[int, bool] = field(default_factory=dict)
    parents: dict[int, set[int]] = field(default_factory=dict)
    reserves: dict[int, set[int]] = field(default_factory=dict)
    children: dict[int, set[int]] = field(default_factory=dict)
    exchange1_swaps: int = 0
    exchange2_partner: int | None = None

    @property
    def any_admitted(self) -> bool:
        return any(self.admitted.values())


def select(world: World, i: int, k: int, policy: Policy, rng, options: JoinOptions):
    if policy.selector == "mlh":
        return selection.mlh_select(world, i, k, options.full_headroom)
    if policy.selector == "mph":
        return selection.mph_select(world, i, k, options.full_headroom)
    return selection.random_select(world, i, k, rng)


def fill_reserves(world: World, i: int, k: int, rng) -> None:
    """Add random distinct holders of k to B^k(i) until |P| + |B| = D."""
    parents = world.flows.inc[k][i]
    res = world.reserves[k][i]
    need = world.D - len(parents) - len(res)
    if need <= 0:
        return
    pool = world.holders[k].items
    if len(pool) <= 4 * (need + len(parents) + len(res) + 1):
        avail = [r for r in pool if r != i and r not in parents and r not in res]
        for p in rng.permutation(len(avail))[:need]:
            world.add_reserve(i, k, avail[p])
        return
    while need:
        r = pool[int(rng.integers(len(pool)))]
        if r != i and r not in parents and r not in res:
            world.add_reserve(i, k, r)
            need -= 1


def initial_configuration(
    world: World,
    req: JoinRequest,
    policy: Policy,
    rng,
    options: JoinOptions = JoinOptions(),
    after_exchange1=None,
) -> JoinResult:
    """Admit a waiting peer to each requested content.

    Per content: clear the peer's sets, run the policy's selection, then (for
    exchange-enabled policies) exchange1 per admitted content followed by one
    exchange2 over the peer, and finally fill reserves. ``after_exchange1``,
    if given, is called as ``after_exchange1(world, peer, content)`` when each
    exchange1 run terminates.
    """
    i = req.peer
    node = world.nodes[i]
    result = JoinResult()
    for k in range(world.K):
        world.clear_parents(i, k)
        world.clear_reserves(i, k)
        if world.flows.out[k][i]:
            raise ValueError(f"peer {i} still has children for content {k}")
    for k in sorted(req.contents):
        result.admitted[k] = select(world, i, k, policy, rng, options).admitted
    if options.all_or_nothing and not all(result.admitted.values()):
        for k, ok in result.admitted.items():
            if ok:
                world.clear_parents(i, k)
                world.revoke(i, k)
                world.hop[k][i] = None
                result.admitted[k] = False
    admitted = [k for k, ok in result.admitted.items() if ok]
    node.viewing = bool(admitted)
    if policy.exchanges and admitted:
        for k in admitted:
            result.exchange1_swaps += exchange.exchange1(world, i, k)
            if after_exchange1 is not None:
                after_exchange1(world, i, k)
        result.exchange2_partner = exchange.exchange2(world, i, options.class_granularity)
    for k in admitted:
        fill_reserves(world, i, k, rng)
        result.parents[k] = set(world.flows.inc[k][i])
        result.reserves[k] = set(world.reserves[k][i])
        result.children[k] = set(world.flows.out[k][i])
    return result


def _depart(world: World, i: int) -> list[tuple[int, int]]:
    node = world.nodes[i]
    orphans = world.remove_flows_of(i)
    node.viewing = False
    node.session += 1
    return orphans


def _repair(world: World, j: int, k: int, rng, rule: str = "self") -> bool:
    node = world.nodes[j]
    deficit = node.demand[k] - node.received[k]
    if deficit <= 0:
        return True
    parents = world.flows.inc[k][j]
    hop = world.hop[k]
    height, below = world.height(j, k)
    slack = height if rule == "subtree" else 0
    reserves = sorted(world.reserves[k][j])
    for p in rng.permutation(len(reserves)):
        r = reserves[p]
        world.discard_reserve(j, k, r)
        cand = world.nodes[r]
        room = cand.capacity - cand.used
        if (
            room <= 0
            or r in parents
            or r in below
            or not world.holds(r, k)
            or hop[r] is None
            or hop[r] + 1 + slack > world.H
        ):
            continue
        x = min(deficit, room)
        world.add_flow(r, j, k, x)
        deficit -= x
        if not deficit:
            break
    world.refresh_hops(k, [j])
    if deficit:
        return False
    fill_reserves(world, j, k, rng)
    return True


def _too_deep(world: World, j: int, k: int) -> list[int]:
    """Descendants of j whose hop now exceeds H, shallowest first."""
    _, below = world.height(j, k)
    hop = world.hop[k]
    return sorted((v for v in below if hop[v] is not None and hop[v] > world.H), key=lambda v: (hop[v], v))


def repair_on_departure(world: World, departed: int, rng, options: JoinOptions = JoinOptions()) -> list[int]:
    """Remove ``departed`` and re-home its orphaned children from their reserves.

    Orphans are handled in ascending (child, content) order. A child whose
    deficit cannot be closed from its reserves leaves as well, and its own
    children are repaired before moving on. Under the "self" hop rule a
    repaired child may sink deeper; descendants pushed past H leave too.
    Returns the peers that left in the cascade (not including ``departed``).
    """
    cascade: list[int] = []
    rule = options.repair_hop_rule

    def leave(v: int) -> None:
        for j, k in _depart(world, v):
            child = world.nodes[j]
            if not child.viewing or k not in child.admitted:
                continue
            if not _repair(world, j, k, rng, rule):
                cascade.append(j)
                leave(j)
            elif rule == "self":
                for d in _too_deep(world, j, k):
                    hop = world.hop[k][d]
                    if world.nodes[d].viewing and hop is not None and hop > world.H:
                        cascade.append(d)
                        leave(d)

    world.lost_reserve.clear()
    leave(departed)
    if options.refill_lost_reserves:
        for j, k in world.lost_reserve:
            if k in world.nodes[j].admitted:
                fill_reserves(world, j, k, rng)
    world.lost_reserve.clear()
    return cascade
