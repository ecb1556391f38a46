"""Node ledgers, flow table and per-content overlay sets.

Rates are integers in kbps so that ledger sums are exact. ``UNIT`` converts
Mbps to the internal unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT = 1000
# array stand-in for an unset logical hop
NO_HOP = 1 << 30


def to_units(mbps: float) -> int:
    return round(mbps * UNIT)


class InvariantViolation(RuntimeError):
    """A model invariant was broken; ``snapshot`` holds a state dump."""

    def __init__(self, message: str, snapshot: str = ""):
        super().__init__(message)
        self.snapshot = snapshot


class CapacityError(ValueError):
    """A flow mutation would break M >= m or N >= n."""


@dataclass(eq=False)
class NodeRecord:
    id: int
    as_id: int
    capacity: int
    demand: list[int]
    oss_content: int | None = None
    used: int = 0
    received: list[int] = field(default_factory=list)
    admitted: set[int] = field(default_factory=set)
    viewing: bool = False
    session: int = 0
    is_oss: bool = field(init=False)

    def __post_init__(self):
        self.is_oss = self.oss_content is not None
        if not self.received:
            self.received = [0] * len(self.demand)

    def __repr__(self) -> str:
        role = f"oss:{self.oss_content}" if self.is_oss else "peer"
        return f"NodeRecord({self.id}, {role}, as={self.as_id}, M={self.capacity}, m={self.used})"


def headroom(node: NodeRecord) -> int:
    return node.capacity - node.used


class IndexedSet:
    """Set with O(1) add/remove and uniform random choice by position."""

    __slots__ = ("items", "pos")

    def __init__(self, items=()):
        self.items: list[int] = []
        self.pos: dict[int, int] = {}
        for x in items:
            self.add(x)

    def add(self, x: int) -> None:
        if x not in self.pos:
            self.pos[x] = len(self.items)
            self.items.append(x)

    def discard(self, x: int) -> None:
        idx = self.pos.pop(x, None)
        if idx is None:
            return
        last = self.items.pop()
        if idx < len(self.items):
            self.items[idx] = last
            self.pos[last] = idx

    def __contains__(self, x) -> bool:
        return x in self.pos

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


class HopList(list):
    """Per-content hop list (``None`` = unset) mirrored into an int array for vectorized scans."""

    def __init__(self, values):
        super().__init__(values)
        self.arr = np.array([NO_HOP if h is None else h for h in values], dtype=np.int64)

    def __setitem__(self, i, h):
        super().__setitem__(i, h)
        self.arr[i] = NO_HOP if h is None else h


class FlowTable:
    """Sparse map (src, dst, content) -> rate, stored as mirrored adjacency dicts.

    ``inc[k][i]`` maps each parent of i to its rate; ``out[k][i]`` maps each
    child. The parent set P^k(i) is ``inc[k][i].keys()`` and C^k(i) is
    ``out[k][i].keys()``.
    """

    def __init__(self, node_count: int, content_count: int):
        self.inc: list[list[dict[int, int]]] = [[{} for _ in range(node_count)] for _ in range(content_count)]
        self.out: list[list[dict[int, int]]] = [[{} for _ in range(node_count)] for _ in range(content_count)]

    def rate(self, src: int, dst: int, k: int) -> int:
        return self.out[k][src].get(dst, 0)

    def entries(self):
        for k, outs in enumerate(self.out):
            for src, row in enumerate(outs):
                for dst, x in row.items():
                    yield src, dst, k, x

    def __len__(self) -> int:
        return sum(len(row) for outs in self.out for row in outs)


class World:
    """All mutable state of one simulated overlay.

    Keeps the receive and upload ledgers (``received``/``used`` on each node)
    in step with the flow table, and tracks running totals for the two
    metrics: the number of fully served (peer, content) pairs, total rate and
    distance-weighted rate. Upload usage, served flags, holder membership and
    hops are also mirrored into numpy arrays for candidate scans.
    """

    def __init__(
        self,
        nodes: list[NodeRecord],
        hop_matrix,
        content_count: int,
        hop_limit: int,
        reserve_budget: int,
    ):
        self.nodes = nodes
        self.K = content_count
        self.H = hop_limit
        self.D = reserve_budget
        self.as_hops: list[list[int]] = [list(map(int, row)) for row in hop_matrix]
        self.node_as = [n.as_id for n in nodes]
        n = len(nodes)
        self.flows = FlowTable(n, content_count)
        self.reserves: list[list[set[int]]] = [[set() for _ in range(n)] for _ in range(content_count)]
        # reverse index of reserves, used to purge departed nodes
        self.reserved_by: list[list[set[int]]] = [[set() for _ in range(n)] for _ in range(content_count)]
        self.hop: list[HopList] = [HopList([None] * n) for _ in range(content_count)]
        self.holders: list[IndexedSet] = [IndexedSet() for _ in range(content_count)]
        self.oss_of: list[list[int]] = [[] for _ in range(content_count)]
        self.as_hops_arr = np.asarray(hop_matrix, dtype=np.int64)
        self.node_as_arr = np.array(self.node_as, dtype=np.int64)
        self.capacity_arr = np.array([nd.capacity for nd in nodes], dtype=np.int64)
        self.used_arr = np.array([nd.used for nd in nodes], dtype=np.int64)
        # served_arr[k][v]: v may transmit k if it holds it (OSS always; peers once n == N)
        self.served_arr = [
            np.array([nd.is_oss or nd.received[k] == nd.demand[k] for nd in nodes], dtype=bool)
            for k in range(content_count)
        ]
        self.holder_arr = [np.zeros(n, dtype=bool) for _ in range(content_count)]
        for node in nodes:
            if node.is_oss:
                k = node.oss_content
                self.hop[k][node.id] = 0
                self.holders[k].add(node.id)
                self.holder_arr[k][node.id] = True
                self.oss_of[k].append(node.id)
        # when not None, collects ids whose flows, reserves or hops changed
        self.touched: set[int] | None = None
        # (holder, content) pairs whose reserve set shrank through a departure
        self.lost_reserve: list[tuple[int, int]] = []
        self._class_index: dict[int, dict[int, list[NodeRecord]]] = {}
        self.served_pairs = 0
        self.total_rate = 0
        self.weighted_rate = 0

    # -- queries -----------------------------------------------------------

    @property
    def peers(self) -> list[NodeRecord]:
        return [n for n in self.nodes if not n.is_oss]

    def distance(self, i: int, j: int) -> int:
        return self.as_hops[self.node_as[i]][self.node_as[j]] + 1

    def peers_in_class(self, cls: int, granularity: int) -> list[NodeRecord]:
        """Peers whose capacity quantizes to ``cls``; capacities never change."""
        index = self._class_index.get(granularity)
        if index is None:
            index = {}
            for n in self.nodes:
                if not n.is_oss:
                    index.setdefault(n.capacity // granularity, []).append(n)
            self._class_index[granularity] = index
        return index.get(cls, [])

    def parents(self, i: int, k: int) -> dict[int, int]:
        return self.flows.inc[k][i]

    def children(self, i: int, k: int) -> dict[int, int]:
        return self.flows.out[k][i]

    def holds(self, j: int, k: int) -> bool:
        """True if j can transmit content k: its OSS, or a fully served viewer."""
        node = self.nodes[j]
        if node.is_oss:
            return node.oss_content == k
        return k in node.admitted and node.received[k] == node.demand[k]

    def is_served(self, i: int, k: int) -> bool:
        node = self.nodes[i]
        return not node.is_oss and node.received[k] == node.demand[k]

    def congestion(self) -> float | None:
        if self.total_rate == 0:
            return None
        return self.weighted_rate / self.total_rate

    # -- flow mutation -----------------------------------------------------

    def add_flow(self, src: int, dst: int, k: int, rate: int) -> None:
        s, d = self.nodes[src], self.nodes[dst]
        if d.is_oss:
            raise InvariantViolation(f"flow into OSS {dst} for content {k}")
        if rate <= 0:
            raise ValueError(f"flow rate must be positive, got {rate}")
        if s.used + rate > s.capacity:
            raise CapacityError(f"node {src}: upload {s.used}+{rate} exceeds M={s.capacity}")
        if d.received[k] + rate > d.demand[k]:
            raise CapacityError(f"node {dst}: receive {d.received[k]}+{rate} exceeds N={d.demand[k]}")
        was = d.received[k] == d.demand[k]
        out = self.flows.out[k][src]
        out[dst] = out.get(dst, 0) + rate
        self.flows.inc[k][dst][src] = out[dst]
        s.used += rate
        self.used_arr[src] = s.used
        d.received[k] += rate
        if self.touched is not None:
            self.touched.update((src, dst))
        self.total_rate += rate
        self.weighted_rate += rate * self.distance(src, dst)
        if not was and d.received[k] == d.demand[k]:
            self.served_pairs += 1
            self.served_arr[k][dst] = True

    def remove_flow(self, src: int, dst: int, k: int) -> int:
        rate = self.flows.out[k][src].pop(dst, 0)
        if not rate:
            return 0
        del self.flows.inc[k][dst][src]
        s, d = self.nodes[src], self.nodes[dst]
        was = d.received[k] == d.demand[k]
        s.used -= rate
        self.used_arr[src] = s.used
        d.received[k] -= rate
        if self.touched is not None:
            self.touched.update((src, dst))
        self.total_rate -= rate
        self.weighted_rate -= rate * self.distance(src, dst)
        if was:
            self.served_pairs -= 1
            self.served_arr[k][dst] = False
        return rate

    def clear_parents(self, i: int, k: int) -> None:
        for src in list(self.flows.inc[k][i]):
            self.remove_flow(src, i, k)

    # -- reserves ----------------------------------------------------------

    def add_reserve(self, i: int, k: int, r: int) -> None:
        if self.touched is not None:
            self.touched.add(i)
        self.reserves[k][i].add(r)
        self.reserved_by[k][r].add(i)

    def discard_reserve(self, i: int, k: int, r: int) -> None:
        self.reserves[k][i].discard(r)
        self.reserved_by[k][r].discard(i)

    def clear_reserves(self, i: int, k: int) -> None:
        for r in self.reserves[k][i]:
            self.reserved_by[k][r].discard(i)
        self.reserves[k][i].clear()

    def trim_reserves(self, i: int, k: int) -> None:
        """Drop reserves that became parents and any excess over D - |P|."""
        res = self.reserves[k][i]
        parents = self.flows.inc[k][i]
        for r in [r for r in res if r in parents or r == i]:
            self.discard_reserve(i, k, r)
        excess = len(res) + len(parents) - self.D
        if excess > 0:
            for r in sorted(res)[-excess:]:
                self.discard_reserve(i, k, r)

    # -- admission bookkeeping ---------------------------------------------

    def admit(self, i: int, k: int) -> None:
        if self.touched is not None:
            self.touched.add(i)
        self.nodes[i].admitted.add(k)
        self.holders[k].add(i)
        self.holder_arr[k][i] = True

    def revoke(self, i: int, k: int) -> None:
        self.nodes[i].admitted.discard(k)
        self.holders[k].discard(i)
        self.holder_arr[k][i] = False

    def remove_flows_of(self, i: int) -> list[tuple[int, int]]:
        """Detach node i from every overlay.

        Removes all flows with i as source or destination, clears i's reserve
        sets and admissions, and purges i from other nodes' reserve sets.
        Returns the (child, content) pairs that lost a parent, sorted.
        """
        orphans = []
        for k in range(self.K):
            lost = sorted(self.flows.out[k][i])
            for dst in lost:
                self.remove_flow(i, dst, k)
            self.clear_parents(i, k)
            self.clear_reserves(i, k)
            for holder in sorted(self.reserved_by[k][i]):
                self.discard_reserve(holder, k, i)
                self.lost_reserve.append((holder, k))
            if not self.nodes[i].is_oss:
                self.hop[k][i] = None
                self.revoke(i, k)
                if self.touched is not None:
                    self.touched.add(i)
            self.refresh_hops(k, lost)
            orphans += [(dst, k) for dst in lost]
        return sorted(orphans)

    # -- logical hops ------------------------------------------------------

    def refresh_hops(self, k: int, starts) -> None:
        """Propagate hop changes downward from ``starts``.

        A peer with no parents keeps its current hop; that only happens while
        it is waiting for repair within one event.
        """
        inc, out, hop = self.flows.inc[k], self.flows.out[k], self.hop[k]
        stack = list(starts)
        while stack:
            v = stack.pop()
            if self.nodes[v].is_oss:
                continue
            ps = inc[v]
            if not ps:
                continue
            hs = [hop[p] for p in ps]
            new = None if None in hs else 1 + max(hs)
            if new != hop[v]:
                hop[v] = new
                if self.touched is not None:
                    self.touched.add(v)
                stack.extend(out[v])

    def recompute_logical_hops(self, k: int) -> list[int | None]:
        """Topological recomputation of every hop for content k from scratch.

        Peers unreachable from an OSS of k get ``None``. Raises
        ``InvariantViolation`` if the parent graph contains a cycle.
        """
        hops = topological_hops(self, k)
        self.hop[k] = HopList(hops)
        return hops

    def height(self, i: int, k: int) -> tuple[int, set[int]]:
        """Longest downward path from i in content k, and i's descendants."""
        out = self.flows.out[k]
        memo: dict[int, int] = {}

        def walk(v: int) -> int:
            if v in memo:
                return memo[v]
            best = 0
            for c in out[v]:
                best = max(best, 1 + walk(c))
            memo[v] = best
            return best

        h = walk(i)
        memo.pop(i)
        return h, set(memo)

    # -- validation --------------------------------------------------------

    def check_touched(self) -> None:
        """Per-node checks on nodes changed since the last call, and their peer-parented children."""
        if not self.touched:
            return
        ids = set(self.touched)
        for v in self.touched:
            # an OSS hop is fixed at 0, so its children's hop equations cannot go stale through it
            if not self.nodes[v].is_oss:
                for k in range(self.K):
                    ids.update(self.flows.out[k][v])
        self.touched.clear()
        self.check_invariants(ids)

    def check_invariants(self, nodes=None) -> None:
        """Raise ``InvariantViolation`` unless every model invariant holds.

        With ``nodes`` given, only the per-node checks run for those nodes;
        otherwise the whole world (including acyclicity and global totals) is
        checked.
        """
        problems = []
        ids = range(len(self.nodes)) if nodes is None else sorted(set(nodes))
        K, inc, out = self.K, self.flows.inc, self.flows.out
        for i in ids:
            node = self.nodes[i]
            up = sum(sum(out[k][i].values()) for k in range(K))
            if up != node.used:
                problems.append(f"node {i}: m={node.used} but flows sum to {up}")
            if not 0 <= node.used <= node.capacity:
                problems.append(f"node {i}: m={node.used} outside [0, {node.capacity}]")
            for k in range(K):
                down = sum(inc[k][i].values())
                if down != node.received[k]:
                    problems.append(f"node {i} k={k}: n={node.received[k]} but flows sum to {down}")
                if not 0 <= node.received[k] <= node.demand[k]:
                    problems.append(f"node {i} k={k}: n={node.received[k]} outside [0, {node.demand[k]}]")
                if node.is_oss and inc[k][i]:
                    problems.append(f"OSS {i} receives content {k}")
                for p, x in inc[k][i].items():
                    if out[k][p].get(i) != x:
                        problems.append(f"mirror broken: {p}->{i} k={k}")
                for c, x in out[k][i].items():
                    if inc[k][c].get(i) != x:
                        problems.append(f"mirror broken: {i}->{c} k={k}")
                res = self.reserves[k][i]
                if i in res or res & inc[k][i].keys():
                    problems.append(f"node {i} k={k}: reserves overlap parents or self")
                if len(res) + len(inc[k][i]) > self.D:
                    problems.append(f"node {i} k={k}: |P|+|B|={len(res) + len(inc[k][i])} > D={self.D}")
                if node.is_oss:
                    continue
                admitted = k in node.admitted
                if admitted and node.received[k] != node.demand[k]:
                    problems.append(f"peer {i} admitted for {k} but n={node.received[k]} < N")
                if not admitted and (inc[k][i] or out[k][i]):
                    problems.append(f"peer {i} has content-{k} flows without admission")
                h = self.hop[k][i]
                if admitted:
                    hs = [self.hop[k][p] for p in inc[k][i]]
                    if None in hs or h != 1 + max(hs, default=-1) or h > self.H:
                        problems.append(f"peer {i} k={k}: hop {h} inconsistent with parents {hs} (H={self.H})")
            if not node.is_oss and node.admitted and not node.viewing:
                problems.append(f"peer {i} admitted while not viewing")
        if nodes is None:
            for k in range(K):
                try:
                    hops = topological_hops(self, k)
                except InvariantViolation as exc:
                    problems.append(str(exc))
                    continue
                for i, node in enumerate(self.nodes):
                    if (node.is_oss or k in node.admitted) and hops[i] != self.hop[k][i]:
                        problems.append(f"node {i} k={k}: cached hop {self.hop[k][i]} != {hops[i]}")
            total = weighted = served = 0
            for src, dst, k, x in self.flows.entries():
                total += x
                weighted += x * self.distance(src, dst)
            served = sum(
                1 for n in self.nodes if not n.is_oss for k in range(K) if n.received[k] == n.demand[k]
            )
            if (total, weighted, served) != (self.total_rate, self.weighted_rate, self.served_pairs):
                problems.append(
                    f"running totals {(self.total_rate, self.weighted_rate, self.served_pairs)}"
                    f" != recomputed {(total, weighted, served)}"
                )
            if sum(n.used for n in self.nodes) != sum(sum(n.received) for n in self.nodes):
                problems.append("sum of m_i differs from sum of n_i^k")
            if self.used_arr.tolist() != [n.used for n in self.nodes]:
                problems.append("upload mirror array out of step with ledgers")
            for k in range(K):
                served = [n.is_oss or n.received[k] == n.demand[k] for n in self.nodes]
                if self.served_arr[k].tolist() != served:
                    problems.append(f"served mirror array out of step for content {k}")
                if set(map(int, self.holder_arr[k].nonzero()[0])) != set(self.holders[k]):
                    problems.append(f"holder mirror array out of step for content {k}")
                expect = [NO_HOP if h is None else h for h in self.hop[k]]
                if self.hop[k].arr.tolist() != expect:
                    problems.append(f"hop mirror array out of step for content {k}")
        if problems:
            raise InvariantViolation("; ".join(problems[:10]), self.snapshot())

    def snapshot(self) -> str:
        lines = []
        for k in range(self.K):
            lines.append(f"# content {k}")
            for src, row in enumerate(self.flows.out[k]):
                for dst in sorted(row):
                    lines.append(f"{src} {dst} {row[dst]}")
        lines.append("# ledger: id M m n^k...")
        for n in self.nodes:
            lines.append(f"{n.id} {n.capacity} {n.used} " + " ".join(map(str, n.received)))
        return "\n".join(lines) + "\n"


def topological_hops(world: World, k: int) -> list[int | None]:
    """Kahn's algorithm over the content-k parent graph."""
    inc, out = world.flows.inc[k], world.flows.out[k]
    n = len(world.nodes)
    indeg = [len(inc[v]) for v in range(n)]
    hops: list[int | None] = [None] * n
    for v in world.oss_of[k]:
        hops[v] = 0
    order = [v for v in range(n) if indeg[v] == 0]
    seen = 0
    while order:
        v = order.pop()
        seen += 1
        for c in out[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                hs = [hops[p] for p in inc[c]]
                hops[c] = None if None in hs else 1 + max(hs)
                order.append(c)
    if seen != n:
        raise InvariantViolation(f"cycle in parent graph of content {k}")
    return hops


@dataclass(frozen=True)
class ContentCatalog:
    """Contents ``0..K-1`` and the probability of each requested subset."""

    content_count: int
    subsets: tuple[tuple[int, ...], ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if len(self.subsets) != len(self.probabilities):
            raise ValueError("one probability per subset required")
        for s in self.subsets:
            if not s or any(not 0 <= k < self.content_count for k in s):
                raise ValueError(f"subset {s} is empty or outside 0..{self.content_count - 1}")
        if any(p < 0 for p in self.probabilities) or abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise ValueError("request probabilities must be non-negative and sum to 1")

    @classmethod
    def from_weights(cls, content_count: int, weights: dict[tuple[int, ...], float]) -> ContentCatalog:
        total = float(sum(weights.values()))
        subsets = tuple(tuple(sorted(s)) for s in weights)
        return cls(content_count, subsets, tuple(w / total for w in weights.values()))

    @classmethod
    def uniform(cls, content_count: int) -> ContentCatalog:
        """Every non-empty subset equally likely; for K=2 this is {1}, {2}, {1,2} at 1/3 each."""
        subsets = [
            tuple(k for k in range(content_count) if mask >> k & 1) for mask in range(1, 2**content_count)
        ]
        subsets.sort(key=lambda s: (len(s), s))
        return cls.from_weights(content_count, {s: 1.0 for s in subsets})
