"""Discrete-event churn simulation and steady-state metric estimation.

Peers alternate between waiting (exponential) and viewing (log-normal). Two
time averages are integrated exactly over each day-long batch:

* joining peers: number of (peer, content) pairs receiving their full rate;
* congestion degree: traffic-weighted mean physical distance of all flows.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import topology
from .configurator import JoinOptions, JoinRequest, Policy, initial_configuration, repair_on_departure
from .core_model import ContentCatalog, InvariantViolation, NodeRecord, World, to_units
from .exchange import exchange1_candidates, is_exchange1_fixed_point

DAY = 86400.0
HOUR = 3600.0

DEMAND, VIEWING_COMPLETE = 0, 1


# -- samplers ----------------------------------------------------------------


def sample_content_set(catalog: ContentCatalog, rng) -> tuple[int, ...]:
    cdf = np.cumsum(catalog.probabilities)
    idx = bisect.bisect_right(cdf.tolist(), float(rng.random()) * cdf[-1])
    return catalog.subsets[min(idx, len(catalog.subsets) - 1)]


def lognormal_params(mean_s: float, cv: float) -> tuple[float, float]:
    """(mu, sigma) of the log-normal with the given mean and coefficient of variation."""
    sigma = math.sqrt(math.log1p(cv * cv))
    return math.log(mean_s) - sigma * sigma / 2, sigma


def sample_viewing_time(mean_s: float, cv: float, rng, size=None):
    if mean_s <= 0 or cv <= 0:
        raise ValueError("mean and cv must be positive")
    mu, sigma = lognormal_params(mean_s, cv)
    return rng.lognormal(mu, sigma, size)


def sample_waiting_time(mean_s: float, rng, size=None):
    if mean_s <= 0:
        raise ValueError("mean waiting time must be positive")
    return rng.exponential(mean_s, size)


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation run. Bandwidths in Mbps, durations in seconds."""

    peer_count: int = 1000
    as_count: int = 15
    edges_per_node: int = 4
    content_count: int = 2
    oss_per_content: int = 1
    oss_bandwidth: float = 30.0
    peer_bandwidth_min: float = 0.5
    peer_bandwidth_max: float = 10.0
    view_rate: float = 2.0
    hop_limit: int = 4
    reserve_budget: int = 4
    # ((1-based content ids), weight) pairs; None means uniform over non-empty subsets
    request_distribution: tuple[tuple[tuple[int, ...], float], ...] | None = None
    mean_viewing_seconds: float = 3 * HOUR
    viewing_cv: float = 6.0
    mean_waiting_seconds: float = 1 * HOUR
    policy: str = "mlh+ex"
    sim_days: float = 12.0
    warmup_days: float = 2.0
    batch_days: float = 1.0
    seed: int = 1
    topology_seed: int | None = None
    full_headroom: bool = True
    class_granularity: float = 0.5
    all_or_nothing: bool = False
    refill_lost_reserves: bool = True
    repair_hop_rule: str = "self"
    # 0 disables checking; n > 0 checks the nodes touched by every event and
    # runs a full world check every n events and at the end
    check_every: int = 0

    def __post_init__(self):
        positive = (
            "peer_count", "as_count", "edges_per_node", "content_count", "oss_per_content",
            "oss_bandwidth", "peer_bandwidth_min", "peer_bandwidth_max", "view_rate", "hop_limit",
            "reserve_budget", "mean_viewing_seconds", "viewing_cv", "mean_waiting_seconds",
            "sim_days", "batch_days", "class_granularity",
        )  # fmt: skip
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.peer_bandwidth_min > self.peer_bandwidth_max:
            raise ValueError("peer_bandwidth_min exceeds peer_bandwidth_max")
        if self.warmup_days < 0 or self.check_every < 0:
            raise ValueError("warmup_days and check_every must be non-negative")
        if self.as_count > 1 and self.as_count <= self.edges_per_node:
            raise ValueError("as_count must exceed edges_per_node")
        batches = (self.sim_days - self.warmup_days) / self.batch_days
        if batches < 1 or abs(batches - round(batches)) > 1e-9:
            raise ValueError("sim_days - warmup_days must be a positive multiple of batch_days")
        Policy.parse(self.policy)
        self.join_options()
        self.catalog()

    @property
    def batch_count(self) -> int:
        return round((self.sim_days - self.warmup_days) / self.batch_days)

    def catalog(self) -> ContentCatalog:
        if self.request_distribution is None:
            return ContentCatalog.uniform(self.content_count)
        weights: dict[tuple[int, ...], float] = {}
        for subset, w in self.request_distribution:
            key = tuple(sorted(k - 1 for k in subset))
            weights[key] = weights.get(key, 0.0) + w
        return ContentCatalog.from_weights(self.content_count, weights)

    def join_options(self) -> JoinOptions:
        return JoinOptions(
            full_headroom=self.full_headroom,
            class_granularity=to_units(self.class_granularity),
            all_or_nothing=self.all_or_nothing,
            refill_lost_reserves=self.refill_lost_reserves,
            repair_hop_rule=self.repair_hop_rule,
        )


# -- metrics -----------------------------------------------------------------


@dataclass
class BatchMetrics:
    index: int
    joining_peers: float
    congestion_degree: float
    has_traffic: bool = True


class MetricsAccumulator:
    """Exact integrals of the piecewise-constant metric integrands per segment.

    Segment 0 is the warm-up (absent when it has zero length); the rest are
    batches. Congestion is integrated only while traffic flows, and the
    batch value divides by that traffic time.
    """

    def __init__(self, warmup: float, batch: float, batches: int):
        self.edges = ([0.0] if warmup > 0 else []) + [warmup + b * batch for b in range(batches + 1)]
        self.has_warmup = warmup > 0
        n = len(self.edges) - 1
        self.joined = [0.0] * n
        self.ratio = [0.0] * n
        self.traffic_time = [0.0] * n
        self.last = 0.0
        self.segment = 0

    def advance(self, t: float, served: int, ratio: float | None) -> None:
        edges = self.edges
        while self.last < t and self.segment < len(edges) - 1:
            end = min(t, edges[self.segment + 1])
            dt = end - self.last
            self.joined[self.segment] += served * dt
            if ratio is not None:
                self.ratio[self.segment] += ratio * dt
                self.traffic_time[self.segment] += dt
            self.last = end
            if end >= edges[self.segment + 1]:
                self.segment += 1

    def batches(self) -> list[BatchMetrics]:
        out = []
        first = 1 if self.has_warmup else 0
        for b, seg in enumerate(range(first, len(self.edges) - 1)):
            length = self.edges[seg + 1] - self.edges[seg]
            out.append(
                BatchMetrics(
                    b,
                    joining_peers_average(self.joined[seg], length),
                    *congestion_average(self.ratio[seg], self.traffic_time[seg]),
                )
            )
        return out


def joining_peers_average(joined_integral: float, batch_length: float) -> float:
    return joined_integral / batch_length


def congestion_average(ratio_integral: float, traffic_time: float) -> tuple[float, bool]:
    """Time average of the congestion ratio; (1.0, False) when no traffic flowed."""
    if traffic_time <= 0:
        return 1.0, False
    return ratio_integral / traffic_time, True


def batch_means_ci(values, confidence: float = 0.95) -> tuple[float, float | None]:
    """Sample mean and Student-t half-width; half-width is None below two batches."""
    xs = np.asarray(list(values), dtype=float)
    if xs.size == 0:
        raise ValueError("no batch values")
    mean = float(xs.mean())
    if xs.size < 2:
        return mean, None
    t = stats.t.ppf(0.5 + confidence / 2, xs.size - 1)
    return mean, float(t * xs.std(ddof=1) / math.sqrt(xs.size))


# -- simulation --------------------------------------------------------------


@dataclass
class RunReport:
    config: ScenarioConfig
    batches: list[BatchMetrics]
    events: int = 0
    joins: int = 0
    rejections: int = 0
    cascade_departures: int = 0
    exchange1_checks: int = 0
    exchange1_blocked: int = 0
    trace: list[tuple[float, int, int]] = field(default_factory=list)

    @property
    def joining(self) -> tuple[float, float | None]:
        return batch_means_ci(b.joining_peers for b in self.batches)

    @property
    def congestion(self) -> tuple[float, float | None]:
        return batch_means_ci(b.congestion_degree for b in self.batches if b.has_traffic)


def build_world(config: ScenarioConfig, bandwidth_rng=None) -> tuple[World, topology.AsGraph, topology.Placement]:
    """Physical network, placement and node records for a configuration.

    The AS graph and placement come from ``topology_seed`` (falling back to
    ``seed``); peer bandwidths from ``bandwidth_rng``.
    """
    topo_ss = np.random.SeedSequence(config.seed if config.topology_seed is None else config.topology_seed)
    graph_seed, place_seed = topo_ss.spawn(2)
    graph = topology.build_as_graph(config.as_count, config.edges_per_node, graph_seed)
    oss_count = config.content_count * config.oss_per_content
    placement = topology.place_nodes(graph, oss_count, config.peer_count, place_seed)
    return make_world(config, graph, placement, bandwidth_rng), graph, placement


def make_world(config: ScenarioConfig, graph, placement, bandwidth_rng=None) -> World:
    if bandwidth_rng is None:
        bandwidth_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    K = config.content_count
    oss_count = K * config.oss_per_content
    demand = to_units(config.view_rate)
    lo, hi = to_units(config.peer_bandwidth_min), to_units(config.peer_bandwidth_max)
    caps = bandwidth_rng.integers(lo, hi, size=config.peer_count, endpoint=True).tolist()
    nodes = [
        NodeRecord(v, placement.node_as[v], to_units(config.oss_bandwidth), [0] * K, oss_content=v % K)
        for v in range(oss_count)
    ]
    nodes += [
        NodeRecord(oss_count + p, placement.node_as[oss_count + p], caps[p], [demand] * K)
        for p in range(config.peer_count)
    ]
    return World(nodes, graph.hop_matrix, K, config.hop_limit, config.reserve_budget)


class Simulation:
    """Event loop for one run. ``run()`` returns a ``RunReport``."""

    def __init__(self, config: ScenarioConfig, record_trace: bool = False, world: World | None = None):
        self.config = config
        streams = np.random.SeedSequence(config.seed).spawn(6)
        bw, demand, view, wait, select, *_ = (np.random.default_rng(s) for s in streams)
        self.demand_rng, self.view_rng, self.wait_rng, self.select_rng = demand, view, wait, select
        if world is None:
            world, graph, _ = build_world(config, bw)
            self.diameter = graph.diameter
        else:
            self.diameter = max(max(row) for row in world.as_hops)
        self.world = world
        self.policy = Policy.parse(config.policy)
        self.options = config.join_options()
        self.catalog = config.catalog()
        self.record_trace = record_trace
        self.trace: list[tuple[float, int, int]] = []
        self.queue: list[tuple[float, int, int, int, int]] = []
        self.seq = 0
        self.horizon = config.sim_days * DAY
        self.metrics = MetricsAccumulator(config.warmup_days * DAY, config.batch_days * DAY, config.batch_count)
        self.report = RunReport(config, [])

    def schedule(self, t: float, kind: int, peer: int, session: int = 0) -> None:
        heapq.heappush(self.queue, (t, self.seq, kind, peer, session))
        self.seq += 1

    def _wait(self) -> float:
        return float(sample_waiting_time(self.config.mean_waiting_seconds, self.wait_rng))

    def _check_exchange1(self, world: World, i: int, k: int) -> None:
        self.report.exchange1_checks += 1
        if not is_exchange1_fixed_point(world, i, k):
            raise InvariantViolation(
                f"exchange1 stopped short of a fixed point for peer {i}, content {k}", world.snapshot()
            )
        # qualifying parents left behind because their swap would overflow a ledger
        self.report.exchange1_blocked += len(exchange1_candidates(world, i, k))

    def run(self) -> RunReport:
        world, cfg, report = self.world, self.config, self.report
        for node in world.nodes:
            if not node.is_oss:
                self.schedule(self._wait(), DEMAND, node.id)
        check = cfg.check_every
        hook = self._check_exchange1 if check else None
        if check:
            world.touched = set()
        last_t = 0.0
        while self.queue and self.queue[0][0] <= self.horizon:
            t, _, kind, peer, session = heapq.heappop(self.queue)
            if t < last_t:
                raise InvariantViolation(f"event time went backwards: {t} < {last_t}", world.snapshot())
            last_t = t
            self.metrics.advance(t, world.served_pairs, world.congestion())
            node = world.nodes[peer]
            if kind == DEMAND:
                if node.viewing:
                    continue
                contents = sample_content_set(self.catalog, self.demand_rng)
                req = JoinRequest(peer, contents, t)
                result = initial_configuration(world, req, self.policy, self.select_rng, self.options, hook)
                report.joins += 1
                if result.any_admitted:
                    view = float(sample_viewing_time(cfg.mean_viewing_seconds, cfg.viewing_cv, self.view_rng))
                    self.schedule(t + view, VIEWING_COMPLETE, peer, node.session)
                else:
                    report.rejections += 1
                    self.schedule(t + self._wait(), DEMAND, peer)
            else:
                if session != node.session or not node.viewing:
                    continue
                cascade = repair_on_departure(world, peer, self.select_rng, self.options)
                report.cascade_departures += len(cascade)
                for v in [peer, *cascade]:
                    self.schedule(t + self._wait(), DEMAND, v)
            report.events += 1
            if self.record_trace:
                self.trace.append((t, kind, peer))
            if check:
                world.check_touched()
                if report.events % check == 0:
                    self._check(world)
        self.metrics.advance(self.horizon, world.served_pairs, world.congestion())
        if check:
            self._check(world)
        report.batches = self.metrics.batches()
        report.trace = self.trace
        return report

    def _check(self, world: World) -> None:
        world.check_invariants()
        ratio = world.congestion()
        if ratio is not None and not 1.0 <= ratio <= 1.0 + self.diameter:
            raise InvariantViolation(f"congestion ratio {ratio} outside [1, {1 + self.diameter}]", world.snapshot())


def run(config: ScenarioConfig, record_trace: bool = False) -> RunReport:
    return Simulation(config, record_trace).run()


# -- CSV ---------------------------------------------------------------------

CSV_HEADER = (
    "policy", "lambda_inv_s", "seed", "batch_index", "joining_peers", "congestion_degree",
    "joining_peers_hw", "congestion_degree_hw",
)  # fmt: skip


def _num(x: float | None) -> str:
    return "NA" if x is None else f"{x:.6f}"


def batch_rows(report: RunReport) -> list[list[str]]:
    cfg = report.config
    return [
        [
            cfg.policy,
            f"{cfg.mean_waiting_seconds:g}",
            str(cfg.seed),
            str(b.index),
            _num(b.joining_peers),
            _num(b.congestion_degree if b.has_traffic else None),
            "",
            "",
        ]
        for b in report.batches
    ]


def summary_row(reports: list[RunReport]) -> list[str]:
    """Pool every batch of the given replications into one mean/half-width row."""
    cfg = reports[0].config
    joining = [b.joining_peers for r in reports for b in r.batches]
    congestion = [b.congestion_degree for r in reports for b in r.batches if b.has_traffic]
    jm, jh = batch_means_ci(joining)
    cm, ch = batch_means_ci(congestion) if congestion else (None, None)
    return [
        cfg.policy, f"{cfg.mean_waiting_seconds:g}", "summary", str(len(joining)),
        _num(jm), _num(cm), _num(jh), _num(ch),
    ]  # fmt: skip


def write_csv(groups: list[list[RunReport]], stream=None) -> str:
    """CSV of all batch rows followed by one summary row per group.

    Each group holds the replications of one (policy, mean waiting time).
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for reports in groups:
        for r in reports:
            writer.writerows(batch_rows(r))
    for reports in groups:
        writer.writerow(summary_row(reports))
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def with_policy(config: ScenarioConfig, policy: str) -> ScenarioConfig:
    return replace(config, policy=policy)
