import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_exchange2
from worlds import N, attach, flow_set, random_world, world_from

from meshweave import exchange
from meshweave.core_model import to_units
from meshweave.exchange import (
    best_exchange2,
    exchange1,
    exchange1_candidates,
    exchange2,
    is_exchange1_fixed_point,
    plan_swap,
    swap_gain,
    swap_positions,
    traffic_cost,
)

GRAN = to_units(0.5)
TWO_AS = [[0, 1], [1, 0]]


def chain(cap_b=2, cap_a=6):
    # OSS 0 -> b (1) -> a (2)
    w = world_from([[0]], [(0, 30, 0), (0, cap_b, None), (0, cap_a, None)])
    attach(w, 1, 0, {0: N})
    attach(w, 2, 0, {1: N})
    return w


def test_swap_with_parent_reverses_the_link():
    w = chain()
    assert swap_positions(w, 2, 1, (0,))
    assert flow_set(w) == {(0, 2, 0, N), (2, 1, 0, N)}
    assert w.hop[0][2] == 1 and w.hop[0][1] == 2
    w.check_invariants()


def test_swap_is_an_involution_on_flows():
    w = chain()
    before = flow_set(w)
    swap_positions(w, 1, 2, (0,))
    swap_positions(w, 1, 2, (0,))
    assert flow_set(w) == before and w.hop[0][1] == 1 and w.hop[0][2] == 2


def test_unrelated_swap_relabels_neighbors():
    w = world_from([[0]], [(0, 30, 0)] + [(0, 6, None)] * 4)
    attach(w, 1, 0, {0: N})
    attach(w, 2, 0, {0: N})
    attach(w, 3, 0, {1: N})
    attach(w, 4, 0, {2: N})
    swap_positions(w, 3, 4, (0,))
    assert w.parents(3, 0) == {2: N} and w.parents(4, 0) == {1: N}


def test_swap_preconditions():
    w = chain()
    with pytest.raises(ValueError):
        swap_positions(w, 1, 1, (0,))
    with pytest.raises(ValueError):
        swap_positions(w, 0, 1, (0,))
    w2 = world_from([[0]], [(0, 30, 0), (0, 6, None), (0, 6, None)])
    attach(w2, 1, 0, {0: N})
    with pytest.raises(ValueError):
        swap_positions(w2, 1, 2, (0,))


def test_infeasible_swap_leaves_world_unchanged():
    # b (M=2) cannot take over a's two children
    w = world_from([[0]], [(0, 30, 0), (0, 2, None), (0, 6, None), (0, 5, None), (0, 5, None)])
    attach(w, 1, 0, {0: N})
    attach(w, 2, 0, {0: N})
    attach(w, 3, 0, {2: N})
    attach(w, 4, 0, {2: N})
    before = flow_set(w)
    assert plan_swap(w, 1, 2, (0,)) is None
    assert not swap_positions(w, 1, 2, (0,))
    assert flow_set(w) == before


def test_exchange1_moves_stronger_child_up():
    w = chain(cap_b=2, cap_a=6)
    assert exchange1_candidates(w, 2, 0) == [1]
    assert exchange1(w, 2, 0) == 1
    assert flow_set(w) == {(0, 2, 0, N), (2, 1, 0, N)}
    assert w.hop[0][2] == 1
    assert is_exchange1_fixed_point(w, 2, 0)


def test_exchange1_with_only_oss_parent_is_noop():
    w = world_from([[0]], [(0, 30, 0), (0, 6, None)])
    attach(w, 1, 0, {0: N})
    assert exchange1(w, 1, 0) == 0


def test_exchange1_tries_smallest_capacity_first(monkeypatch):
    # i (M=6, m=2) has parents a (M=3, m=2) and b (M=5, m=2)
    w = world_from([[0]], [(0, 30, 0), (0, 3, None), (0, 5, None), (0, 6, None), (0, 6, None), (0, 6, None), (0, 6, None)])
    half = N // 2
    attach(w, 1, 0, {0: N})
    attach(w, 2, 0, {0: N})
    attach(w, 3, 0, {1: half, 2: half})
    attach(w, 4, 0, {1: half, 2: half})
    attach(w, 5, 0, {3: N})
    assert sorted(exchange1_candidates(w, 3, 0)) == [1, 2]
    calls = []
    real = exchange.swap_positions
    monkeypatch.setattr(exchange, "swap_positions", lambda *a: calls.append(a[1:3]) or real(*a))
    exchange1(w, 3, 0)
    assert calls[0] == (3, 1)
    w.check_invariants()


def test_exchange1_blocked_by_other_content_uploads():
    # i uploads 2 Mbps of content 1, so taking over l's content-0 uploads would overflow M_i
    w = world_from([[0]], [(0, 30, 0), (0, 30, 1), (0, 2.5, None), (0, 3, None), (0, 6, None), (0, 6, None)], K=2)
    attach(w, 2, 0, {0: N})
    attach(w, 3, 0, {2: N})
    attach(w, 3, 1, {1: N})
    attach(w, 4, 1, {3: N})
    attach(w, 5, 0, {0: N})
    assert exchange1_candidates(w, 3, 0) == [2]
    assert plan_swap(w, 3, 2, (0,)) is None
    assert exchange1(w, 3, 0) == 0
    assert is_exchange1_fixed_point(w, 3, 0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 15), st.integers(1, 2))
def test_exchange1_reaches_fixed_point(seed, peers, K):
    rng = np.random.default_rng(seed)
    w = random_world(rng, peers, 3, K)
    admitted = [(v, k) for v, n in enumerate(w.nodes) if not n.is_oss for k in sorted(n.admitted)]
    if not admitted:
        return
    i, k = admitted[int(rng.integers(len(admitted)))]
    served = w.served_pairs
    exchange1(w, i, k)
    assert is_exchange1_fixed_point(w, i, k)
    assert w.served_pairs == served
    w.check_invariants()


def test_traffic_cost_examples():
    w = world_from(TWO_AS, [(0, 30, 0), (1, 10, None), (0, 30, 1), (1, 10, None)], K=2)
    assert traffic_cost(w, 1) == 0
    attach(w, 1, 0, {0: N})
    assert traffic_cost(w, 1) == 2 * N
    w3 = world_from([[0, 1, 2], [1, 0, 1], [2, 1, 0]], [(1, 30, 0), (0, 10, None), (0, 30, 1), (2, 10, None)], K=2)
    attach(w3, 1, 0, {0: N})
    attach(w3, 1, 1, {2: N})
    attach(w3, 3, 1, {1: N})
    # parent at d=2 for content 0, intra-AS parent for content 1, child at d=3
    assert traffic_cost(w3, 1) == 2 * N + 1 * N + 3 * N


def _crossed():
    # i in AS 0 fed from AS 1, j in AS 1 fed from AS 0; same bandwidth class
    w = world_from(TWO_AS, [(0, 30, 0), (1, 30, 0), (0, 4, None), (1, 4, None)])
    attach(w, 2, 0, {1: N})
    attach(w, 3, 0, {0: N})
    return w


def test_exchange2_commits_cost_reducing_swap():
    w = _crossed()
    assert traffic_cost(w, 2) + traffic_cost(w, 3) == 4 * N
    assert swap_gain(w, 2, 3, (0,)) == 2 * N
    weight = w.weighted_rate
    assert exchange2(w, 2, GRAN) == 3
    assert traffic_cost(w, 2) + traffic_cost(w, 3) == 2 * N
    assert w.weighted_rate == weight - 2 * N
    w.check_invariants()


def test_exchange2_without_same_class_peer_is_noop():
    w = world_from(TWO_AS, [(0, 30, 0), (1, 30, 0), (0, 4, None), (1, 6, None)])
    attach(w, 2, 0, {1: N})
    attach(w, 3, 0, {0: N})
    before = flow_set(w)
    assert exchange2(w, 2, GRAN) is None
    assert flow_set(w) == before


def test_exchange2_requires_strict_gain():
    w = world_from(TWO_AS, [(0, 30, 0), (1, 30, 0), (0, 4, None), (0, 4, None)])
    attach(w, 2, 0, {1: N})
    attach(w, 3, 0, {1: N})
    assert swap_gain(w, 2, 3, (0,)) == 0
    assert exchange2(w, 2, GRAN) is None


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 20), st.integers(1, 5), st.integers(1, 2))
def test_exchange2_matches_brute_force(seed, peers, as_count, K):
    rng = np.random.default_rng(seed)
    w = random_world(rng, peers, as_count, K, caps=[2.0, 2.2, 4.0])
    viewers = [v for v, n in enumerate(w.nodes) if n.viewing]
    if not viewers:
        return
    i = viewers[int(rng.integers(len(viewers)))]
    partner, flows = brute_exchange2(w, i, GRAN)
    weight = w.weighted_rate
    assert exchange2(w, i, GRAN) == partner
    assert flow_set(w) == flows
    assert w.weighted_rate <= weight
    w.check_invariants()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_closed_form_gain_matches_plan(seed):
    rng = np.random.default_rng(seed)
    w = random_world(rng, 12, 4, 2, caps=[2.0, 4.0])
    viewers = [v for v, n in enumerate(w.nodes) if n.viewing]
    for a in viewers:
        for b in viewers:
            shared = sorted(w.nodes[a].admitted & w.nodes[b].admitted)
            if a == b or not shared:
                continue
            plan = plan_swap(w, a, b, shared)
            gain = swap_gain(w, a, b, shared)
            assert (plan is None) == (gain is None)
            if plan is not None:
                assert gain == -plan.weight_delta(w)
                clone = copy.deepcopy(w)
                z = traffic_cost(clone, a) + traffic_cost(clone, b)
                swap_positions(clone, a, b, shared)
                assert z - traffic_cost(clone, a) - traffic_cost(clone, b) == gain


def test_best_exchange2_breaks_ties_by_id():
    w = world_from(TWO_AS, [(0, 30, 0), (1, 30, 0), (0, 4, None), (1, 4, None), (1, 4, None)])
    attach(w, 2, 0, {1: N})
    attach(w, 3, 0, {0: N})
    attach(w, 4, 0, {0: N})
    assert best_exchange2(w, 2, GRAN) == (2 * N, 3)
