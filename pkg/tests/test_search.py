import heapq

import numpy as np
import pytest

from relusat.config import SearchConfig
from relusat.network import Network, infer
from relusat.search import Node, SearchObserver, Stats, Status, select, should_restart, verify, verify_witness
from relusat.sat import Assignment
from relusat.specio import Disjunct, Property, build_problem

from conftest import EXAMPLE_BOX, halfspace, random_problem, simple_property, two_layer_example


def _frontier(depths):
    heap = []
    for seq, d in enumerate(depths):
        heapq.heappush(heap, (-d, seq, f"n{seq}"))
    return heap


def test_select_deepest_first_then_insertion_order():
    heap = _frontier([0, 2, 1, 2, 3])
    assert select(heap, 3) == ["n4", "n1", "n3"]
    assert select(heap, 5) == ["n2", "n0"]
    assert select(heap, 1) == []


def test_should_restart_limits():
    cfg = SearchConfig(restart_node_limit=10, restart_frontier_limit=5)
    assert not should_restart(10, 5, cfg)
    assert should_restart(11, 0, cfg)
    assert should_restart(0, 6, cfg)
    # limits double after each restart
    assert not should_restart(11, 0, cfg, restarts_done=1)
    assert should_restart(21, 0, cfg, restarts_done=1)
    assert not should_restart(10**9, 10**9, SearchConfig(restarts=False))


def test_config_validation():
    for bad in (dict(beam_width=0), dict(stabilize_k=-1), dict(restart_node_limit=0), dict(restart_growth=0.5), dict(timeout=0)):
        with pytest.raises(ValueError):
            SearchConfig(**bad)
    cfg = SearchConfig(beam_width=3, timeout=2.5)
    assert SearchConfig.from_dict(cfg.to_dict()) == cfg


def test_verify_witness_boundary():
    net = Network.from_arrays([[[1.0]], [[1.0]]], [[0.0], [0.0]])  # y = relu(x)
    prob = build_problem(net, simple_property([-1.0], [1.0], [1.0], 0.5))  # y <= 0.5
    assert verify_witness(prob, [1.0])
    assert not verify_witness(prob, [0.5])  # on the boundary: zero violation
    assert not verify_witness(prob, [0.5 + 1e-7])  # below the margin
    assert verify_witness(prob, [0.5 + 1e-5])
    assert not verify_witness(prob, [1.5])  # outside the box
    assert not verify_witness(prob, [np.nan])
    assert not verify_witness(prob, [0.9, 0.1])


def test_node_depth_counts_decisions():
    s = Assignment(3)
    s.decide(1)
    s.imply(2, (-1, 2))
    assert Node(s).depth == 1


def test_trivial_unsat_and_sat():
    net = two_layer_example()
    out = infer(net, np.random.default_rng(0).uniform(*EXAMPLE_BOX, (5000, 2)))
    safe = build_problem(net, simple_property(*EXAMPLE_BOX, [1.0, 0.0], 50.0))
    v = verify(safe)
    assert v.status is Status.UNSAT and v.counterexample is None
    broken = build_problem(net, simple_property(*EXAMPLE_BOX, [1.0, 0.0], float(np.median(out[:, 0]))))
    v = verify(broken)
    assert v.status is Status.SAT
    assert verify_witness(broken, v.counterexample)
    np.testing.assert_array_equal(v.output, infer(net, v.counterexample))


def test_disjunctive_property_needs_all_disjuncts_refuted():
    net = Network.from_arrays([[[1.0]], [[1.0]]], [[0.0], [0.0]])  # y = relu(x)
    # property: y <= 0.5 or y >= 0.75; violated for y in (0.5, 0.75)
    prop = Property.from_condition([-1.0], [1.0], [Disjunct((halfspace([1.0], 0.5),)), Disjunct((halfspace([-1.0], -0.75),))])
    v = verify(build_problem(net, prop))
    assert v.status is Status.SAT and 0.5 < v.counterexample[0] < 0.75
    prop = Property.from_condition([-1.0], [0.6], [Disjunct((halfspace([1.0], 0.6),)), Disjunct((halfspace([-1.0], -5),))])
    assert verify(build_problem(net, prop)).status is Status.UNSAT


class Recorder(SearchObserver):
    def __init__(self):
        self.learned = []
        self.restarts = []
        self.stable = []

    def on_learn(self, decisions, clause, kind):
        self.learned.append((decisions, clause, kind))

    def on_restart(self, before, after):
        self.restarts.append((before, after))

    def on_stable(self, phases, literals, source):
        self.stable.append((phases, literals, source))


@pytest.mark.parametrize("seed", range(5))
def test_theory_clauses_negate_decisions(seed):
    prob = random_problem(np.random.default_rng(seed), [2, 4, 4, 2], radius=1.0, gap=0.05)
    rec = Recorder()
    verify(prob, SearchConfig(beam_width=1, stabilize_k=0, restarts=False), rec)
    for decisions, clause, kind in rec.learned:
        if kind == "theory":
            assert clause == tuple(-d for d in reversed(decisions))


def test_restarts_keep_clauses():
    prob = random_problem(np.random.default_rng(3), [3, 6, 6, 2], radius=1.0, gap=0.0)
    rec = Recorder()
    cfg = SearchConfig(beam_width=2, restart_node_limit=4, restart_frontier_limit=4, stabilize_k=0)
    v = verify(prob, cfg, rec)
    assert v.stats.restarts == len(rec.restarts) > 0
    for before, after in rec.restarts:
        assert before <= after


def test_timeout_is_reported():
    prob = random_problem(np.random.default_rng(1), [5, 30, 30, 30, 3], radius=2.0, gap=0.01)
    v = verify(prob, SearchConfig(timeout=0.05, stabilize_k=0))
    assert v.status is Status.TIMEOUT and v.reason
    assert v.stats.wall_time < 0.5


def test_stats_round_trip():
    prob = random_problem(np.random.default_rng(2), [2, 4, 2], radius=0.5)
    st = verify(prob).stats
    assert Stats.from_dict(st.to_dict()) == st
    assert "wall_time" not in st.counters()


@pytest.mark.parametrize("beam", [1, 3, 64])
def test_beam_widths_agree(beam):
    rng = np.random.default_rng(17)
    for _ in range(6):
        prob = random_problem(rng, [2, 4, 4, 2], radius=float(rng.uniform(0.2, 1.5)), gap=0.05)
        ref = verify(prob, SearchConfig(beam_width=1, stabilize_k=0, restarts=False)).status
        assert verify(prob, SearchConfig(beam_width=beam)).status is ref


def test_borderline_counterexample_gives_unknown():
    net = Network.from_arrays([[[1.0]], [[1.0]]], [[0.0], [0.0]])
    prob = build_problem(net, simple_property([0.0], [1.0 + 5e-7], [1.0], 1.0))
    v = verify(prob)
    assert v.status is Status.UNKNOWN and v.stats.witness_failures > 0


@pytest.mark.parametrize("seed", range(4))
def test_clauses_never_fire_before_first_restart(seed, monkeypatch):
    from relusat.search import DisjunctSearch

    monkeypatch.setattr(DisjunctSearch, "_clauses_can_fire", lambda self: True)
    prob = random_problem(np.random.default_rng(seed), [3, 6, 6, 2], radius=1.0, gap=0.02)
    for cfg in (SearchConfig(beam_width=1, restarts=False), SearchConfig(beam_width=8, restarts=False)):
        st = verify(prob, cfg).stats
        assert st.bcp_conflicts == 0 and st.bcp_implied == 0
