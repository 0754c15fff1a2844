import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relusat.sat import (
    Assignment,
    ClauseDb,
    Reason,
    analyze_conflict,
    any_open,
    bcp,
    bcp_batch,
    boolean_abstraction,
    decide,
    lit,
    literal_name,
    var_of,
)
from relusat.abstraction import NeuronBounds

from conftest import two_layer_example


def test_literal_encoding():
    assert lit(0) == 1 and lit(0, False) == -1
    assert var_of(-7) == 6
    assert literal_name(two_layer_example(), lit(3, False)) == "~v11"


def test_abstraction_has_one_tautology_per_neuron():
    variables, db = boolean_abstraction(two_layer_example())
    assert variables == [0, 1, 2, 3]
    assert len(db.initial) == 4 and len(db) == 0
    assert all(c.literals == frozenset((v + 1, -(v + 1))) for v, c in enumerate(db.initial))


def test_duplicate_clauses_are_ignored():
    db = ClauseDb(3)
    assert db.add((1, -2))
    assert not db.add((-2, 1))
    assert len(db) == 1
    with pytest.raises(ValueError):
        db.add((1, -1))


def test_double_assignment_rejected():
    s = Assignment(2)
    s.decide(1)
    with pytest.raises(ValueError):
        s.decide(-1)


def test_unit_propagation_chain():
    db = ClauseDb(4)
    db.add((-1, 2))  # a -> b
    db.add((-2, 3))  # b -> c
    db.add((-3, -1, 4))  # c & a -> d
    s = Assignment(4)
    s.decide(1)
    res = bcp(db, s)
    assert res.consistent and res.implied == 3
    assert s.values == [1, 1, 1, 1]
    assert all(s.kind[v] is Reason.IMPLIED for v in (1, 2, 3))
    assert s.reason_clause[1] == (-1, 2)
    g = s.graph()
    assert g.is_acyclic()
    assert g.in_degree(4) == 2


def test_bcp_reports_falsified_clause():
    db = ClauseDb(3)
    db.add((-1, 2))
    db.add((-1, -2))
    s = Assignment(3)
    s.decide(1)
    res = bcp(db, s)
    assert not res.consistent
    assert set(res.conflict) in ({-1, 2}, {-1, -2})


def test_theory_conflict_learns_negated_decisions():
    s = Assignment(3)
    s.decide(-2)
    assert analyze_conflict(s) == (2,)
    s = Assignment(3)
    s.decide(2)
    s.decide(1)
    assert analyze_conflict(s) == (-1, -2)


def test_first_uip_on_textbook_graph():
    # level 1: x1; level 2: x2 -> x3 (with x1), x3 -> x4, x3 -> x5, conflict on (~x4 | ~x5)
    db = ClauseDb(5)
    for c in [(-1, -2, 3), (-3, 4), (-3, 5), (-4, -5)]:
        db.add(c)
    s = Assignment(5)
    s.decide(1)
    assert bcp(db, s).consistent
    s.decide(2)
    res = bcp(db, s)
    assert not res.consistent
    learned = analyze_conflict(s, res.conflict)
    # x3 dominates the conflict at level 2
    assert set(learned) == {-3}
    # asserting: exactly one literal of the current level
    assert sum(1 for l in learned if s.level[var_of(l)] == 2) == 1


def test_first_uip_keeps_lower_level_literals():
    db = ClauseDb(4)
    for c in [(-1, -2, 3), (-1, -2, 4), (-3, -4)]:
        db.add(c)
    s = Assignment(4)
    s.decide(1)
    bcp(db, s)
    s.decide(2)
    res = bcp(db, s)
    learned = analyze_conflict(s, res.conflict)
    assert set(learned) == {-1, -2}


def test_conflict_at_level_zero_learns_empty_clause():
    db = ClauseDb(2)
    db.add((1,))
    db.add((-1,))
    s = Assignment(2)
    res = bcp(db, s)
    assert not res.consistent
    assert analyze_conflict(s, res.conflict) == ()


def test_learned_clause_is_falsified_by_conflicting_assignment():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = 6
        db = ClauseDb(n)
        for _ in range(8):
            vs = rng.choice(n, int(rng.integers(1, 4)), replace=False)
            db.add(tuple(int(v + 1) * int(rng.choice([-1, 1])) for v in vs))
        s = Assignment(n)
        res = bcp(db, s)
        while res.consistent and not s.complete():
            v = int(rng.choice(s.unassigned()))
            s.decide(lit(v, bool(rng.random() < 0.5)))
            res = bcp(db, s)
        if res.consistent:
            continue
        learned = analyze_conflict(s, res.conflict)
        # every literal of the learned clause is false under the conflicting assignment
        assert all(s.value(l) == -1 for l in learned)


def test_decide_prefers_wide_straddling_neuron():
    b = NeuronBounds(np.array([-1.0, -3.0, 0.5]), np.array([1.0, 2.0, 1.0]), np.zeros(1), np.zeros(1))
    s = Assignment(3)
    l = decide(b, s, np.random.default_rng(0))
    assert var_of(l) == 1
    s.decide(l)
    assert var_of(decide(b, s, np.random.default_rng(0))) == 0
    jitter = np.array([0.5, 0.1, 1.0])
    assert var_of(decide(b, Assignment(3), np.random.default_rng(0), jitter)) == 0


def test_decide_returns_none_when_complete():
    b = NeuronBounds(np.zeros(1), np.ones(1), np.zeros(1), np.zeros(1))
    s = Assignment(1)
    s.decide(1)
    assert decide(b, s, np.random.default_rng(0)) is None


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_batched_scan_agrees_with_bcp(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    db = ClauseDb(n)
    for _ in range(int(rng.integers(1, 12))):
        vs = rng.choice(n, int(rng.integers(1, min(n, 4) + 1)), replace=False)
        db.add(tuple(int(v + 1) * int(rng.choice([-1, 1])) for v in vs), resolve=bool(seed % 2))
    sigmas = []
    for _ in range(6):
        s = Assignment(n)
        for v in rng.choice(n, int(rng.integers(0, n + 1)), replace=False):
            s.decide(lit(int(v), bool(rng.random() < 0.5)))
        sigmas.append(s)
    flags = any_open(db, np.array([s.values for s in sigmas]))
    for s, flag in zip(sigmas, flags):
        probe = s.copy()
        res = bcp(db, probe)
        changed = res.implied > 0 or not res.consistent
        assert bool(flag) == changed
    batch = bcp_batch(db, [s.copy() for s in sigmas])
    single = [bcp(db, s.copy()) for s in sigmas]
    assert [(r.conflict is None, r.implied) for r in batch] == [(r.conflict is None, r.implied) for r in single]


def test_dead_siblings_resolve_to_their_parent():
    db = ClauseDb(4)
    # leaves under decisions (1, 2): both values of 3 are dead; last decision first
    assert db.add((-3, -2, -1), resolve=True)
    assert db.add((3, -2, -1), resolve=True)
    assert frozenset((-1, -2)) in db.clause_sets()
    # the other child of 1 closes too, which closes 1 itself
    db.add((2, -1), resolve=True)
    sets = db.clause_sets()
    assert frozenset((-1,)) in sets
    assert {frozenset((-1, -2, -3)), frozenset((-1, -2, 3)), frozenset((-1, 2))} <= sets
    # only the root-most resolvent is still scanned
    signed, lens = db.signed()
    assert db.num_active == 1 and lens.tolist() == [1.0]
    assert signed[0].tolist() == [-1.0, 0.0, 0.0, 0.0]


def test_resolution_is_on_the_first_literal_only():
    db = ClauseDb(3)
    db.add((-1, -2), resolve=True)
    db.add((-1, 2), resolve=True)
    assert len(db) == 2
    db.add((2, -1), resolve=True)  # already stored, nothing happens
    assert len(db) == 2
    db.add((1, -3), resolve=True)
    db.add((-3, 1), resolve=True)  # same clause
    assert len(db) == 3


def test_resolution_down_to_the_empty_clause():
    db = ClauseDb(2)
    db.add((2, 1), resolve=True)
    db.add((-2, 1), resolve=True)
    assert not db.has_empty()
    db.add((-1,), resolve=True)
    assert db.has_empty()


def test_plain_add_does_not_resolve():
    db = ClauseDb(3)
    db.add((-1, -2))
    db.add((-1, 2))
    assert len(db) == 2 and db.num_active == 2
