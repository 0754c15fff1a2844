"""DPLL(T) search over activation patterns with a beam of nodes per step.

Each step takes up to ``beam_width`` of the deepest pending nodes and runs
BCP, (early in the tree) LP stabilization, and abstraction-based deduction on
all of them; deduction is vectorized across the batch. Feasible nodes are
split on one neuron and both children are queued, so nothing is ever
backtracked. Conflict clauses found during a step are merged into the clause
database only once the whole step is done. Restarts throw the tree away but
keep the clauses.
"""

from __future__ import annotations

import gc
import heapq
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .abstraction import relaxed_bounds_batch
from .config import SearchConfig
from .network import infer
from .sat import Assignment, analyze_conflict, any_open, bcp, boolean_abstraction, decide_batch, lit
from .theory import deduce_batch, leaf_margins, root_signs, stabilize

log = logging.getLogger(__name__)


class Status(str, Enum):
    UNSAT = "unsat"
    SAT = "sat"
    UNKNOWN = "unknown"
    TIMEOUT = "timeout"


TIMED_PHASES = ("bcp", "stabilize", "deduce", "analyze", "decide", "witness")


@dataclass
class Stats:
    nodes: int = 0
    batches: int = 0
    decisions: int = 0
    conflicts: int = 0
    bcp_conflicts: int = 0
    theory_conflicts: int = 0
    learned: int = 0
    restarts: int = 0
    stabilize_calls: int = 0
    stabilized: int = 0
    lp_calls: int = 0
    theory_implied: int = 0
    bcp_implied: int = 0
    witness_checks: int = 0
    witness_failures: int = 0
    max_depth: int = 0
    wall_time: float = 0.0
    timings: dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in TIMED_PHASES})

    def counters(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        d.pop("timings")
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> Stats:
        return cls(**data)


@dataclass
class Verdict:
    status: Status
    counterexample: np.ndarray | None = None
    output: np.ndarray | None = None
    reason: str | None = None
    stats: Stats = field(default_factory=Stats)

    def __str__(self):
        return self.status.value


class SearchObserver:
    """Hooks for tests and tooling; every method is optional."""

    def on_stable(self, phases, literals, source):  # source: "stabilize" | "deduce"
        pass

    def on_learn(self, decisions, clause, kind):  # kind: "bcp" | "theory" | "witness"
        pass

    def on_restart(self, clauses_before, clauses_after):
        pass


def verify_witness(problem, point, margin: float = 1e-6) -> bool:
    """True iff ``point`` is in the box and its output violates the property by more than ``margin``."""
    point = np.asarray(point, dtype=np.float64)
    prop = problem.property
    if point.shape != (problem.network.input_dim,) or not np.all(np.isfinite(point)):
        return False
    if not prop.contains(point):
        return False
    y = infer(problem.network, point)
    return bool(prop.violation_margin(y) > margin)


def select(frontier: list, n: int) -> list:
    """Pop up to ``n`` nodes: deepest first, ties in insertion order."""
    batch = []
    while frontier and len(batch) < n:
        batch.append(heapq.heappop(frontier)[-1])
    return batch


def should_restart(nodes_since_restart: int, frontier_size: int, config: SearchConfig, restarts_done: int = 0) -> bool:
    """Restart once either limit is exceeded; limits grow by ``restart_growth`` per restart already done."""
    if not config.restarts:
        return False
    scale = config.restart_growth**restarts_done
    return nodes_since_restart > config.restart_node_limit * scale or frontier_size > config.restart_frontier_limit * scale


@dataclass
class Node:
    sigma: Assignment
    known_lo: np.ndarray | None = None
    known_hi: np.ndarray | None = None
    stabilized: bool = False

    @property
    def depth(self) -> int:
        return self.sigma.decision_level


# leaf LPs are solved in chunks of this size so the deadline is checked often
_LP_CHUNK = 256


class _Timeout(Exception):
    pass


class DisjunctSearch:
    """Search for a counterexample inside one disjunct of the negated output condition."""

    def __init__(self, problem, disjunct, config: SearchConfig, stats: Stats, deadline=None, observer=None, index=0):
        self.problem = problem
        self.net = problem.network
        self.disjunct = disjunct
        self.config = config
        self.tol = config.tolerances
        self.stats = stats
        self.deadline = deadline
        self.observer = observer or SearchObserver()
        self.index = index
        _, self.db = boolean_abstraction(self.net)
        self.restart_count = 0
        self.witness_failed = False
        self.signs = root_signs(problem)
        self._seq = 0
        self._reset()

    def _reset(self):
        self.rng = np.random.default_rng([self.config.seed, self.index, self.restart_count])
        n = self.net.num_hidden
        self.jitter = None if self.restart_count == 0 else self.rng.uniform(0.5, 1.5, n)
        self.frontier: list = []
        self.nodes_since_restart = 0
        self._push(Node(Assignment(n)))

    def _push(self, node: Node):
        self._seq += 1
        heapq.heappush(self.frontier, (-node.depth, self._seq, node))

    def _check_time(self):
        if self.deadline is not None and time.perf_counter() > self.deadline:
            raise _Timeout

    def run(self) -> Verdict:
        try:
            while True:
                self._check_time()
                batch = select(self.frontier, self.config.beam_width)
                self.stats.batches += 1
                self.stats.nodes += len(batch)
                self.nodes_since_restart += len(batch)
                witness, learned, children = self._process(batch)
                if witness is not None:
                    return Verdict(Status.SAT, witness, infer(self.net, witness))
                self._merge(learned)
                if self.db.has_empty():
                    return self._exhausted()
                for child in children:
                    self._push(child)
                if not self.frontier:
                    return self._exhausted()
                if should_restart(self.nodes_since_restart, len(self.frontier), self.config, self.restart_count):
                    before = self.db.clause_sets()
                    self.restart_count += 1
                    self.stats.restarts += 1
                    log.debug("restart %d after %d nodes, %d clauses", self.restart_count, self.nodes_since_restart, len(self.db))
                    self._reset()
                    self.observer.on_restart(before, self.db.clause_sets())
        except _Timeout:
            return Verdict(Status.TIMEOUT, reason="time budget exhausted")

    def _exhausted(self) -> Verdict:
        if self.witness_failed:
            return Verdict(Status.UNKNOWN, reason="a candidate counterexample failed validation")
        return Verdict(Status.UNSAT)

    def _merge(self, learned) -> int:
        t0 = time.perf_counter()
        added = 0
        for clause in learned:
            if self.db.add(clause, resolve=True):
                added += 1
        self.stats.learned += added
        self._timed("analyze", t0)
        return added

    # -- one beam step --------------------------------------------------------

    def _timed(self, phase, t0):
        self.stats.timings[phase] += time.perf_counter() - t0

    def _learn(self, node, conflict, kind, learned):
        t0 = time.perf_counter()
        self.stats.conflicts += 1
        if kind == "bcp":
            self.stats.bcp_conflicts += 1
        else:
            self.stats.theory_conflicts += 1
        clause = analyze_conflict(node.sigma, conflict if kind == "bcp" else None)
        learned.append(clause)
        self.observer.on_learn(tuple(node.sigma.decisions), clause, kind)
        self._timed("analyze", t0)

    def _clauses_can_fire(self) -> bool:
        # Before the first restart every learned clause negates the decisions
        # of a node in the current tree, and each live node differs from that
        # node in one of those decisions, so no clause is unit or falsified.
        return self.restart_count > 0

    def _bcp(self, node, trail_before: int) -> tuple | None:
        """Propagate the literals bound since ``trail_before``; the clause set is unchanged."""
        if not self._clauses_can_fire():
            return None
        t0 = time.perf_counter()
        res = bcp(self.db, node.sigma, start=len(self.db), fresh_from=trail_before)
        self.stats.bcp_implied += res.implied
        self._timed("bcp", t0)
        return res.conflict

    def _bcp_batch(self, nodes) -> list:
        if not nodes or not self._clauses_can_fire():
            return [None] * len(nodes)
        t0 = time.perf_counter()
        need = any_open(self.db, np.stack([nd.sigma.phases() for nd in nodes]))
        conflicts = []
        for nd, flag in zip(nodes, need):
            if not flag:
                conflicts.append(None)
                continue
            self._check_time()
            res = bcp(self.db, nd.sigma)
            self.stats.bcp_implied += res.implied
            conflicts.append(res.conflict)
        self._timed("bcp", t0)
        return conflicts

    def _assert_stable(self, node, literals, source) -> bool:
        fresh = [(v, p) for v, p in literals if not node.sigma.is_assigned(v)]
        if not fresh:
            return False
        self.observer.on_stable(node.sigma.phases(), fresh, source)
        for v, p in fresh:
            node.sigma.imply_theory(lit(v, p > 0))
        self.stats.theory_implied += len(fresh)
        return True

    def _known(self, nodes):
        n = self.net.num_hidden
        lo = np.stack([nd.known_lo if nd.known_lo is not None else np.full(n, -np.inf) for nd in nodes])
        hi = np.stack([nd.known_hi if nd.known_hi is not None else np.full(n, np.inf) for nd in nodes])
        return lo, hi

    def _process(self, batch):
        cfg = self.config
        prop = self.problem.property
        learned: list = []
        children: list = []
        alive = []
        for node, conflict in zip(batch, self._bcp_batch(batch)):
            if conflict is not None:
                self._learn(node, conflict, "bcp", learned)
            else:
                alive.append(node)
                self.stats.max_depth = max(self.stats.max_depth, node.depth)

        # stabilization, only near the top of the tree and once per node
        if cfg.stabilize_k > 0:
            elig = [nd for nd in alive if nd.depth < cfg.stabilize_max_depth and not nd.stabilized]
            if elig:
                t0 = time.perf_counter()
                klo, khi = self._known(elig)
                phases = np.stack([nd.sigma.phases() for nd in elig])
                bb = relaxed_bounds_batch(self.net, prop.lower, prop.upper, phases, klo, khi, slack=self.tol.bound_slack, symbolic=False)
                dead = set()
                for b, nd in enumerate(elig):
                    self._check_time()
                    nd.stabilized = True
                    if bb.infeasible[b]:
                        dead.add(id(nd))
                        self._learn(nd, None, "theory", learned)
                        continue
                    bounds = bb.node(b)
                    report = stabilize(self.problem, nd.sigma, bounds, cfg.stabilize_k, self.tol, self._check_time)
                    self.stats.stabilize_calls += 1
                    self.stats.lp_calls += report.lp_calls
                    if report.infeasible:
                        dead.add(id(nd))
                        self._learn(nd, None, "theory", learned)
                        continue
                    nd.known_lo = bounds.pre_lo.copy()
                    nd.known_hi = bounds.pre_hi.copy()
                    for v, (lo, hi) in report.tightened.items():
                        nd.known_lo[v], nd.known_hi[v] = lo, hi
                    self.stats.stabilized += len(report.newly_stable)
                    before = len(nd.sigma.trail)
                    self._assert_stable(nd, report.newly_stable, "stabilize")
                    conflict = self._bcp(nd, before)
                    if conflict is not None:
                        dead.add(id(nd))
                        self._learn(nd, conflict, "bcp", learned)
                alive = [nd for nd in alive if id(nd) not in dead]
                self._timed("stabilize", t0)

        if not alive:
            return None, learned, children
        t0 = time.perf_counter()
        klo, khi = self._known(alive)
        phases = np.stack([nd.sigma.phases() for nd in alive])
        outcomes = deduce_batch(self.problem, self.disjunct, phases, klo, khi, self.tol, cfg.full_lp)
        self._timed("deduce", t0)

        feasible = []
        grown = []
        for nd, out in zip(alive, outcomes):
            if not out.feasible:
                self._learn(nd, None, "theory", learned)
                continue
            nd.known_lo, nd.known_hi = out.bounds.pre_lo, out.bounds.pre_hi
            feasible.append((nd, out))
            if self._assert_stable(nd, out.implied, "deduce"):
                grown.append(nd)
        conflicts = dict(zip(map(id, grown), self._bcp_batch(grown)))

        leaves, inner = [], []
        for nd, out in feasible:
            conflict = conflicts.get(id(nd))
            if conflict is not None:
                self._learn(nd, conflict, "bcp", learned)
            elif nd.sigma.complete():
                leaves.append(nd)
            else:
                inner.append(nd)
        if inner:
            self._check_time()
            t0 = time.perf_counter()
            lo, hi = np.stack([nd.known_lo for nd in inner]), np.stack([nd.known_hi for nd in inner])
            phases = np.stack([nd.sigma.phases() for nd in inner])
            for nd, choice in zip(inner, decide_batch(lo, hi, phases, self.rng, self.jitter)):
                self.stats.decisions += 1
                for literal in (choice, -choice):
                    sigma = nd.sigma.copy()
                    sigma.decide(literal)
                    children.append(Node(sigma, nd.known_lo, nd.known_hi))
            self._timed("decide", t0)
        x = self._witness(leaves, learned)
        return x, learned, children

    def _witness(self, leaves, learned):
        """Max-margin LPs for all complete nodes of the step; the first validated point wins."""
        if not leaves:
            return None
        t0 = time.perf_counter()
        self.stats.witness_checks += len(leaves)
        self.stats.lp_calls += len(leaves)
        phases = np.stack([nd.sigma.phases() for nd in leaves])
        results = []
        for start in range(0, len(leaves), _LP_CHUNK):
            self._check_time()
            results += leaf_margins(self.problem, phases[start:start + _LP_CHUNK], self.disjunct, self.signs, self.tol)
        self._timed("witness", t0)
        for node, (status, margin, x) in zip(leaves, results):
            if status == "optimal" and margin > self.tol.feas:
                if verify_witness(self.problem, x, self.tol.witness_margin):
                    return x
                self.witness_failed = True
                self.stats.witness_failures += 1
            elif status not in ("optimal", "infeasible"):
                self.witness_failed = True
                self.stats.witness_failures += 1
            self._learn(node, None, "theory", learned)
        return None


@contextmanager
def _no_cyclic_gc():
    # search nodes hold no reference cycles, so refcounting frees them; the
    # cyclic collector would only rescan the frontier over and over
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def verify(problem, config: SearchConfig | None = None, observer: SearchObserver | None = None) -> Verdict:
    """Decide the property: UNSAT means it holds on the whole box."""
    with _no_cyclic_gc():
        return _verify(problem, config or SearchConfig(), observer)


def _verify(problem, config: SearchConfig, observer) -> Verdict:
    stats = Stats()
    start = time.perf_counter()
    deadline = None if config.timeout is None else start + config.timeout
    unknown = None
    for i, disjunct in enumerate(problem.property.negated_output):
        search = DisjunctSearch(problem, disjunct, config, stats, deadline, observer, i)
        verdict = search.run()
        if verdict.status in (Status.SAT, Status.TIMEOUT):
            verdict.stats = stats
            stats.wall_time = time.perf_counter() - start
            return verdict
        if verdict.status is Status.UNKNOWN:
            unknown = verdict
    stats.wall_time = time.perf_counter() - start
    if unknown is not None:
        unknown.stats = stats
        return unknown
    return Verdict(Status.UNSAT, stats=stats)
