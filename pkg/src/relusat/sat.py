"""Propositional side of the DPLL(T) search over neuron activation phases.

One Boolean variable per hidden neuron (flat index). Literals are non-zero
ints in the DIMACS style: ``v + 1`` says neuron ``v`` is active, ``-(v + 1)``
says it is inactive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


def lit(var: int, active: bool = True) -> int:
    return var + 1 if active else -(var + 1)


def var_of(literal: int) -> int:
    return abs(literal) - 1


def is_active(literal: int) -> bool:
    return literal > 0


def literal_name(net, literal: int) -> str:
    layer, pos = net.neuron_id(var_of(literal))
    return f"{'' if literal > 0 else '~'}v{layer}{pos}"


class Origin(str, Enum):
    INITIAL = "initial"
    LEARNED = "learned"


@dataclass(frozen=True)
class Clause:
    literals: frozenset[int]
    origin: Origin = Origin.LEARNED

    def __post_init__(self):
        vars_ = [var_of(l) for l in self.literals]
        if len(set(vars_)) != len(vars_) and self.origin is not Origin.INITIAL:
            raise ValueError("clause mentions a variable twice")


class ClauseDb:
    """Append-only clause store with an occurrence index over learned clauses.

    Clauses are never removed, but one that is subsumed by a resolvent of two
    stored clauses is left out of the batch scan (``signed``): whenever it
    would be unit or falsified, its subsumer is too.
    """

    def __init__(self, num_vars: int):
        self.num_vars = num_vars
        self.initial: list[Clause] = [Clause(frozenset((lit(v), lit(v, False))), Origin.INITIAL) for v in range(num_vars)]
        self.learned: list[tuple[int, ...]] = []
        self._ids: dict[frozenset[int], int] = {}
        self.occurs: dict[int, list[int]] = {}  # literal -> learned clause ids containing it
        # learned clauses again as a zero-padded literal matrix, and as signed
        # rows over the variables (+1 / -1 per literal) for batch scans
        self._mat = np.zeros((16, 4), dtype=np.int32)
        self._signed = np.zeros((16, num_vars), dtype=np.float32)
        self._lens = np.zeros(16, dtype=np.float32)
        self._active = np.zeros(16, dtype=bool)
        self._scan = None  # cached (signed, lens) of the active clauses

    def __len__(self):
        return len(self.learned)

    def matrix(self) -> np.ndarray:
        return self._mat[: len(self.learned)]

    def signed(self) -> tuple[np.ndarray, np.ndarray]:
        """Signed literal rows and lengths of the clauses the batch scan needs."""
        if self._scan is None:
            act = self._active[: len(self.learned)]
            self._scan = (self._signed[: len(self.learned)][act], self._lens[: len(self.learned)][act])
        return self._scan

    @property
    def num_active(self) -> int:
        return int(self._active[: len(self.learned)].sum())

    def _store(self, cid: int, clause: tuple[int, ...]):
        rows, width = self._mat.shape
        if cid >= rows or len(clause) > width:
            new_rows = max(rows, 2 * cid + 2)
            grown = np.zeros((new_rows, max(width, len(clause))), dtype=np.int32)
            grown[:rows, :width] = self._mat
            self._mat = grown
            if new_rows > rows:
                signed = np.zeros((new_rows, self.num_vars), dtype=np.float32)
                signed[:rows] = self._signed
                self._signed = signed
                self._lens = np.concatenate([self._lens, np.zeros(new_rows - rows, dtype=np.float32)])
                self._active = np.concatenate([self._active, np.zeros(new_rows - rows, dtype=bool)])
        arr = np.asarray(clause, dtype=np.int32)
        self._mat[cid, : len(clause)] = arr
        self._signed[cid, np.abs(arr) - 1] = np.sign(arr)
        self._lens[cid] = len(clause)
        self._active[cid] = True
        self._scan = None

    def add(self, literals, resolve: bool = False) -> bool:
        """Add a learned clause; returns False if it was already present.

        With ``resolve``, if the clause with its first literal negated is
        stored as well, the two are resolved on that literal, and the
        resolvent is treated the same way with its own first literal. For
        clauses that negate a decision sequence, last decision first (what
        ``analyze_conflict`` returns for theory conflicts), this turns two
        dead siblings into their parent's clause. Resolvents are stored too
        and retire the pair they came from from the batch scan.
        """
        literals = tuple(literals)
        key = frozenset(literals)
        if key in self._ids:
            return False
        if len({abs(l) for l in key}) != len(key):
            raise ValueError("clause mentions a variable twice")
        self._insert(key)
        while resolve and literals:
            rest = key - {literals[0]}
            twin = rest | {-literals[0]}
            if twin not in self._ids:
                break
            self._retire(key)
            self._retire(twin)
            if rest in self._ids:
                break
            self._insert(rest)
            literals, key = literals[1:], rest
        return True

    def _insert(self, key: frozenset[int]):
        cid = len(self.learned)
        self._ids[key] = cid
        clause = tuple(sorted(key, key=abs))
        self.learned.append(clause)
        self._store(cid, clause)
        for l in key:
            self.occurs.setdefault(l, []).append(cid)

    def _retire(self, key: frozenset[int]):
        self._active[self._ids[key]] = False
        self._scan = None

    def clause_sets(self) -> set[frozenset[int]]:
        return set(self._ids)

    def has_empty(self) -> bool:
        return frozenset() in self._ids


def boolean_abstraction(net) -> tuple[list[int], ClauseDb]:
    variables = list(range(net.num_hidden))
    return variables, ClauseDb(net.num_hidden)


class Reason(str, Enum):
    DECISION = "decision"
    IMPLIED = "implied"
    THEORY = "theory"


@dataclass
class Assignment:
    """Partial activation pattern plus the implication graph that produced it.

    ``reason_clause[v]`` is the clause that forced ``v`` (for theory
    implications, an explanation clause built from the decisions in force);
    decisions have none.
    """

    num_vars: int
    values: list[int] = field(default_factory=list)  # +1 / -1 / 0
    trail: list[int] = field(default_factory=list)
    level: dict[int, int] = field(default_factory=dict)
    kind: dict[int, Reason] = field(default_factory=dict)
    reason_clause: dict[int, tuple[int, ...]] = field(default_factory=dict)
    decisions: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.values:
            self.values = [0] * self.num_vars

    def copy(self) -> Assignment:
        return Assignment(
            self.num_vars,
            list(self.values),
            list(self.trail),
            dict(self.level),
            dict(self.kind),
            dict(self.reason_clause),
            list(self.decisions),
        )

    def value(self, literal: int) -> int:
        """+1 if the literal is true, -1 if false, 0 if unassigned."""
        v = self.values[abs(literal) - 1]
        return v if literal > 0 else -v

    def is_assigned(self, var: int) -> bool:
        return self.values[var] != 0

    def unassigned(self) -> list[int]:
        return [v for v, val in enumerate(self.values) if val == 0]

    def complete(self) -> bool:
        return all(self.values)

    @property
    def decision_level(self) -> int:
        return len(self.decisions)

    def phases(self) -> np.ndarray:
        return np.array(self.values, dtype=np.int8)

    def _bind(self, literal: int, kind: Reason, reason: tuple[int, ...] | None = None):
        v = var_of(literal)
        if self.values[v] != 0:
            raise ValueError(f"variable {v} is already assigned")
        self.values[v] = 1 if literal > 0 else -1
        self.trail.append(literal)
        self.kind[v] = kind
        if reason is not None:
            self.reason_clause[v] = reason
        if kind is Reason.DECISION:
            self.decisions.append(literal)
        self.level[v] = len(self.decisions)

    def decide(self, literal: int):
        self._bind(literal, Reason.DECISION)

    def imply(self, literal: int, clause: tuple[int, ...]):
        self._bind(literal, Reason.IMPLIED, clause)

    def imply_theory(self, literal: int):
        """Bind a theory consequence of the current decisions."""
        explanation = (literal,) + tuple(-d for d in self.decisions)
        self._bind(literal, Reason.THEORY, explanation)

    def graph(self, conflict: tuple[int, ...] | None = None) -> ImplicationGraph:
        edges = []
        for l in self.trail:
            v = var_of(l)
            for q in self.reason_clause.get(v, ()):
                if var_of(q) != v:
                    edges.append((-q, l))
        if conflict is not None:
            edges.extend((-q, None) for q in conflict)
        return ImplicationGraph(tuple(self.trail), tuple(edges), conflict)


@dataclass(frozen=True)
class ImplicationGraph:
    """Nodes are the true literals on the trail; an edge (p, q) says p helped force q.

    A ``None`` head denotes the conflict node.
    """

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int | None], ...]
    conflict: tuple[int, ...] | None = None

    def is_acyclic(self) -> bool:
        order = {l: i for i, l in enumerate(self.nodes)}
        return all(q is None or order[p] < order[q] for p, q in self.edges)

    def in_degree(self, node: int) -> int:
        return sum(1 for _, q in self.edges if q == node)


@dataclass
class BcpResult:
    conflict: tuple[int, ...] | None = None
    implied: int = 0

    @property
    def consistent(self) -> bool:
        return self.conflict is None


def _open_clauses(db: ClauseDb, sigma: Assignment, ids: np.ndarray) -> np.ndarray:
    """Ids among ``ids`` whose clause is currently unit or falsified."""
    if ids.size == 0:
        return ids
    lits = db.matrix()[ids]
    vals = np.zeros(sigma.num_vars + 1, dtype=np.int8)
    vals[1:] = sigma.values
    lv = vals[np.abs(lits)] * np.sign(lits)  # padding reads as 0 * 0
    satisfied = (lv > 0).any(axis=1)
    free = ((lv == 0) & (lits != 0)).sum(axis=1)
    return ids[~satisfied & (free <= 1)]


def bcp(db: ClauseDb, sigma: Assignment, start: int = 0, fresh_from: int | None = None) -> BcpResult:
    """Unit propagation to fixpoint.

    Clauses with id >= ``start`` are checked in full first (new since the
    assignment was last propagated); afterwards only clauses containing the
    negation of a newly assigned literal are revisited. Pass ``start=0`` to
    check everything. ``fresh_from`` marks the trail position from which
    literals are treated as new (defaults to the whole trail).
    """
    learned = db.learned
    implied = 0
    cand = [np.arange(start, len(learned))]
    trail_pos = 0 if fresh_from is None else fresh_from
    while True:
        for l in sigma.trail[trail_pos:]:
            occ = db.occurs.get(-l)
            if occ:
                cand.append(np.asarray(occ))
        trail_pos = len(sigma.trail)
        if not cand:
            return BcpResult(None, implied)
        ids = np.unique(np.concatenate(cand)) if len(cand) > 1 else cand[0]
        cand = []
        queue = _open_clauses(db, sigma, ids).tolist()
        if not queue:
            return BcpResult(None, implied)
        for cid in queue:
            clause = learned[cid]
            unassigned = None
            n_unassigned = 0
            satisfied = False
            for l in clause:
                val = sigma.values[abs(l) - 1]
                if val == 0:
                    n_unassigned += 1
                    unassigned = l
                    if n_unassigned > 1:
                        break
                elif (val > 0) == (l > 0):
                    satisfied = True
                    break
            if satisfied or n_unassigned > 1:
                continue
            if n_unassigned == 0:
                return BcpResult(clause, implied)
            sigma.imply(unassigned, clause)
            implied += 1
        if trail_pos >= len(sigma.trail):
            return BcpResult(None, implied)


def any_open(db: ClauseDb, values: np.ndarray, chunk_cells: int = 1 << 22) -> np.ndarray:
    """For each row of ``values`` (a batch of +1/-1/0 assignments), whether some
    learned clause is unit or falsified under it.

    Two matrix products give, per (assignment, clause), the number of true
    literals and the number of assigned ones.
    """
    values = np.asarray(values, dtype=np.float32)
    out = np.zeros(len(values), dtype=bool)
    signed, lens = db.signed()
    if len(signed) == 0 or len(values) == 0:
        return out
    mag = np.abs(signed)
    step = max(1, chunk_cells // len(signed))
    for i in range(0, len(values), step):
        v = values[i : i + step]
        assigned = np.abs(v) @ mag.T
        true = 0.5 * (v @ signed.T + assigned)
        out[i : i + step] = ((true < 0.5) & (lens - assigned < 1.5)).any(axis=1)
    return out


def bcp_batch(db: ClauseDb, sigmas: list[Assignment]) -> list[BcpResult]:
    """Full BCP of every assignment; the scan is shared, propagation runs only where needed."""
    if not sigmas:
        return []
    need = any_open(db, np.array([s.values for s in sigmas], dtype=np.int8))
    return [bcp(db, s) if flag else BcpResult() for s, flag in zip(sigmas, need)]


def analyze_conflict(sigma: Assignment, conflict: tuple[int, ...] | None = None) -> tuple[int, ...]:
    """Learned clause for a conflict.

    With a falsified ``conflict`` clause from BCP this is the first-UIP clause
    obtained by resolving backwards along the trail. Without one (the theory
    rejected ``sigma``) it is the negation of the decision sequence. An empty
    result means the conflict holds with no decisions at all.
    """
    if conflict is None:
        return tuple(-d for d in reversed(sigma.decisions))
    if not conflict:
        return ()
    current = max(sigma.level[var_of(l)] for l in conflict)
    if current == 0:
        return ()
    seen: set[int] = set()
    learned: list[int] = []
    counter = 0
    idx = len(sigma.trail) - 1
    clause = conflict
    pivot_var = None
    while True:
        for q in clause:
            v = var_of(q)
            if v == pivot_var or v in seen:
                continue
            seen.add(v)
            lvl = sigma.level[v]
            if lvl == current:
                counter += 1
            elif lvl > 0:
                learned.append(q)
        while var_of(sigma.trail[idx]) not in seen:
            idx -= 1
        p = sigma.trail[idx]
        idx -= 1
        counter -= 1
        pivot_var = var_of(p)
        if counter == 0:
            break
        reason = sigma.reason_clause.get(pivot_var)
        if reason is None:
            # an unexplained literal above the UIP: keep it as a cut literal
            learned.append(-p)
            clause = ()
            continue
        clause = reason
    learned.append(-p)
    return tuple(learned)


def decide(bounds, sigma: Assignment, rng: np.random.Generator, jitter: np.ndarray | None = None) -> int | None:
    """Pick a branching literal, or None when every variable is assigned.

    The variable maximizes ``min(|lo|, |hi|) * (hi - lo)`` over unassigned
    neurons (optionally scaled by a per-variable ``jitter``); its polarity is
    drawn from ``rng``.
    """
    free = np.flatnonzero(np.asarray(sigma.values) == 0)
    if free.size == 0:
        return None
    lo, hi = bounds.pre_lo[free], bounds.pre_hi[free]
    score = np.minimum(np.abs(lo), np.abs(hi)) * (hi - lo)
    if jitter is not None:
        score = score * jitter[free]
    v = int(free[np.argmax(score)])
    return lit(v, bool(rng.random() < 0.5))


def decide_batch(lo: np.ndarray, hi: np.ndarray, phases: np.ndarray, rng: np.random.Generator, jitter: np.ndarray | None = None) -> list[int]:
    """``decide`` for a stack of nodes, one row each; every row must have a free variable.

    Polarities are drawn in row order, so the result equals calling
    ``decide`` on each row in turn with the same generator.
    """
    score = np.minimum(np.abs(lo), np.abs(hi)) * (hi - lo)
    if jitter is not None:
        score = score * jitter
    score = np.where(phases == 0, score, -np.inf)
    v = np.argmax(score, axis=1)
    coins = rng.random(len(v)) < 0.5
    return [lit(int(a), bool(c)) for a, c in zip(v, coins)]
