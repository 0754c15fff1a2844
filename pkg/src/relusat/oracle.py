"""Brute-force reference verifier and random falsifier.

``enumerate_verify`` walks every activation pattern. With all phases fixed the
network is an affine map of the input, so each pattern is one LP over the
input box: sign rows for every neuron plus the disjunct rows with a margin
variable to maximize. Nothing here touches the abstraction or the clause
machinery; only the LP kernel is shared with the search.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .lp import INF, LinearProgram, LpSession, Sense, Status
from .network import infer
from .search import Status as VerdictStatus
from .search import Verdict, verify_witness

MAX_NEURONS = 16


class OracleRefused(ValueError):
    pass


class Outcome(str, Enum):
    REGION_EMPTY = "region_empty"
    PROPERTY_HOLDS = "property_holds"
    COUNTEREXAMPLE = "counterexample"
    # the LP says the region reaches past the boundary, but not by enough to
    # give a validated witness
    BORDERLINE = "borderline"


@dataclass
class PatternResult:
    pattern: tuple[int, ...]
    outcome: Outcome
    witness: np.ndarray | None = None
    margin: float | None = None


@dataclass
class PatternEnumeration:
    total: int
    results: dict[tuple[int, ...], PatternResult] = field(default_factory=dict)
    lp_calls: int = 0

    def covered(self) -> bool:
        return len(self.results) == self.total

    def count(self, outcome: Outcome) -> int:
        return sum(1 for r in self.results.values() if r.outcome is outcome)

    def witnesses(self) -> list[np.ndarray]:
        return [r.witness for r in self.results.values() if r.outcome is Outcome.COUNTEREXAMPLE]


def _region_lp(lower, upper, rows) -> tuple[LinearProgram, list[int]]:
    lp = LinearProgram()
    xs = [lp.add_var(f"x{i}", float(lower[i]), float(upper[i])) for i in range(len(lower))]
    for coeffs, rel, rhs in rows:
        lp.add_row({xs[i]: float(c) for i, c in enumerate(coeffs) if c != 0.0}, rel, float(rhs))
    return lp, xs


def _sign_rows(A: np.ndarray, b: np.ndarray, pattern) -> list:
    """Rows saying pre-activation ``A x + b`` has the sign given by ``pattern``."""
    return [(A[j], ">=" if p > 0 else "<=", -b[j]) for j, p in enumerate(pattern)]


class _Enumerator:
    def __init__(self, problem, tol: Tolerances):
        self.problem = problem
        self.net = problem.network
        self.prop = problem.property
        self.tol = tol
        self.result = PatternEnumeration(2**self.net.num_hidden)

    def _feasible(self, rows) -> Status:
        lp, _ = _region_lp(self.prop.lower, self.prop.upper, rows)
        self.result.lp_calls += 1
        return LpSession(lp, self.tol).check_feasible().status

    def _mark_empty(self, prefix, layer):
        rest = self.net.hidden_sizes[layer:]
        for tail in itertools.product((1, -1), repeat=sum(rest)):
            pat = prefix + tail
            self.result.results[pat] = PatternResult(pat, Outcome.REGION_EMPTY)

    def walk(self, layer: int, prefix: tuple, rows: list, A: np.ndarray, b: np.ndarray):
        hidden = self.net.hidden_layers
        if layer == len(hidden):
            self._leaf(prefix, rows, A, b)
            return
        W, c = hidden[layer].weights, hidden[layer].biases
        ZA, Zb = W @ A, W @ b + c
        for local in itertools.product((1, -1), repeat=W.shape[0]):
            sub = rows + _sign_rows(ZA, Zb, local)
            if layer + 1 < len(hidden):
                # prune whole subtrees whose prefix region is already empty
                if self._feasible(sub) is Status.INFEASIBLE:
                    self._mark_empty(prefix + local, layer + 1)
                    continue
            mask = np.array(local) > 0
            self.walk(layer + 1, prefix + local, sub, ZA * mask[:, None], Zb * mask)

    def _leaf(self, pattern, rows, A, b):
        last = self.net.layers[-1]
        YA, Yb = last.weights @ A, last.weights @ b + last.biases
        best = None
        empty = True
        borderline = False
        for disjunct in self.prop.negated_output:
            lp, xs = _region_lp(self.prop.lower, self.prop.upper, rows)
            t = lp.add_var("t", -INF, INF)
            C, d = disjunct.matrix, disjunct.rhs
            # C (YA x + Yb) + t <= d
            for crow, rhs in zip(C @ YA, d - C @ Yb):
                coeffs = {xs[i]: float(v) for i, v in enumerate(crow) if v != 0.0}
                coeffs[t] = 1.0
                lp.add_row(coeffs, "<=", float(rhs))
            self.result.lp_calls += 1
            res = LpSession(lp, self.tol).optimize({t: 1.0}, Sense.MAX)
            if res.status is Status.INFEASIBLE:
                continue
            empty = False
            if not res.optimal:
                borderline = True
                continue
            if res.value <= self.tol.feas:
                continue
            x = np.clip(res.point[xs], self.prop.lower, self.prop.upper)
            if verify_witness(self.problem, x, self.tol.witness_margin):
                if best is None or res.value > best[0]:
                    best = (res.value, x)
            else:
                borderline = True
        if empty:
            out = PatternResult(pattern, Outcome.REGION_EMPTY)
        elif best is not None:
            out = PatternResult(pattern, Outcome.COUNTEREXAMPLE, best[1], best[0])
        elif borderline:
            out = PatternResult(pattern, Outcome.BORDERLINE)
        else:
            out = PatternResult(pattern, Outcome.PROPERTY_HOLDS)
        self.result.results[pattern] = out


def enumerate_patterns(problem, tol: Tolerances = DEFAULT_TOLERANCES) -> PatternEnumeration:
    net = problem.network
    if net.num_hidden > MAX_NEURONS:
        raise OracleRefused(f"{net.num_hidden} hidden neurons exceeds the oracle cap of {MAX_NEURONS}")
    en = _Enumerator(problem, tol)
    n = net.input_dim
    en.walk(0, (), [], np.eye(n), np.zeros(n))
    return en.result


def enumerate_verify(problem, tol: Tolerances = DEFAULT_TOLERANCES) -> Verdict:
    """Exact verdict by exhaustive pattern enumeration.

    Sat when some pattern yields a validated witness (the one with the largest
    margin is returned); Unknown when none does but some pattern's LP optimum
    lands between the feasibility tolerance and the witness margin; Unsat
    otherwise.
    """
    enum = enumerate_patterns(problem, tol)
    found = [r for r in enum.results.values() if r.outcome is Outcome.COUNTEREXAMPLE]
    if found:
        best = max(found, key=lambda r: r.margin)
        return Verdict(VerdictStatus.SAT, best.witness, infer(problem.network, best.witness))
    if enum.count(Outcome.BORDERLINE):
        return Verdict(VerdictStatus.UNKNOWN, reason="borderline pattern without a validated witness")
    return Verdict(VerdictStatus.UNSAT)


def sample_falsify(problem, trials: int = 10_000, rng=None, margin: float = 1e-6, chunk: int = 4096) -> np.ndarray | None:
    """First uniformly sampled box point whose output violates the property by more than ``margin``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng)
    prop = problem.property
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        xs = rng.uniform(prop.lower, prop.upper, size=(m, len(prop.lower)))
        ys = infer(problem.network, xs)
        viol = np.atleast_1d(prop.violation_margin(ys))
        hits = np.flatnonzero(viol > margin)
        if hits.size:
            return xs[hits[0]]
        done += m
    return None
