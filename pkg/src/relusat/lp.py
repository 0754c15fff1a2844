"""Dense-tableau primal simplex for small linear programs.

Variables carry their own box bounds (bounded-variable simplex), constraint
rows get one slack each, and rows whose slack cannot absorb the initial
residual get an artificial variable for phase 1. A solved ``LpSession`` keeps
its basis, so re-optimizing with a new objective skips phase 1; that is how
bound tightening runs many objectives over one encoding.

``dual_simplex_batch`` is a separate solver for stacks of small LPs in
inequality form that all start from a known dual-feasible basis; the search
uses it for the leaf LPs of a whole beam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances

INF = math.inf


class Relation(str, Enum):
    LE = "<="
    GE = ">="
    EQ = "="


class Sense(str, Enum):
    MIN = "min"
    MAX = "max"


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iter_limit"


class LpInfeasible(Exception):
    pass


class LpError(ValueError):
    pass


@dataclass
class LinearProgram:
    names: list[str] = field(default_factory=list)
    lo: list[float] = field(default_factory=list)
    hi: list[float] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    sense: Sense = Sense.MIN
    # constraints in insertion order: single sparse rows ``(coeffs, relation, rhs)``
    # and dense blocks ``(A, relations, rhs)`` from add_rows
    _entries: list = field(default_factory=list, repr=False)
    _num_rows: int = field(default=0, repr=False)

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_rows(self) -> int:
        return self._num_rows

    @property
    def rows(self) -> list[tuple[dict[int, float], Relation, float]]:
        """Every constraint as a sparse row."""
        out = []
        for entry in self._entries:
            if isinstance(entry[0], dict):
                out.append(entry)
                continue
            A, rels, rhs = entry
            for row, rel, r in zip(A, rels, rhs.tolist()):
                nz = np.flatnonzero(row)
                out.append((dict(zip(nz.tolist(), row[nz].tolist())), rel, r))
        return out

    def add_var(self, name: str, lo: float = 0.0, hi: float = INF) -> int:
        if not (lo <= hi) or math.isnan(lo) or math.isnan(hi):
            raise LpError(f"variable {name!r} has empty or NaN bounds [{lo}, {hi}]")
        self.names.append(name)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        return len(self.names) - 1

    def index(self, name: str) -> int:
        return self.names.index(name)

    def _coeffs(self, coeffs) -> dict[int, float]:
        if isinstance(coeffs, Mapping):
            items = coeffs.items()
        else:
            items = enumerate(coeffs)
        out = {}
        for j, c in items:
            j = self.index(j) if isinstance(j, str) else int(j)
            if not 0 <= j < self.num_vars:
                raise LpError(f"constraint references undeclared variable {j}")
            c = float(c)
            if not math.isfinite(c):
                raise LpError("coefficients must be finite")
            if c != 0.0:
                out[j] = out.get(j, 0.0) + c
        return out

    def add_row(self, coeffs, relation: Relation | str, rhs: float) -> int:
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise LpError("right-hand side must be finite")
        self._entries.append((self._coeffs(coeffs), Relation(relation), rhs))
        self._num_rows += 1
        return self._num_rows - 1

    def add_rows(self, A, relations, rhs) -> None:
        """Bulk ``add_row`` from a dense matrix; ``relations`` may be one relation for all rows."""
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        rhs = np.asarray(rhs, dtype=np.float64).reshape(-1)
        if A.shape != (len(rhs), self.num_vars):
            raise LpError(f"row block has shape {A.shape}, expected ({len(rhs)}, {self.num_vars})")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(rhs))):
            raise LpError("coefficients and right-hand sides must be finite")
        rels = [Relation(relations)] * len(rhs) if isinstance(relations, (str, Relation)) else [Relation(r) for r in relations]
        if len(rels) != len(rhs):
            raise LpError("one relation per row expected")
        self._entries.append((A.copy(), rels, rhs.copy()))
        self._num_rows += len(rhs)

    def set_objective(self, coeffs, sense: Sense | str = Sense.MIN) -> None:
        self.objective = self._coeffs(coeffs)
        self.sense = Sense(sense)

    def dense(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self._num_rows
        A = np.zeros((m, self.num_vars))
        rel = np.empty(m, dtype=object)
        b = np.empty(m)
        i = 0
        for entry in self._entries:
            if isinstance(entry[0], dict):
                coeffs, r, rhs = entry
                if coeffs:
                    A[i, list(coeffs)] = list(coeffs.values())
                rel[i], b[i] = r.value, rhs
                i += 1
            else:
                block, rels, rhs = entry
                k, w = block.shape
                A[i : i + k, :w] = block
                rel[i : i + k] = [r.value for r in rels]
                b[i : i + k] = rhs
                i += k
        return A, rel, b

    def violation(self, x, scale: bool = True) -> float:
        """Largest constraint or bound violation of point ``x``."""
        x = np.asarray(x, dtype=np.float64)
        worst = float(np.max(np.maximum(np.asarray(self.lo) - x, x - np.asarray(self.hi)), initial=0.0))
        for coeffs, rel, rhs in self.rows:
            lhs = sum(c * x[j] for j, c in coeffs.items())
            gap = {"<=": lhs - rhs, ">=": rhs - lhs, "=": abs(lhs - rhs)}[rel.value]
            if scale:
                gap /= 1.0 + abs(rhs) + sum(abs(c * x[j]) for j, c in coeffs.items())
            worst = max(worst, gap)
        return worst


@dataclass
class LpOutcome:
    status: Status
    value: float | None = None
    point: np.ndarray | None = None
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class LpSession:
    """Simplex state for one LP that can be re-optimized under many objectives."""

    def __init__(self, lp: LinearProgram, tol: Tolerances = DEFAULT_TOLERANCES):
        self.lp = lp
        self.tol = tol
        self.pivots = 0
        n, m = lp.num_vars, lp.num_rows
        A, rel, b = lp.dense()
        self.n, self.m = n, m
        lo = np.array(lp.lo, dtype=np.float64)
        hi = np.array(lp.hi, dtype=np.float64)
        slo = np.where(rel == ">=", -INF, 0.0).astype(np.float64)
        shi = np.where(rel == "<=", INF, 0.0).astype(np.float64)
        x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        resid = b - A @ x if m else np.zeros(0)

        # slack basic where it can take the residual, otherwise an artificial
        fits = (slo - tol.feas <= resid) & (resid <= shi + tol.feas)
        basis = n + np.arange(m)
        svals = np.where(fits, resid, 0.0)
        art_rows = np.flatnonzero(~fits)
        k = len(art_rows)
        self.num_art = k
        art = np.zeros((m, k))
        art[art_rows, np.arange(k)] = np.where(resid[art_rows] > 0, 1.0, -1.0)
        basis[art_rows] = n + m + np.arange(k)
        self.A = np.hstack([A, np.eye(m), art])
        self.b = b
        self.lo = np.concatenate([lo, slo, np.zeros(k)])
        self.hi = np.concatenate([hi, shi, np.full(k, INF)])
        self.x = np.concatenate([x, svals, np.abs(resid[art_rows]) if k else np.zeros(0)])
        self.basis = basis
        self.is_basic = np.zeros(self.A.shape[1], dtype=bool)
        self.is_basic[basis] = True
        # initial basis is diagonal with entries +-1
        diag = self.A[np.arange(m), basis] if m else np.zeros(0)
        self.T = self.A / diag[:, None] if m else np.zeros((0, self.A.shape[1]))
        self.feasible: bool | None = None
        self._since_refactor = 0

    # -- core iteration ------------------------------------------------------

    def _refactor(self):
        if self.m == 0:
            return
        Bm = self.A[:, self.basis]
        nb = ~self.is_basic
        try:
            self.T = np.linalg.solve(Bm, self.A)
            self.x[self.basis] = np.linalg.solve(Bm, self.b - self.A[:, nb] @ self.x[nb])
        except np.linalg.LinAlgError:
            pass
        self._since_refactor = 0

    def _run(self, cost: np.ndarray) -> Status:
        tol = self.tol
        degenerate = 0
        bland = False
        steps = 0
        lo, hi = self.lo, self.hi
        movable = (hi - lo) > 0
        while True:
            if steps >= tol.max_pivots:
                return Status.ITER_LIMIT
            d = cost - cost[self.basis] @ self.T if self.m else cost.copy()
            x = self.x
            can_up = ~self.is_basic & movable & (x < hi - tol.feas)
            can_down = ~self.is_basic & movable & (x > lo + tol.feas)
            score = np.where(can_up & (d < -tol.opt), -d, 0.0)
            score = np.maximum(score, np.where(can_down & (d > tol.opt), d, 0.0))
            cands = np.flatnonzero(score > 0)
            if cands.size == 0:
                return Status.OPTIMAL
            j = int(cands[0]) if bland else int(cands[np.argmax(score[cands])])
            delta = 1.0 if (can_up[j] and d[j] < -tol.opt) else -1.0

            col = self.T[:, j] * delta  # basic values move by -t * col
            t_best = hi[j] - lo[j]
            leave = -1
            if self.m:
                xb = x[self.basis]
                lb, ub = lo[self.basis], hi[self.basis]
                with np.errstate(divide="ignore", invalid="ignore"):
                    dec = col > tol.pivot
                    inc = col < -tol.pivot
                    ratio = np.full(self.m, INF)
                    ratio[dec] = np.maximum(xb[dec] - lb[dec], 0.0) / col[dec]
                    ratio[inc] = np.maximum(ub[inc] - xb[inc], 0.0) / -col[inc]
                rmin = ratio.min()
                if rmin < t_best:
                    ties = np.flatnonzero(ratio <= rmin + tol.feas * max(1.0, rmin))
                    if bland:
                        leave = int(ties[np.argmin(self.basis[ties])])
                    else:
                        leave = int(ties[np.argmax(np.abs(col[ties]))])
                    t_best = ratio[leave]
            if not math.isfinite(t_best):
                return Status.UNBOUNDED

            steps += 1
            self.pivots += 1
            if t_best <= tol.feas:
                degenerate += 1
                if degenerate > tol.bland_after:
                    bland = True
            if self.m:
                x[self.basis] -= t_best * col
            x[j] += delta * t_best
            if leave < 0:
                # bound flip, no basis change
                x[j] = hi[j] if delta > 0 else lo[j]
                continue
            out = self.basis[leave]
            x[out] = lb[leave] if col[leave] > 0 else ub[leave]
            self._pivot(leave, j)
            self._since_refactor += 1
            if self._since_refactor >= tol.refactor_every:
                self._refactor()

    def _pivot(self, r: int, j: int):
        T = self.T
        prow = T[r] / T[r, j]
        colj = T[:, j].copy()
        colj[r] = 0.0
        T -= np.outer(colj, prow)
        T[r] = prow
        self.is_basic[self.basis[r]] = False
        self.is_basic[j] = True
        self.basis[r] = j

    def _phase1(self) -> bool:
        if self.feasible is not None:
            return self.feasible
        k = self.num_art
        if k:
            cost = np.zeros(self.A.shape[1])
            cost[-k:] = 1.0
            status = self._run(cost)
            infeas = float(self.x[-k:].sum())
            scale = 1.0 + float(np.max(np.abs(self.b), initial=0.0))
            if status is Status.ITER_LIMIT:
                self.feasible = None
                raise _IterLimit
            if infeas > self.tol.feas * scale:
                self.feasible = False
                return False
            # artificials are pinned to zero from here on
            self.hi[-k:] = 0.0
            self.x[-k:] = np.clip(self.x[-k:], 0.0, 0.0)
            self._refactor()
        self.feasible = True
        return True

    # -- public API ----------------------------------------------------------

    def check_feasible(self) -> LpOutcome:
        start = self.pivots
        try:
            ok = self._phase1()
        except _IterLimit:
            return LpOutcome(Status.ITER_LIMIT, pivots=self.pivots - start)
        if not ok:
            return LpOutcome(Status.INFEASIBLE, pivots=self.pivots - start)
        return LpOutcome(Status.OPTIMAL, 0.0, self.point(), self.pivots - start)

    def point(self) -> np.ndarray:
        return np.clip(self.x[: self.n], self.lo[: self.n], self.hi[: self.n])

    def _polish(self):
        """Recompute basic values from the basis, removing drift from the pivot updates."""
        if self.m == 0:
            return
        nb = ~self.is_basic
        try:
            xb = np.linalg.solve(self.A[:, self.basis], self.b - self.A[:, nb] @ self.x[nb])
        except np.linalg.LinAlgError:
            return
        lo, hi = self.lo[self.basis], self.hi[self.basis]
        # keep the update only if it stays within the bounds
        if np.all(xb >= lo - self.tol.feas) and np.all(xb <= hi + self.tol.feas):
            self.x[self.basis] = np.clip(xb, lo, hi)

    def optimize(self, coeffs, sense: Sense | str = Sense.MIN) -> LpOutcome:
        start = self.pivots
        try:
            if not self._phase1():
                return LpOutcome(Status.INFEASIBLE, pivots=self.pivots - start)
        except _IterLimit:
            return LpOutcome(Status.ITER_LIMIT, pivots=self.pivots - start)
        c = np.zeros(self.A.shape[1])
        obj = self.lp._coeffs(coeffs) if not isinstance(coeffs, np.ndarray) else dict(enumerate(coeffs))
        for j, v in obj.items():
            c[j] = v
        sign = -1.0 if Sense(sense) is Sense.MAX else 1.0
        status = self._run(sign * c)
        if status is not Status.OPTIMAL:
            return LpOutcome(status, pivots=self.pivots - start)
        self._polish()
        pt = self.point()
        return LpOutcome(Status.OPTIMAL, float(c[: self.n] @ pt), pt, self.pivots - start)

    def tighten(self, var: int | str, direction: str) -> float | None:
        """Improved lower ("lower") or upper ("upper") bound of ``var``, or None.

        Raises LpInfeasible when the LP has no feasible point at all.
        """
        j = self.lp.index(var) if isinstance(var, str) else int(var)
        if direction not in ("lower", "upper"):
            raise ValueError("direction must be 'lower' or 'upper'")
        res = self.optimize({j: 1.0}, Sense.MIN if direction == "lower" else Sense.MAX)
        if res.status is Status.INFEASIBLE:
            raise LpInfeasible()
        if not res.optimal:
            return None
        if direction == "lower" and res.value > self.lp.lo[j] + self.tol.improve:
            return res.value
        if direction == "upper" and res.value < self.lp.hi[j] - self.tol.improve:
            return res.value
        return None


class _IterLimit(Exception):
    pass


def solve(lp: LinearProgram, tol: Tolerances = DEFAULT_TOLERANCES) -> LpOutcome:
    return LpSession(lp, tol).optimize(lp.objective, lp.sense)


def tighten(lp: LinearProgram, var: int | str, direction: str, tol: Tolerances = DEFAULT_TOLERANCES) -> float | None:
    return LpSession(lp, tol).tighten(var, direction)


def from_dense(
    A: Sequence,
    relations: Sequence[str],
    b: Sequence[float],
    c: Sequence[float],
    sense: str = "min",
    lo: Sequence[float] | None = None,
    hi: Sequence[float] | None = None,
) -> LinearProgram:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    n = A.shape[1] if A.size else len(c)
    lp = LinearProgram()
    for j in range(n):
        lp.add_var(f"x{j}", 0.0 if lo is None else lo[j], INF if hi is None else hi[j])
    for row, rel, rhs in zip(A, relations, b):
        lp.add_row(row, rel, rhs)
    lp.set_objective(c, sense)
    return lp


@dataclass
class BatchOutcome:
    status: list[Status]
    x: np.ndarray  # (B, n); meaningful where status is OPTIMAL
    value: np.ndarray  # (B,); nan unless OPTIMAL
    iterations: int = 0


# rank-one updates between refactorizations of the batched basis inverse
_BATCH_REFACTOR = 32


def dual_simplex_batch(A, b, w, basis, tol: Tolerances = DEFAULT_TOLERANCES, max_iter: int | None = None) -> BatchOutcome:
    """Maximize ``w . x`` subject to ``A x <= b`` for a stack of LPs at once.

    ``A`` is ``(B, M, n)``, ``b`` is ``(B, M)``, ``w`` is ``(n,)`` or ``(B, n)``.
    ``basis`` gives, per LP, ``n`` row indices whose matrix is nonsingular and
    dual feasible (``w = A_B^T lam`` with ``lam >= 0``). Each iteration brings
    the most violated row into the basis and drops the row with the smallest
    dual ratio, for every unfinished LP in one vectorized step. There is no
    anti-cycling rule; LPs still open after ``max_iter`` iterations come back
    as ITER_LIMIT for the caller to solve some other way.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    B, M, n = A.shape
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), (B, n))
    bas = np.array(basis, dtype=int).reshape(B, n)
    max_iter = 10 * (n + M) if max_iter is None else max_iter
    # 0 open / iteration limit, 1 optimal, 2 infeasible
    code = np.zeros(B, dtype=np.int8)
    x = np.full((B, n), np.nan)
    # working set: original ids, their data, and the explicit basis inverse,
    # kept up to date by rank-one updates and refactored now and then
    ids, Aw, bw, ww = np.arange(B), A, b, w
    live = np.ones(B, dtype=bool)
    Binv = None
    it = since = 0
    while live.any() and it <= max_iter:
        rows = np.arange(len(ids))
        if Binv is None or since == _BATCH_REFACTOR:
            try:
                Binv = np.linalg.inv(Aw[rows[:, None], bas])
            except np.linalg.LinAlgError:
                break
            since = 0
        xo = np.matmul(Binv, bw[rows[:, None], bas][..., None])[..., 0]
        viol = np.matmul(Aw, xo[..., None])[..., 0] - bw
        r = np.argmax(viol, axis=1)
        worst = viol[rows, r]
        done = live & (worst <= tol.feas * (1.0 + np.abs(bw[rows, r])))
        x[ids[done]] = xo[done]
        code[ids[done]] = 1
        live &= ~done
        if it == max_iter or not live.any():
            break
        BinvT = np.swapaxes(Binv, 1, 2)
        lam = np.matmul(BinvT, ww[..., None])[..., 0]
        u = np.matmul(BinvT, Aw[rows, r][..., None])[..., 0]
        big = u > tol.pivot * np.maximum(1.0, np.abs(u).max(axis=1, keepdims=True))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(big, np.maximum(lam, 0.0) / u, INF)
        k = np.argmin(ratio, axis=1)
        # no positive entry: a_r = A_B^T u with u <= 0 is a Farkas certificate
        dead = live & ~big.any(axis=1)
        code[ids[dead]] = 2
        live &= ~dead
        # row k of A_B becomes a_r: Binv -= Binv e_k (u - e_k)^T / u_k,
        # applied to every row of the working set with finished ones masked
        uk = np.where(live, u[rows, k], 1.0)
        d = u
        d[rows, k] -= 1.0
        d *= (live / uk)[:, None]
        Binv -= Binv[rows, :, k][:, :, None] * d[:, None, :]
        bas[live, k[live]] = r[live]
        it += 1
        since += 1
        s_ = np.flatnonzero(live)
        if len(s_) < 0.75 * len(ids):
            ids, Aw, bw, ww, bas, Binv = ids[s_], Aw[s_], bw[s_], ww[s_], bas[s_], Binv[s_]
            live = np.ones(len(s_), dtype=bool)
    value = np.full(B, np.nan)
    opt = code == 1
    value[opt] = np.einsum("bn,bn->b", w[opt], x[opt])
    names = (Status.ITER_LIMIT, Status.OPTIMAL, Status.INFEASIBLE)
    return BatchOutcome([names[c] for c in code], x, value, it)
