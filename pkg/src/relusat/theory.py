"""Theory solver: feasibility of an activation pattern and LP-based stabilization."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import abstraction
from .abstraction import NeuronBounds, Phase, relaxed_bounds_batch
from .config import DEFAULT_TOLERANCES, Tolerances
from .encoding import encode_relaxation
from .lp import INF, LinearProgram, LpInfeasible, LpSession, Sense, Status, dual_simplex_batch


@dataclass
class DeduceOutcome:
    feasible: bool
    bounds: NeuronBounds | None = None
    implied: list[tuple[int, Phase]] = field(default_factory=list)
    margin: float | None = None
    lp_checked: bool = False


def _as_phases(sigma) -> np.ndarray:
    if hasattr(sigma, "phases"):
        return sigma.phases()
    return np.asarray(sigma, dtype=np.int8)


def _implied_batch(phases: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> list[list[tuple[int, Phase]]]:
    free = phases == 0
    act = free & (lo >= 0)
    ina = free & (lo < 0) & (hi <= 0)
    out = []
    for a_row, any_row in zip(act, act | ina):
        idx = np.flatnonzero(any_row)
        out.append([(int(v), Phase.ACTIVE if a else Phase.INACTIVE) for v, a in zip(idx, a_row[idx])])
    return out


def lp_feasible(problem, phases, bounds: NeuronBounds, disjunct, tol: Tolerances = DEFAULT_TOLERANCES) -> bool | None:
    """LP check of pattern + disjunct over the relaxation; None when the LP gave up."""
    prop = problem.property
    lp, _ = encode_relaxation(
        problem.network, prop.lower, prop.upper, phases, bounds.pre_lo, bounds.pre_hi, bounds.out_lo, bounds.out_hi, disjunct
    )
    res = LpSession(lp, tol).check_feasible()
    if res.status is Status.ITER_LIMIT:
        return None
    return res.status is Status.OPTIMAL


def deduce_batch(
    problem,
    disjunct,
    phases: np.ndarray,
    known_lo: np.ndarray | None = None,
    known_hi: np.ndarray | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
    full_lp: bool = False,
) -> list[DeduceOutcome]:
    """Deduce for a batch of patterns with a single vectorized abstraction pass."""
    prop = problem.property
    C = disjunct.matrix
    bb = relaxed_bounds_batch(problem.network, prop.lower, prop.upper, phases, known_lo, known_hi, spec_rows=C, slack=tol.bound_slack, symbolic=False)
    margins = abstraction.batch_margins(bb, disjunct)
    implied = _implied_batch(phases, bb.pre_lo, bb.pre_hi)
    out = []
    for b in range(len(bb)):
        if bb.infeasible[b] or margins[b] > 0:
            out.append(DeduceOutcome(False, margin=float(margins[b])))
            continue
        nb = bb.node(b)
        res = DeduceOutcome(True, nb, implied[b], float(margins[b]))
        if full_lp or abs(margins[b]) < tol.lp_confirm_band:
            res.lp_checked = True
            if lp_feasible(problem, phases[b], nb, disjunct, tol) is False:
                res = DeduceOutcome(False, margin=float(margins[b]), lp_checked=True)
        out.append(res)
    return out


def deduce(problem, sigma, disjunct, known=None, tol: Tolerances = DEFAULT_TOLERANCES, full_lp: bool = False) -> DeduceOutcome:
    phases = _as_phases(sigma)[None, :]
    klo = khi = None
    if known is not None:
        klo, khi = (np.asarray(k, dtype=np.float64)[None, :] for k in known)
    return deduce_batch(problem, disjunct, phases, klo, khi, tol, full_lp)[0]


@dataclass
class StabilizeReport:
    attempted: list[int] = field(default_factory=list)
    newly_stable: list[tuple[int, Phase]] = field(default_factory=list)
    tightened: dict[int, tuple[float, float]] = field(default_factory=dict)
    lp_time: float = 0.0
    lp_calls: int = 0
    infeasible: bool = False


def stabilization_candidates(phases: np.ndarray, lo: np.ndarray, hi: np.ndarray, k: int) -> list[int]:
    """Unassigned unstable neurons, those with a bound nearest zero first, top ``k``."""
    free = np.flatnonzero((phases == 0) & (lo < 0) & (hi > 0))
    closeness = np.minimum(-lo[free], hi[free])
    order = np.argsort(closeness, kind="stable")
    return [int(v) for v in free[order[:k]]]


def stabilize(problem, sigma, bounds: NeuronBounds, k: int, tol: Tolerances = DEFAULT_TOLERANCES, check=None) -> StabilizeReport:
    """Tighten the bounds of up to ``k`` unassigned unstable neurons by LP.

    The bound nearer zero is optimized first; the other one only if the neuron
    is still unstable afterwards. ``check`` is called before every LP and may
    raise to abandon the call (the search uses it for its deadline).
    """
    report = StabilizeReport()
    if k <= 0:
        return report
    phases = _as_phases(sigma)
    lo, hi = bounds.pre_lo, bounds.pre_hi
    cands = stabilization_candidates(phases, lo, hi, k)
    if not cands:
        return report
    t0 = time.perf_counter()
    prop = problem.property
    lp, vm = encode_relaxation(problem.network, prop.lower, prop.upper, phases, lo, hi, bounds.out_lo, bounds.out_hi)
    session = LpSession(lp, tol)

    def run(var, direction):
        if check is not None:
            check()
        report.lp_calls += 1
        return session.tighten(vm.z[var], direction)

    try:
        for v in cands:
            report.attempted.append(v)
            new_lo, new_hi = float(lo[v]), float(hi[v])
            lower_first = new_lo + new_hi >= 0
            for direction in (("lower", "upper") if lower_first else ("upper", "lower")):
                if direction == "lower":
                    r = run(v, "lower")
                    if r is not None:
                        new_lo = 0.0 if -tol.phase_snap <= r < 0 else max(new_lo, r)
                    if new_lo >= 0:
                        break
                else:
                    r = run(v, "upper")
                    if r is not None:
                        new_hi = 0.0 if 0 < r <= tol.phase_snap else min(new_hi, r)
                    if new_hi <= 0:
                        break
            if (new_lo, new_hi) != (lo[v], hi[v]):
                report.tightened[v] = (new_lo, new_hi)
            if new_lo >= 0:
                report.newly_stable.append((v, Phase.ACTIVE))
            elif new_hi <= 0:
                report.newly_stable.append((v, Phase.INACTIVE))
    except LpInfeasible:
        report.infeasible = True
    report.lp_time = time.perf_counter() - t0
    return report


def _fixed_phases(phases, lo, hi):
    """Phases with bound-stable unassigned neurons filled in; None if some neuron is still open."""
    ph = np.asarray(phases, dtype=np.int8).copy()
    ph[(ph == 0) & (lo >= 0)] = 1
    ph[(ph == 0) & (hi <= 0)] = -1
    return None if np.any(ph == 0) else ph


def root_signs(problem) -> np.ndarray:
    """+1/-1 for neurons whose sign is fixed on the whole box, 0 elsewhere."""
    net = problem.network
    prop = problem.property
    b = relaxed_bounds_batch(net, prop.lower, prop.upper, np.zeros((1, net.num_hidden), dtype=np.int8), symbolic=False).node(0)
    return np.where(b.pre_lo >= 0, 1, np.where(b.pre_hi <= 0, -1, 0)).astype(np.int8)


def pattern_lp(problem, phases, disjunct, signs=None):
    """Max-margin LP over the inputs alone for a fully fixed pattern.

    With every phase fixed the network is affine in ``x``; the LP has one
    sign row per neuron plus ``C y(x) + t <= d``. Bounds that assume a phase
    cannot drop a sign row, but box-only signs (``signs``, see
    ``root_signs``) can: if every earlier row holds, the affine map agrees
    with the network up to that neuron, whose sign is then the box sign.
    Returns ``(lp, x_vars, t_var)``.
    """
    net = problem.network
    prop = problem.property
    lp = LinearProgram()
    n = net.input_dim
    xs = [lp.add_var(f"x{i}", float(prop.lower[i]), float(prop.upper[i])) for i in range(n)]
    t = lp.add_var("t", -INF, INF)
    A = np.eye(n)
    b = np.zeros(n)
    for li, layer in enumerate(net.hidden_layers):
        ZA, Zb = layer.weights @ A, layer.weights @ b + layer.biases
        keep = np.asarray(phases[net.layer_slice(li)]) > 0
        # active: z >= 0 written as -z <= 0; inactive: z <= 0
        sign = np.where(keep, -1.0, 1.0)
        rows = np.ones(len(Zb), dtype=bool)
        if signs is not None:
            rows = np.asarray(signs[net.layer_slice(li)]) != np.asarray(phases[net.layer_slice(li)])
        if rows.any():
            lp.add_rows(np.hstack([sign[rows, None] * ZA[rows], np.zeros((int(rows.sum()), 1))]), "<=", -sign[rows] * Zb[rows])
        A, b = ZA * keep[:, None], Zb * keep
    last = net.layers[-1]
    YA, Yb = last.weights @ A, last.weights @ b + last.biases
    C, d = disjunct.matrix, disjunct.rhs
    lp.add_rows(np.hstack([C @ YA, np.ones((len(d), 1))]), "<=", d - C @ Yb)
    return lp, xs, t


def max_margin_point(problem, phases, bounds: NeuronBounds, disjunct, tol: Tolerances = DEFAULT_TOLERANCES, signs=None):
    """Input maximizing the disjunct margin over the (exact, if fully assigned) encoding.

    ``signs`` are optional box-only neuron signs passed on to ``pattern_lp``.

    Returns ``(status, margin, x)`` where status is the LP status string;
    margin and x are None unless it is "optimal".
    """
    prop = problem.property
    if bounds is None:
        fixed = np.asarray(phases, dtype=np.int8)
        if np.any(fixed == 0):
            raise ValueError("a partial pattern needs bounds")
    else:
        fixed = _fixed_phases(phases, bounds.pre_lo, bounds.pre_hi)
    if fixed is not None:
        lp, xvars, t = pattern_lp(problem, fixed, disjunct, signs)
    else:
        lp, vm = encode_relaxation(
            problem.network, prop.lower, prop.upper, phases, bounds.pre_lo, bounds.pre_hi, bounds.out_lo, bounds.out_hi, disjunct, margin=True
        )
        xvars, t = vm.x, vm.margin
    res = LpSession(lp, tol).optimize({t: 1.0}, Sense.MAX)
    if not res.optimal:
        return res.status.value, None, None
    x = np.clip(res.point[xvars], prop.lower, prop.upper)
    return res.status.value, res.value, x


def leaf_margins(problem, phases: np.ndarray, disjunct, signs=None, tol: Tolerances = DEFAULT_TOLERANCES) -> list[tuple]:
    """``max_margin_point`` for a stack of fully fixed patterns, solved together.

    Each LP is ``max t`` over ``(x, t)`` with the box as rows, one sign row
    per neuron (a zero row where ``signs`` makes it redundant, so all LPs
    keep one shape) and ``C y(x) + t <= d``. The start basis is one output
    row plus, per input, the box side that cancels that row's x-coefficient,
    which is dual feasible by construction. LPs the batch solver gives up
    on are re-solved one at a time. Returns ``(status, margin, x)`` per row
    of ``phases``.
    """
    net = problem.network
    prop = problem.property
    phases = np.asarray(phases, dtype=np.int8)
    B, n = len(phases), net.input_dim
    if B == 0:
        return []
    lower, upper = np.asarray(prop.lower, dtype=np.float64), np.asarray(prop.upper, dtype=np.float64)
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        return [max_margin_point(problem, p, None, disjunct, tol, signs) for p in phases]
    A = np.broadcast_to(np.eye(n), (B, n, n))
    c = np.zeros((B, n))
    blocks, rhs = [], []
    for li, layer in enumerate(net.hidden_layers):
        ZA = np.matmul(layer.weights, A)
        Zb = c @ layer.weights.T + layer.biases
        ph = phases[:, net.layer_slice(li)]
        keep = ph > 0
        sign = np.where(keep, -1.0, 1.0)
        rows_a, rows_b = sign[..., None] * ZA, -sign * Zb
        if signs is not None:
            drop = np.asarray(signs[net.layer_slice(li)])[None, :] == ph
            rows_a = np.where(drop[..., None], 0.0, rows_a)
            rows_b = np.where(drop, 1.0, rows_b)
        blocks.append(rows_a)
        rhs.append(rows_b)
        A, c = ZA * keep[..., None], Zb * keep
    last = net.layers[-1]
    YA, Yb = np.matmul(last.weights, A), c @ last.weights.T + last.biases
    C, d = disjunct.matrix, disjunct.rhs
    out_a = np.matmul(C, YA)
    out_b = d[None, :] - Yb @ C.T
    k = len(d)
    eye = np.broadcast_to(np.eye(n), (B, n, n))
    # row layout: upper box sides, lower box sides, output rows, sign rows
    Ax = np.concatenate([eye, -eye, out_a] + blocks, axis=1)
    bx = np.concatenate([np.broadcast_to(upper, (B, n)), np.broadcast_to(-lower, (B, n)), out_b] + rhs, axis=1)
    tcol = np.zeros(Ax.shape[:2] + (1,))
    tcol[:, 2 * n : 2 * n + k, 0] = 1.0
    Afull = np.concatenate([Ax, tcol], axis=2)
    g = out_a[:, 0, :]
    basis = np.concatenate([np.where(g <= 0, np.arange(n), n + np.arange(n)), np.full((B, 1), 2 * n)], axis=1)
    w = np.zeros(n + 1)
    w[n] = 1.0
    res = dual_simplex_batch(Afull, bx, w, basis, tol)
    out = []
    for i in range(B):
        st = res.status[i]
        if st is Status.OPTIMAL:
            out.append((st.value, float(res.value[i]), np.clip(res.x[i, :n], lower, upper)))
        elif st is Status.INFEASIBLE:
            out.append((st.value, None, None))
        else:
            out.append(max_margin_point(problem, phases[i], None, disjunct, tol, signs))
    return out
