"""Sound pre-activation bounds under an input box and a partial activation pattern.

Two domains are provided: plain interval arithmetic and a polytope domain
(one symbolic linear lower and upper bound per neuron, back-substituted to the
inputs). The polytope routine works on a whole batch of activation patterns at
once, which is how the search evaluates a beam of nodes in one numpy pass.

Phase patterns are int8 vectors over the flat hidden-neuron index:
``+1`` active, ``-1`` inactive, ``0`` unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping

import numpy as np

from .config import DEFAULT_TOLERANCES
from .network import Network, NeuronId


class Phase(IntEnum):
    ACTIVE = 1
    INACTIVE = -1


@dataclass(frozen=True)
class PhaseConstraint:
    neuron: NeuronId
    phase: Phase


class InfeasiblePhase(Exception):
    """The phase constraints contradict the bounds of some neuron."""

    def __init__(self, neuron: NeuronId | None = None):
        super().__init__(f"phase constraints are unsatisfiable at neuron {neuron}")
        self.neuron = neuron


def phase_vector(net: Network, phases=None) -> np.ndarray:
    """Normalize phases given as None, a vector, constraints, or a {neuron: phase} mapping."""
    vec = np.zeros(net.num_hidden, dtype=np.int8)
    if phases is None:
        return vec
    if isinstance(phases, np.ndarray):
        if phases.shape != (net.num_hidden,):
            raise ValueError(f"phase vector must have length {net.num_hidden}")
        return phases.astype(np.int8)
    items = phases.items() if isinstance(phases, Mapping) else ((c.neuron, c.phase) for c in phases)
    for neuron, phase in items:
        idx = neuron if isinstance(neuron, (int, np.integer)) else net.flat_index(neuron)
        if vec[idx] != 0 and vec[idx] != int(phase):
            raise ValueError(f"conflicting phase constraints for neuron {neuron}")
        vec[idx] = int(phase)
    return vec


@dataclass(frozen=True)
class NeuronBounds:
    """Concrete and symbolic bounds for one activation pattern.

    ``symbolic_lower`` / ``symbolic_upper`` hold ``(A, c)`` with one row per
    hidden neuron so that ``A @ x + c`` bounds the pre-activation for every x
    in the box consistent with the pattern.
    """

    pre_lo: np.ndarray
    pre_hi: np.ndarray
    out_lo: np.ndarray
    out_hi: np.ndarray
    symbolic_lower: tuple[np.ndarray, np.ndarray] | None = None
    symbolic_upper: tuple[np.ndarray, np.ndarray] | None = None
    spec_lo: np.ndarray | None = None  # lower bounds of objective rows C @ y, when requested
    spec_rows: np.ndarray | None = None

    def stable_phases(self) -> np.ndarray:
        out = np.zeros(self.pre_lo.shape, dtype=np.int8)
        out[self.pre_lo >= 0] = Phase.ACTIVE
        out[self.pre_hi <= 0] = Phase.INACTIVE
        return out


@dataclass
class BatchBounds:
    pre_lo: np.ndarray  # (B, N)
    pre_hi: np.ndarray
    out_lo: np.ndarray  # (B, out)
    out_hi: np.ndarray
    infeasible: np.ndarray  # (B,) bool
    sym_lo: tuple[np.ndarray, np.ndarray] | None = None  # (B, N, d), (B, N)
    sym_hi: tuple[np.ndarray, np.ndarray] | None = None
    spec_lo: np.ndarray | None = None  # (B, k)
    spec_rows: np.ndarray | None = None
    bad_neuron: np.ndarray | None = None  # (B,) first contradicted flat index, or -1

    def __len__(self):
        return self.pre_lo.shape[0]

    def node(self, b: int) -> NeuronBounds:
        return NeuronBounds(
            self.pre_lo[b],
            self.pre_hi[b],
            self.out_lo[b],
            self.out_hi[b],
            None if self.sym_lo is None else (self.sym_lo[0][b], self.sym_lo[1][b]),
            None if self.sym_hi is None else (self.sym_hi[0][b], self.sym_hi[1][b]),
            None if self.spec_lo is None else self.spec_lo[b],
            self.spec_rows,
        )


def _clip_phases(lo, hi, ph):
    """Intersect concrete bounds with the phase half-lines; returns the infeasible mask."""
    act = ph > 0
    ina = ph < 0
    lo = np.where(act, np.maximum(lo, 0.0), lo)
    hi = np.where(ina, np.minimum(hi, 0.0), hi)
    return lo, hi, lo > hi


def _post_interval(lo, hi, ph):
    plo = np.maximum(lo, 0.0)
    phi = np.maximum(hi, 0.0)
    plo = np.where(ph < 0, 0.0, plo)
    phi = np.where(ph < 0, 0.0, phi)
    return plo, phi


def _interval_layer(w, b, plo, phi):
    wp = np.maximum(w, 0.0)
    wn = np.minimum(w, 0.0)
    return plo @ wp.T + phi @ wn.T + b, phi @ wp.T + plo @ wn.T + b


def interval_bounds_batch(net: Network, lower, upper, phases: np.ndarray) -> BatchBounds:
    phases = np.atleast_2d(phases)
    B = phases.shape[0]
    plo = np.broadcast_to(np.asarray(lower, dtype=np.float64), (B, net.input_dim))
    phi = np.broadcast_to(np.asarray(upper, dtype=np.float64), (B, net.input_dim))
    los, his = [], []
    infeasible = np.zeros(B, dtype=bool)
    bad = np.full(B, -1)
    for i, layer in enumerate(net.hidden_layers):
        ph = phases[:, net.layer_slice(i)]
        lo, hi = _interval_layer(layer.weights, layer.biases, plo, phi)
        lo, hi, empty = _clip_phases(lo, hi, ph)
        _mark(bad, empty, net.offsets[i])
        infeasible |= empty.any(axis=1)
        los.append(lo)
        his.append(hi)
        plo, phi = _post_interval(lo, hi, ph)
    last = net.layers[-1]
    olo, ohi = _interval_layer(last.weights, last.biases, plo, phi)
    return BatchBounds(_cat(los, B), _cat(his, B), olo, ohi, infeasible, bad_neuron=bad)


def _mark(bad, empty, offset):
    rows = (bad < 0) & empty.any(axis=1)
    if rows.any():
        bad[rows] = offset + np.argmax(empty[rows], axis=1)


def _cat(parts, B):
    return np.concatenate(parts, axis=1) if parts else np.zeros((B, 0))


def interval_bounds(net: Network, lower, upper, phases=None) -> NeuronBounds:
    """Forward interval arithmetic; raises InfeasiblePhase on an empty phase intersection."""
    pv = phase_vector(net, phases)
    bb = interval_bounds_batch(net, lower, upper, pv[None, :])
    if bb.infeasible[0]:
        raise InfeasiblePhase(net.neuron_id(int(bb.bad_neuron[0])))
    return bb.node(0)


def _relaxation(lo, hi, ph):
    """Per-neuron linear bounds  low_slope*z <= relu(z) <= up_slope*z + up_icpt."""
    active = (ph > 0) | (lo >= 0)
    inactive = (ph < 0) | ((hi <= 0) & ~active)
    unstable = ~active & ~inactive
    width = np.where(unstable, hi - lo, 1.0)
    up_slope = np.where(active, 1.0, np.where(unstable, hi / width, 0.0))
    up_icpt = np.where(unstable, -lo * hi / width, 0.0)
    low_slope = np.where(active, 1.0, np.where(unstable & (hi >= -lo), 1.0, 0.0))
    return low_slope, up_slope, up_icpt


def _backsubstitute(net, rows_w, rows_b, depth, relax, xlo, xhi):
    """Bound ``rows_w @ post(depth-1) + rows_b`` over the box using the relaxations.

    ``rows_w`` is (m, width of layer depth-1) or batched (B, m, width);
    ``relax[j]`` holds the relaxation of hidden layer j for every batch entry.
    Returns concrete (lo, hi) and the symbolic forms over the inputs.
    """
    B = xlo.shape[0]
    j = depth - 1
    if rows_w.ndim == 2 and depth > 0:
        # shared rows: split signs once; with more rows than layer inputs,
        # fold the slopes into the weights instead of scaling B copies of the rows
        low_slope, up_slope, up_icpt = relax[j]
        layer = net.layers[j]
        pos, neg = np.maximum(rows_w, 0.0), np.minimum(rows_w, 0.0)
        if rows_w.shape[0] > layer.weights.shape[1]:
            wl = low_slope[:, :, None] * layer.weights
            wu = up_slope[:, :, None] * layer.weights
            al = pos @ wl + neg @ wu
            au = pos @ wu + neg @ wl
        else:
            ls, us = low_slope[:, None, :], up_slope[:, None, :]
            al = (pos * ls + neg * us) @ layer.weights
            au = (pos * us + neg * ls) @ layer.weights
        bl, bu = low_slope * layer.biases, up_slope * layer.biases
        cl = rows_b + up_icpt @ neg.T + bl @ pos.T + bu @ neg.T
        cu = rows_b + up_icpt @ pos.T + bu @ pos.T + bl @ neg.T
        j -= 1
    else:
        al = np.broadcast_to(rows_w, (B,) + rows_w.shape[-2:]).copy()
        au = al.copy()
        cl = np.broadcast_to(rows_b, (B, rows_w.shape[-2])).copy()
        cu = cl.copy()
    for j in range(j, -1, -1):
        low_slope, up_slope, up_icpt = relax[j]
        pos, neg = np.maximum(al, 0.0), np.minimum(al, 0.0)
        cl += np.einsum("bmk,bk->bm", neg, up_icpt)
        al = pos * low_slope[:, None, :] + neg * up_slope[:, None, :]
        pos, neg = np.maximum(au, 0.0), np.minimum(au, 0.0)
        cu += np.einsum("bmk,bk->bm", pos, up_icpt)
        au = pos * up_slope[:, None, :] + neg * low_slope[:, None, :]
        layer = net.layers[j]
        cl += al @ layer.biases
        cu += au @ layer.biases
        al = al @ layer.weights
        au = au @ layer.weights
    lo = cl + np.einsum("bmk,bk->bm", np.maximum(al, 0.0), xlo) + np.einsum("bmk,bk->bm", np.minimum(al, 0.0), xhi)
    hi = cu + np.einsum("bmk,bk->bm", np.maximum(au, 0.0), xhi) + np.einsum("bmk,bk->bm", np.minimum(au, 0.0), xlo)
    return lo, hi, (al, cl), (au, cu)


def relaxed_bounds_batch(
    net: Network,
    lower,
    upper,
    phases: np.ndarray,
    known_lo: np.ndarray | None = None,
    known_hi: np.ndarray | None = None,
    spec_rows: np.ndarray | None = None,
    slack: float = DEFAULT_TOLERANCES.bound_slack,
    symbolic: bool = True,
) -> BatchBounds:
    """Polytope bounds for a batch of activation patterns.

    ``known_lo``/``known_hi`` (B, N) are previously established valid bounds
    (e.g. from LP tightening on an ancestor node) and are intersected in.
    ``spec_rows`` (k, out) requests lower bounds of ``spec_rows @ y``.
    Each layer's result is also intersected with interval arithmetic over the
    previous layer, so the result is never looser than ``interval_bounds``.
    """
    phases = np.atleast_2d(np.asarray(phases, dtype=np.int8))
    B = phases.shape[0]
    xlo = np.broadcast_to(np.asarray(lower, dtype=np.float64), (B, net.input_dim))
    xhi = np.broadcast_to(np.asarray(upper, dtype=np.float64), (B, net.input_dim))
    plo, phi = xlo, xhi
    relax = []
    los, his, sym_l, sym_u = [], [], [], []
    infeasible = np.zeros(B, dtype=bool)
    bad = np.full(B, -1)
    for i, layer in enumerate(net.hidden_layers):
        sl = net.layer_slice(i)
        ph = phases[:, sl]
        ilo, ihi = _interval_layer(layer.weights, layer.biases, plo, phi)
        if i == 0:
            # first layer: interval arithmetic is exact, symbolic form is the layer itself
            lo, hi = ilo, ihi
            if symbolic:
                sym_l.append((np.broadcast_to(layer.weights, (B,) + layer.weights.shape), np.broadcast_to(layer.biases, (B, layer.out_dim))))
                sym_u.append(sym_l[-1])
        else:
            dlo, dhi, sl_, su_ = _backsubstitute(net, layer.weights, layer.biases, i, relax, xlo, xhi)
            lo = np.maximum(dlo - slack, ilo)
            hi = np.minimum(dhi + slack, ihi)
            if symbolic:
                sym_l.append(sl_)
                sym_u.append(su_)
        if known_lo is not None:
            lo = np.maximum(lo, known_lo[:, sl])
            hi = np.minimum(hi, known_hi[:, sl])
        lo, hi, empty = _clip_phases(lo, hi, ph)
        _mark(bad, empty, net.offsets[i])
        infeasible |= empty.any(axis=1)
        # keep infeasible rows numerically harmless for the remaining layers
        hi = np.where(empty, lo, hi)
        los.append(lo)
        his.append(hi)
        relax.append(_relaxation(lo, hi, ph))
        plo, phi = _post_interval(lo, hi, ph)

    depth = len(net.hidden_layers)
    last = net.layers[-1]
    olo, ohi, _, _ = _backsubstitute(net, last.weights, last.biases, depth, relax, xlo, xhi)
    ilo, ihi = _interval_layer(last.weights, last.biases, plo, phi)
    olo = np.maximum(olo - slack, ilo)
    ohi = np.minimum(ohi + slack, ihi)

    spec_lo = None
    if spec_rows is not None:
        spec_rows = np.atleast_2d(np.asarray(spec_rows, dtype=np.float64))
        slo, _, _, _ = _backsubstitute(net, spec_rows @ last.weights, spec_rows @ last.biases, depth, relax, xlo, xhi)
        spec_lo = slo - slack

    sym_lo = sym_hi = None
    if symbolic and sym_l:
        sym_lo = (np.concatenate([a for a, _ in sym_l], axis=1), np.concatenate([c for _, c in sym_l], axis=1))
        sym_hi = (np.concatenate([a for a, _ in sym_u], axis=1), np.concatenate([c for _, c in sym_u], axis=1))
    return BatchBounds(_cat(los, B), _cat(his, B), olo, ohi, infeasible, sym_lo, sym_hi, spec_lo, spec_rows, bad)


def relaxed_bounds(net: Network, lower, upper, phases=None, known=None, spec_rows=None) -> NeuronBounds:
    """Polytope bounds for a single pattern; raises InfeasiblePhase on contradiction.

    ``known`` is an optional ``(lo, hi)`` pair of valid pre-activation bounds.
    """
    pv = phase_vector(net, phases)
    klo = khi = None
    if known is not None:
        klo, khi = (np.asarray(k, dtype=np.float64)[None, :] for k in known)
    bb = relaxed_bounds_batch(net, lower, upper, pv[None, :], klo, khi, spec_rows)
    if bb.infeasible[0]:
        raise InfeasiblePhase(net.neuron_id(int(bb.bad_neuron[0])))
    return bb.node(0)


class Verdict(IntEnum):
    MAYBE_FEASIBLE = 0
    INFEASIBLE = 1


def output_lower_bounds(out_lo, out_hi, matrix) -> np.ndarray:
    """Interval lower bound of each row of ``matrix @ y``; works batched on (B, out)."""
    pos, neg = np.maximum(matrix, 0.0), np.minimum(matrix, 0.0)
    return out_lo @ pos.T + out_hi @ neg.T


def feasibility_margin(bounds: NeuronBounds, disjunct) -> tuple[float, Verdict]:
    """Margin ``p`` of a conjunction ``C y <= d`` of output halfspaces.

    ``p`` is the largest gap between a row's lower bound and its right-hand
    side. ``p > 0`` means some row can never be met: the disjunct is infeasible.
    """
    C, d = disjunct.matrix, disjunct.rhs
    lb = output_lower_bounds(bounds.out_lo, bounds.out_hi, C)
    if bounds.spec_lo is not None and bounds.spec_rows is not None and np.array_equal(bounds.spec_rows, C):
        lb = np.maximum(lb, bounds.spec_lo)
    p = float(np.max(lb - d))
    return p, Verdict.INFEASIBLE if p > 0 else Verdict.MAYBE_FEASIBLE


def batch_margins(bb: BatchBounds, disjunct) -> np.ndarray:
    """Vectorized ``feasibility_margin`` over a batch; returns (B,) margins."""
    C, d = disjunct.matrix, disjunct.rhs
    lb = output_lower_bounds(bb.out_lo, bb.out_hi, C)
    if bb.spec_lo is not None and bb.spec_rows is not None and np.array_equal(bb.spec_rows, C):
        lb = np.maximum(lb, bb.spec_lo)
    return np.max(lb - d, axis=1)
