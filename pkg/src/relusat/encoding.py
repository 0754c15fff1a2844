"""LP encodings of a network restricted to a partial activation pattern.

Unassigned unstable neurons use the big-M rows with the indicator relaxed to
``a in [0, 1]``::

    zhat >= 0,  zhat >= z,  zhat <= a*u,  zhat <= z - l*(1 - a)

Phase-fixed neurons are exact: an active neuron's post-activation is ``z``
itself (with ``z >= 0``), an inactive one contributes nothing (with ``z <= 0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import INF, LinearProgram


class EncodingError(ValueError):
    pass


@dataclass
class VarMap:
    x: list[int] = field(default_factory=list)
    z: list[int] = field(default_factory=list)  # per flat hidden neuron
    post: list[int | None] = field(default_factory=list)  # None: inactive, post == 0
    a: dict[int, int] = field(default_factory=dict)
    y: list[int] = field(default_factory=list)
    margin: int | None = None


def encode_relaxation(net, lower, upper, phases, pre_lo, pre_hi, out_lo=None, out_hi=None, disjunct=None, margin=False):
    """Build the relaxed LP; returns ``(LinearProgram, VarMap)``.

    ``phases`` is the int8 pattern (+1/-1/0). ``pre_lo``/``pre_hi`` must be
    sound pre-activation bounds for the pattern. With ``disjunct`` the output
    halfspaces are added; with ``margin=True`` they become ``C y + t <= d`` and
    a free margin variable ``t`` is added (maximize it to find the most
    strictly violating point).
    """
    lp = LinearProgram()
    vm = VarMap()
    for i in range(net.input_dim):
        vm.x.append(lp.add_var(f"x{i}", float(lower[i]), float(upper[i])))
    prev = vm.x  # indices of the previous layer's post-activation (None == 0)
    for li, layer in enumerate(net.hidden_layers):
        cur_post = []
        for j in range(layer.out_dim):
            k = net.offsets[li] + j
            lo, hi = float(pre_lo[k]), float(pre_hi[k])
            ph = int(phases[k])
            if ph == 0 and lo >= 0:
                ph = 1
            elif ph == 0 and hi <= 0:
                ph = -1
            if ph > 0:
                lo = max(lo, 0.0)
            elif ph < 0:
                hi = min(hi, 0.0)
            if lo > hi:
                raise EncodingError(f"empty bounds for neuron {net.neuron_id(k)}")
            if ph == 0 and not (np.isfinite(lo) and np.isfinite(hi)):
                raise EncodingError(f"neuron {net.neuron_id(k)} needs finite bounds")
            z = lp.add_var(f"z{li}_{j}", lo, hi)
            vm.z.append(z)
            row = {z: 1.0}
            for p, w in zip(prev, layer.weights[j]):
                if p is not None and w != 0.0:
                    row[p] = row.get(p, 0.0) - w
            lp.add_row(row, "=", float(layer.biases[j]))
            if ph > 0:
                cur_post.append(z)
            elif ph < 0:
                cur_post.append(None)
            else:
                zh = lp.add_var(f"zhat{li}_{j}", 0.0, hi)
                a = lp.add_var(f"a{li}_{j}", 0.0, 1.0)
                vm.a[k] = a
                lp.add_row({zh: 1.0, z: -1.0}, ">=", 0.0)
                lp.add_row({zh: 1.0, a: -hi}, "<=", 0.0)
                lp.add_row({zh: 1.0, z: -1.0, a: -lo}, "<=", -lo)
                cur_post.append(zh)
        vm.post.extend(cur_post)
        prev = cur_post

    last = net.layers[-1]
    for j in range(last.out_dim):
        ylo = -INF if out_lo is None else float(out_lo[j])
        yhi = INF if out_hi is None else float(out_hi[j])
        y = lp.add_var(f"y{j}", ylo, yhi)
        vm.y.append(y)
        row = {y: 1.0}
        for p, w in zip(prev, last.weights[j]):
            if p is not None and w != 0.0:
                row[p] = row.get(p, 0.0) - w
        lp.add_row(row, "=", float(last.biases[j]))

    if disjunct is not None:
        if margin:
            vm.margin = lp.add_var("t", -INF, INF)
        for h in disjunct.halfspaces:
            row = {vm.y[j]: c for j, c in enumerate(h.coeffs) if c != 0.0}
            if margin:
                row[vm.margin] = 1.0
            lp.add_row(row, "<=", h.rhs)
    return lp, vm
