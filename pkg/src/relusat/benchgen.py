"""Random benchmark corpora: small oracle-labeled instances and harder ones.

Networks get weights and biases drawn from U[-1, 1] / sqrt(fan_in). A property
is anchored at a random input ``x0``: either the anchor's top output must stay
on top ("robustness") or one output must stay below a threshold a little above
its anchor value ("threshold"). The box radius around ``x0`` is the difficulty
knob; bisection against a labeler finds the radius where the verdict flips and
the instance is placed just inside or just outside it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import Network, infer
from .oracle import MAX_NEURONS, enumerate_verify, sample_falsify
from .specio import Disjunct, Halfspace, Property, build_problem, emit_network, emit_property


@dataclass(frozen=True)
class Shape:
    inputs: tuple[int, int] = (2, 2)
    layers: tuple[int, int] = (2, 2)
    width: tuple[int, int] = (2, 4)
    outputs: tuple[int, int] = (2, 2)


SMALL = Shape()


@dataclass
class Instance:
    name: str
    network: Network
    property: Property
    label: str  # "sat" | "unsat" | "unknown"
    radius: float
    kind: str

    @property
    def problem(self):
        return build_problem(self.network, self.property)


def random_network(rng: np.random.Generator, sizes) -> Network:
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-1.0, 1.0, (fan_out, fan_in)) * scale)
        biases.append(rng.uniform(-1.0, 1.0, fan_out) * scale)
    return Network.from_arrays(weights, biases)


def _draw(rng, bounds) -> int:
    lo, hi = bounds
    return int(rng.integers(lo, hi + 1))


def random_sizes(rng: np.random.Generator, shape: Shape) -> list[int]:
    depth = _draw(rng, shape.layers)
    return [_draw(rng, shape.inputs)] + [_draw(rng, shape.width) for _ in range(depth)] + [_draw(rng, shape.outputs)]


def robustness_condition(y0: np.ndarray) -> tuple[Disjunct, ...]:
    """The anchor's top output stays at least as large as every other one."""
    k = int(np.argmax(y0))
    hs = []
    for j in range(len(y0)):
        if j != k:
            c = np.zeros(len(y0))
            c[j], c[k] = 1.0, -1.0
            hs.append(Halfspace(tuple(float(v) for v in c), 0.0))
    return (Disjunct(tuple(hs)),)


def threshold_condition(y0: np.ndarray, j: int, gap: float) -> tuple[Disjunct, ...]:
    c = np.zeros(len(y0))
    c[j] = 1.0
    return (Disjunct((Halfspace(tuple(float(v) for v in c), float(y0[j] + gap)),)),)


def _box(x0, r):
    return x0 - r, x0 + r


def _label_oracle(net, x0, r, cond) -> str:
    lo, hi = _box(x0, r)
    return enumerate_verify(build_problem(net, Property.from_condition(lo, hi, cond))).status.value


def _label_sampling(trials, seed):
    def label(net, x0, r, cond) -> str:
        lo, hi = _box(x0, r)
        prob = build_problem(net, Property.from_condition(lo, hi, cond))
        return "sat" if sample_falsify(prob, trials, seed) is not None else "unknown"

    return label


def flip_radius(net, x0, cond, labeler, r_max=2.0, steps=12) -> float | None:
    """Approximate smallest radius at which the labeler reports a violation."""
    if labeler(net, x0, r_max, cond) != "sat":
        return None
    lo, hi = 0.0, r_max
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if labeler(net, x0, mid, cond) == "sat":
            hi = mid
        else:
            lo = mid
    return hi


def _anchor(rng, net, n_in, kind, pool=256):
    """Anchor input, output condition and the kind actually used.

    Anchors are drawn from a pool of candidates: for robustness, one of the
    quarter closest to a tie between the top two outputs (if no other class
    ever wins, a threshold property is used instead); threshold gaps are
    scaled by the output's spread over the pool, so the radius knob has
    something to bite on.
    """
    xs = rng.uniform(-1.0, 1.0, (pool, n_in))
    ys = infer(net, xs)
    # robustness needs a second class that actually wins somewhere
    if kind == "robustness" and len(np.unique(np.argmax(ys, axis=1))) > 1:
        top2 = np.sort(ys, axis=1)[:, -2:]
        gaps = top2[:, 1] - top2[:, 0]
        near = np.argsort(gaps, kind="stable")[: pool // 4]
        i = int(near[rng.integers(len(near))])
        if gaps[i] > 1e-6:
            return xs[i], robustness_condition(ys[i]), "robustness"
    i = int(rng.integers(pool))
    j = int(rng.integers(net.output_dim))
    spread = max(float(np.ptp(ys[:, j])), 1e-3)
    return xs[i], threshold_condition(ys[i], j, float(rng.uniform(0.05, 0.5)) * spread), "threshold"


def gen_instances(
    seed: int,
    count: int,
    shape: Shape = SMALL,
    sat_fraction: float = 0.5,
    robustness_fraction: float = 0.5,
) -> list[Instance]:
    """Oracle-labeled instances; roughly ``sat_fraction`` of them violate their property."""
    rng = np.random.default_rng(seed)
    out: list[Instance] = []
    while len(out) < count:
        sizes = random_sizes(rng, shape)
        if sum(sizes[1:-1]) > MAX_NEURONS:
            raise ValueError("shape exceeds the oracle's neuron cap")
        net = random_network(rng, sizes)
        kind = "robustness" if rng.random() < robustness_fraction else "threshold"
        x0, cond, kind = _anchor(rng, net, sizes[0], kind)
        want_sat = rng.random() < sat_fraction
        r_flip = flip_radius(net, x0, cond, _label_oracle)
        if r_flip is None:
            r = float(rng.uniform(0.1, 2.0))
        elif want_sat:
            r = r_flip * float(rng.uniform(1.05, 1.5))
        else:
            r = r_flip * float(rng.uniform(0.5, 0.95))
        label = _label_oracle(net, x0, r, cond)
        if label == "unknown":
            continue
        lo, hi = _box(x0, r)
        prop = Property.from_condition(lo, hi, cond)
        out.append(Instance(f"inst{len(out):04d}", net, prop, label, r, kind))
    return out


HARD = Shape(inputs=(5, 10), layers=(2, 4), width=(16, 32), outputs=(3, 3))


def abstraction_radius(net, x0, cond, r_max=2.0, steps=14) -> float:
    """Largest radius (to bisection precision) at which the root abstraction alone proves ``cond``."""
    from .sat import Assignment
    from .theory import deduce

    def proves(r):
        lo, hi = _box(x0, r)
        prob = build_problem(net, Property.from_condition(lo, hi, cond))
        root = Assignment(net.num_hidden)
        return all(not deduce(prob, root, d).feasible for d in prob.property.negated_output)

    lo, hi = 0.0, r_max
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if proves(mid):
            lo = mid
        else:
            hi = mid
    return lo


def gen_hard_instances(
    seed: int,
    count: int,
    shape: Shape = HARD,
    trials: int = 20_000,
    position: tuple[float, float] = (0.1, 0.4),
) -> list[Instance]:
    """Instances too large for the oracle, in the band that needs search.

    The radius sits between the largest one the root abstraction proves on
    its own and the smallest one at which sampling finds a violation, at a
    relative position drawn from ``position``. The label is "sat" when
    sampling finds a violation at that radius and "unknown" otherwise; most
    hold, but proving it takes search.
    """
    rng = np.random.default_rng(seed)
    labeler = _label_sampling(trials, seed)
    out: list[Instance] = []
    while len(out) < count:
        sizes = random_sizes(rng, shape)
        net = random_network(rng, sizes)
        kind = "robustness" if rng.random() < 0.5 else "threshold"
        x0, cond, kind = _anchor(rng, net, sizes[0], kind)
        r_flip = flip_radius(net, x0, cond, labeler, steps=12)
        if r_flip is None:
            continue
        r_easy = min(abstraction_radius(net, x0, cond), r_flip)
        r = r_easy + float(rng.uniform(*position)) * (r_flip - r_easy)
        label = labeler(net, x0, r, cond)
        lo, hi = _box(x0, r)
        out.append(Instance(f"hard{len(out):04d}", net, Property.from_condition(lo, hi, cond), label, r, kind))
    return out


def write_corpus(instances: list[Instance], out_dir) -> Path:
    """Write networks, properties, ``manifest.txt`` and ``labels.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    labels = {}
    for inst in instances:
        net_path = out_dir / f"{inst.name}.json"
        prop_path = out_dir / f"{inst.name}.prop"
        net_path.write_text(emit_network(inst.network))
        prop_path.write_text(emit_property(inst.property))
        lines.append(f"{net_path.name},{prop_path.name}")
        labels[inst.name] = {"label": inst.label, "radius": inst.radius, "kind": inst.kind}
    manifest = out_dir / "manifest.txt"
    manifest.write_text("".join(line + "\n" for line in lines))
    (out_dir / "labels.json").write_text(json.dumps(labels, indent=2, sort_keys=True) + "\n")
    return manifest


def gen_corpus(seed: int, count: int, shape: Shape = SMALL, sat_fraction: float = 0.5, out_dir=None) -> list[Instance]:
    """Generate ``count`` labeled instances and, with ``out_dir``, write them to disk."""
    instances = gen_instances(seed, count, shape, sat_fraction)
    if out_dir is not None:
        write_corpus(instances, out_dir)
    return instances
