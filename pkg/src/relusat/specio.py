"""Network/property file formats and the verification problem they describe.

Networks are JSON documents::

    {"input_dim": 2, "layers": [{"weights": [[0.4, -0.5]], "biases": [-0.8]}, ...]}

Properties use a subset of VNN-LIB: ``declare-const`` for ``X_i``/``Y_j``,
``assert``, ``and``/``or`` and ``<=``/``>=`` over linear terms. The input
assertions must describe a box; the output assertions are the condition the
network is supposed to guarantee. Its negation (the counterexample region) is
computed here in disjunctive normal form.
"""

from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .network import AffineLayer, Network, validate


class SpecError(ValueError):
    pass


class NetworkFormatError(SpecError):
    pass


class PropertyParseError(SpecError):
    pass


class UnsupportedFeatureError(SpecError):
    pass


class DimensionError(SpecError):
    pass


# ---------------------------------------------------------------------------
# networks


def parse_network(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("layers"), list):
        raise NetworkFormatError("expected an object with a 'layers' list")
    if not doc["layers"]:
        raise NetworkFormatError("network has no layers")
    layers = []
    for i, entry in enumerate(doc["layers"]):
        if not isinstance(entry, dict) or "weights" not in entry or "biases" not in entry:
            raise NetworkFormatError(f"layer {i}: expected 'weights' and 'biases'")
        try:
            w = np.array(entry["weights"], dtype=np.float64)
            b = np.array(entry["biases"], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise NetworkFormatError(f"layer {i}: {e}") from None
        if w.ndim != 2 or b.ndim != 1:
            raise NetworkFormatError(f"layer {i}: weights must be a 2-d list and biases a flat list")
        layers.append(AffineLayer(w, b))
    input_dim = doc.get("input_dim")
    if input_dim is not None and (not isinstance(input_dim, int) or isinstance(input_dim, bool)):
        raise NetworkFormatError("input_dim must be an integer")
    net = Network(tuple(layers), input_dim)
    errors = validate(net)
    if errors:
        raise NetworkFormatError("; ".join(errors))
    return net


def emit_network(net: Network) -> str:
    doc = {
        "input_dim": net.input_dim,
        "layers": [{"weights": layer.weights.tolist(), "biases": layer.biases.tolist()} for layer in net.layers],
    }
    return json.dumps(doc)


def normalize_network_text(text: str) -> str:
    return emit_network(parse_network(text))


# ---------------------------------------------------------------------------
# properties


@dataclass(frozen=True)
class Halfspace:
    """``coeffs . y <= rhs``."""

    coeffs: tuple[float, ...]
    rhs: float

    def negate(self) -> Halfspace:
        # not (c.y <= d)  is  c.y > d, kept closed as -c.y <= -d
        return Halfspace(tuple(-c for c in self.coeffs), -self.rhs)

    def slack(self, y) -> np.ndarray:
        return self.rhs - np.asarray(y) @ np.asarray(self.coeffs)


@dataclass(frozen=True)
class Disjunct:
    """A conjunction of halfspaces over the outputs."""

    halfspaces: tuple[Halfspace, ...]

    @property
    def matrix(self) -> np.ndarray:
        return np.array([h.coeffs for h in self.halfspaces], dtype=np.float64)

    @property
    def rhs(self) -> np.ndarray:
        return np.array([h.rhs for h in self.halfspaces], dtype=np.float64)

    def margin(self, y) -> np.ndarray:
        """Smallest slack over the halfspaces; positive means strictly inside."""
        y = np.asarray(y, dtype=np.float64)
        return np.min(self.rhs - y @ self.matrix.T, axis=-1)

    def __str__(self):
        return " and ".join(_format_halfspace(h) for h in self.halfspaces)


def _format_halfspace(h: Halfspace) -> str:
    terms = " ".join(f"{c:+g}*y{j}" for j, c in enumerate(h.coeffs) if c != 0)
    return f"{terms or '0'} <= {h.rhs:g}"


def negate_dnf(dnf: tuple[Disjunct, ...]) -> tuple[Disjunct, ...]:
    """DNF of the negation of a DNF formula (closed halfspaces; strictness dropped)."""
    if not dnf:
        raise SpecError("cannot negate an empty disjunction")
    out: list[Disjunct] = []
    seen = set()
    for choice in itertools.product(*(d.halfspaces for d in dnf)):
        hs = tuple(dict.fromkeys(h.negate() for h in choice))
        if hs not in seen:
            seen.add(hs)
            out.append(Disjunct(hs))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class Property:
    """Input box plus the output condition the network should satisfy on it."""

    lower: np.ndarray
    upper: np.ndarray
    output_condition: tuple[Disjunct, ...]
    negated_output: tuple[Disjunct, ...]

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64)
        hi = np.array(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise SpecError("box bounds must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise SpecError("box bounds must be finite")
        if np.any(lo > hi):
            raise SpecError("box has an input with lower bound above upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "output_condition", tuple(self.output_condition))
        object.__setattr__(self, "negated_output", tuple(self.negated_output))

    @classmethod
    def from_condition(cls, lower, upper, output_condition) -> Property:
        output_condition = tuple(output_condition)
        return cls(lower, upper, output_condition, negate_dnf(output_condition))

    @property
    def input_dim(self) -> int:
        return self.lower.shape[0]

    @property
    def output_dim(self) -> int:
        return len(self.output_condition[0].halfspaces[0].coeffs)

    def holds(self, y) -> np.ndarray:
        """Whether outputs satisfy the (closed) output condition."""
        y = np.asarray(y, dtype=np.float64)
        return np.any([d.margin(y) >= 0 for d in self.output_condition], axis=0)

    def violation_margin(self, y) -> np.ndarray:
        """Largest margin by which ``y`` lies inside some negated disjunct."""
        y = np.asarray(y, dtype=np.float64)
        return np.max([d.margin(y) for d in self.negated_output], axis=0)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def __eq__(self, other):
        if not isinstance(other, Property):
            return NotImplemented
        return (
            np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
            and self.output_condition == other.output_condition
            and self.negated_output == other.negated_output
        )

    __hash__ = None


@dataclass(frozen=True)
class VerificationProblem:
    """Searches for x in the box where the network output violates the condition."""

    network: Network
    property: Property

    def __post_init__(self):
        if self.property.input_dim != self.network.input_dim:
            raise DimensionError(
                f"property has {self.property.input_dim} inputs, network has {self.network.input_dim}"
            )
        if self.property.output_dim != self.network.output_dim:
            raise DimensionError(
                f"property has {self.property.output_dim} outputs, network has {self.network.output_dim}"
            )


def build_problem(net: Network, prop: Property) -> VerificationProblem:
    return VerificationProblem(net, prop)


# -- s-expression reader ------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(;[^\n]*)|(\()|(\))|([^\s()]+))")
_VAR = re.compile(r"^([XY])_(\d+)$")


def _tokenize(text: str):
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        start = m.start(m.lastindex) if m.lastindex else m.end()
        line += text.count("\n", pos, start)
        nl = text.rfind("\n", 0, start)
        line_start = nl + 1 if nl >= 0 else 0
        pos = m.end()
        if m.group(1) is not None or m.lastindex is None:
            continue
        yield m.group(m.lastindex), line, start - line_start + 1


def _read_sexprs(text: str) -> list:
    stack: list[list] = [[]]
    where: list[tuple[int, int]] = []
    for tok, line, col in _tokenize(text):
        if tok == "(":
            stack.append([])
            where.append((line, col))
        elif tok == ")":
            if len(stack) == 1:
                raise PropertyParseError(f"line {line} column {col}: unbalanced ')'")
            done = stack.pop()
            where.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        line, col = where[-1]
        raise PropertyParseError(f"line {line} column {col}: unclosed '('")
    return stack[0]


def _number(tok: str) -> Fraction | None:
    try:
        return Fraction(tok)
    except (ValueError, ZeroDivisionError):
        try:
            v = float(tok)
        except ValueError:
            return None
        return Fraction(v) if math.isfinite(v) else None


# linear terms are (coefficients by variable name, constant)
Linear = tuple[dict, Fraction]


def _linear(expr, declared: set[str]) -> Linear:
    if isinstance(expr, str):
        num = _number(expr)
        if num is not None:
            return {}, num
        if expr not in declared:
            raise PropertyParseError(f"unknown symbol {expr!r}")
        return {expr: Fraction(1)}, Fraction(0)
    if not expr or not isinstance(expr[0], str):
        raise PropertyParseError(f"malformed term {expr!r}")
    op, args = expr[0], [_linear(a, declared) for a in expr[1:]]
    if op == "+":
        return _lin_sum(args, [1] * len(args))
    if op == "-":
        if len(args) == 1:
            return _lin_scale(args[0], Fraction(-1))
        return _lin_sum(args, [1] + [-1] * (len(args) - 1))
    if op == "*":
        coeffs, const = {}, Fraction(1)
        for a in args:
            if a[0]:
                if coeffs:
                    raise UnsupportedFeatureError("non-linear product of variables")
                coeffs = a
            else:
                const *= a[1]
        return _lin_scale(coeffs, const) if coeffs else ({}, const)
    if op == "/":
        if len(args) != 2 or args[1][0] or args[1][1] == 0:
            raise UnsupportedFeatureError("division must be by a non-zero constant")
        return _lin_scale(args[0], 1 / args[1][1])
    raise UnsupportedFeatureError(f"unsupported operator {op!r}")


def _lin_scale(term: Linear, k: Fraction) -> Linear:
    coeffs, const = term
    return {v: c * k for v, c in coeffs.items()}, const * k


def _lin_sum(terms, signs) -> Linear:
    coeffs: dict = {}
    const = Fraction(0)
    for (cs, c0), s in zip(terms, signs):
        for v, c in cs.items():
            coeffs[v] = coeffs.get(v, 0) + s * c
        const += s * c0
    return {v: c for v, c in coeffs.items() if c != 0}, const


def _formula(expr, declared):
    """Formula tree: ('and'|'or', [children]) or ('atom', coeffs, rhs) meaning coeffs.v <= rhs."""
    if not isinstance(expr, list) or not expr or not isinstance(expr[0], str):
        raise PropertyParseError(f"malformed assertion {expr!r}")
    op = expr[0]
    if op in ("and", "or"):
        return op, [_formula(e, declared) for e in expr[1:]]
    if op in ("<=", ">="):
        if len(expr) != 3:
            raise PropertyParseError(f"{op} takes exactly two arguments")
        lhs, rhs = _linear(expr[1], declared), _linear(expr[2], declared)
        coeffs, const = _lin_sum([lhs, rhs], [1, -1])  # lhs - rhs (<= | >=) 0
        if op == ">=":
            coeffs, const = _lin_scale((coeffs, const), Fraction(-1))
        return "atom", coeffs, -const
    if op in ("<", ">", "="):
        raise UnsupportedFeatureError(f"operator {op!r} is not in the supported subset")
    raise UnsupportedFeatureError(f"unsupported connective {op!r}")


def _kind(f) -> set[str]:
    if f[0] == "atom":
        return {name[0] for name in f[1]}
    return set().union(*(_kind(c) for c in f[1])) if f[1] else set()


def _dnf(f) -> list[list]:
    if f[0] == "atom":
        return [[f]]
    parts = [_dnf(c) for c in f[1]]
    if f[0] == "or":
        return [conj for p in parts for conj in p]
    out = [[]]
    for p in parts:
        out = [a + b for a in out for b in p]
    return out


def parse_property(text: str) -> Property:
    declared: dict[str, int] = {}
    inputs, outputs = [], []
    for form in _read_sexprs(text):
        if not isinstance(form, list) or not form:
            raise PropertyParseError(f"unexpected top-level item {form!r}")
        head = form[0]
        if head == "declare-const":
            if len(form) != 3 or not isinstance(form[1], str) or not _VAR.match(form[1]):
                raise PropertyParseError(f"bad declaration {form!r}; expected (declare-const X_i Real)")
            if form[2] != "Real":
                raise UnsupportedFeatureError(f"unsupported sort {form[2]!r}")
            declared[form[1]] = int(_VAR.match(form[1]).group(2))
        elif head == "assert":
            if len(form) != 2:
                raise PropertyParseError("assert takes exactly one formula")
            f = _formula(form[1], set(declared))
            kind = _kind(f)
            if kind == {"X"}:
                inputs.append(f)
            elif kind == {"Y"}:
                outputs.append(f)
            elif kind:
                raise UnsupportedFeatureError("assertions mixing inputs and outputs are not supported")
        else:
            raise UnsupportedFeatureError(f"unsupported command {head!r}")

    n_in = _dense_count(declared, "X")
    n_out = _dense_count(declared, "Y")
    if n_in == 0 or n_out == 0:
        raise PropertyParseError("property must declare at least one X_i and one Y_j")

    lo = np.full(n_in, -np.inf)
    hi = np.full(n_in, np.inf)
    for atom in _input_atoms(inputs):
        _, coeffs, rhs = atom
        if len(coeffs) != 1:
            raise UnsupportedFeatureError("input constraints must bound a single variable")
        (name, c), = coeffs.items()
        i = declared[name]
        bound = float(rhs / c)
        if c > 0:
            hi[i] = min(hi[i], bound)
        else:
            lo[i] = max(lo[i], bound)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        missing = [f"X_{i}" for i in range(n_in) if not (np.isfinite(lo[i]) and np.isfinite(hi[i]))]
        raise UnsupportedFeatureError(f"input box is unbounded for {', '.join(missing)}")

    if not outputs:
        raise PropertyParseError("property has no output assertion")
    conjs = _dnf(("and", outputs))
    condition = tuple(_disjunct(conj, declared, n_out) for conj in conjs)
    return Property.from_condition(lo, hi, condition)


def _dense_count(declared: dict[str, int], prefix: str) -> int:
    idx = sorted(i for name, i in declared.items() if name[0] == prefix)
    if idx != list(range(len(idx))):
        raise PropertyParseError(f"{prefix} variables must be numbered 0..n-1")
    return len(idx)


def _input_atoms(forms):
    for f in forms:
        if f[0] == "atom":
            yield f
        elif f[0] == "and":
            yield from _input_atoms(f[1])
        else:
            raise UnsupportedFeatureError("disjunctive input constraints are not supported (input must be a box)")


def _disjunct(atoms, declared, n_out) -> Disjunct:
    hs = []
    for _, coeffs, rhs in atoms:
        row = [0.0] * n_out
        for name, c in coeffs.items():
            row[declared[name]] = float(c)
        h = Halfspace(tuple(row), float(rhs))
        if h not in hs:
            hs.append(h)
    return Disjunct(tuple(hs))


def _num(v: float) -> str:
    return repr(float(v))


def _term(coeffs) -> str:
    terms = [f"(* {_num(c)} Y_{j})" for j, c in enumerate(coeffs) if c != 0]
    if not terms:
        return "0.0"
    return terms[0] if len(terms) == 1 else f"(+ {' '.join(terms)})"


def emit_property(prop: Property) -> str:
    lines = [f"(declare-const X_{i} Real)" for i in range(prop.input_dim)]
    lines += [f"(declare-const Y_{j} Real)" for j in range(prop.output_dim)]
    for i, (lo, hi) in enumerate(zip(prop.lower, prop.upper)):
        lines.append(f"(assert (>= X_{i} {_num(lo)}))")
        lines.append(f"(assert (<= X_{i} {_num(hi)}))")
    conjs = []
    for d in prop.output_condition:
        atoms = [f"(<= {_term(h.coeffs)} {_num(h.rhs)})" for h in d.halfspaces]
        conjs.append(atoms[0] if len(atoms) == 1 else f"(and {' '.join(atoms)})")
    lines.append(f"(assert {conjs[0] if len(conjs) == 1 else '(or ' + ' '.join(conjs) + ')'})")
    return "\n".join(lines) + "\n"
