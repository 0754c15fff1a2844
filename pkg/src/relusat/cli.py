"""Command-line front end.

    relusat verify --net NET.json --prop PROP [--timeout S] [--beam N] ...
    relusat ablation --manifest MANIFEST [--timeout S] [--configs N,S,P,...]
    relusat gen --out DIR [--seed S] [--count N] [--hard]

``verify`` prints the verdict on the first stdout line and, for sat, one
``x_i = value`` line per input. Exit codes: 0 unsat, 1 sat, 2 unknown or
timeout, 3 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .config import SearchConfig
from .search import Status, verify
from .specio import SpecError, build_problem, parse_network, parse_property

EXIT_CODES = {Status.UNSAT: 0, Status.SAT: 1, Status.UNKNOWN: 2, Status.TIMEOUT: 2}
EXIT_USAGE = 3

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _search_flags(p: argparse.ArgumentParser, defaults: SearchConfig):
    p.add_argument("--timeout", type=_positive_float, default=defaults.timeout, help="seconds")
    p.add_argument("--beam", type=_positive_int, default=defaults.beam_width, help="nodes per batch")
    p.add_argument("--stabilize-k", type=_nonneg_int, default=defaults.stabilize_k)
    p.add_argument("--stabilize-depth", type=_nonneg_int, default=defaults.stabilize_max_depth)
    p.add_argument("--restart-nodes", type=_positive_int, default=defaults.restart_node_limit)
    p.add_argument("--restart-frontier", type=_positive_int, default=defaults.restart_frontier_limit)
    p.add_argument("--no-restarts", action="store_true")
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--full-lp", action="store_true", help="LP feasibility check on every node")


def _config(args) -> SearchConfig:
    return SearchConfig(
        beam_width=args.beam,
        stabilize_k=args.stabilize_k,
        stabilize_max_depth=args.stabilize_depth,
        restart_node_limit=args.restart_nodes,
        restart_frontier_limit=args.restart_frontier,
        restarts=not args.no_restarts,
        seed=args.seed,
        timeout=args.timeout,
        full_lp=args.full_lp,
    )


@dataclass
class RunRecord:
    net: str
    prop: str
    config: dict
    status: str
    counterexample: list[float] | None = None
    output: list[float] | None = None
    reason: str | None = None
    stats: dict = field(default_factory=dict)
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> RunRecord:
        return cls(**json.loads(text))

    @property
    def timings(self) -> dict:
        return self.stats.get("timings", {})


def load_problem(net_path, prop_path):
    try:
        net = parse_network(Path(net_path).read_text())
        prop = parse_property(Path(prop_path).read_text())
        return build_problem(net, prop)
    except OSError as e:
        raise UsageError(f"cannot read {e.filename}: {e.strerror}") from e
    except SpecError as e:
        raise UsageError(str(e)) from e


def run_problem(net_path, prop_path, config: SearchConfig) -> RunRecord:
    problem = load_problem(net_path, prop_path)
    verdict = verify(problem, config)
    return RunRecord(
        str(net_path),
        str(prop_path),
        config.to_dict(),
        verdict.status.value,
        None if verdict.counterexample is None else [float(v) for v in verdict.counterexample],
        None if verdict.output is None else [float(v) for v in verdict.output],
        verdict.reason,
        verdict.stats.to_dict(),
    )


def _verify_parser() -> _Parser:
    p = _Parser(prog="relusat verify", description="Check a ReLU network against a property.")
    p.add_argument("--net", required=True)
    p.add_argument("--prop", required=True)
    p.add_argument("--stats", help="write the run record as JSON here")
    _search_flags(p, SearchConfig())
    return p


def run_verify(argv, out=None) -> int:
    out = out or sys.stdout
    try:
        args = _verify_parser().parse_args(argv)
        record = run_problem(args.net, args.prop, _config(args))
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    print(record.status, file=out)
    if record.counterexample is not None:
        for i, v in enumerate(record.counterexample):
            print(f"x_{i} = {v!r}", file=out)
    if args.stats:
        try:
            Path(args.stats).write_text(record.to_json() + "\n")
        except OSError as e:
            print(f"cannot write {args.stats}: {e.strerror}", file=sys.stderr)
            return EXIT_USAGE
    return EXIT_CODES[Status(record.status)]


# -- ablation -----------------------------------------------------------------

ABLATION_CONFIGS = ("N", "S", "P", "P+R", "P+S", "P+S+R")


def ablation_config(name: str, base: SearchConfig) -> SearchConfig:
    """N: one node per step, no stabilization, no restarts; S adds stabilization,
    P a wide beam, R restarts."""
    parts = set(name.split("+"))
    if not parts <= {"N", "S", "P", "R"} or ("N" in parts and len(parts) > 1):
        raise ValueError(f"unknown configuration {name!r}")
    return replace(
        base,
        beam_width=base.beam_width if "P" in parts else 1,
        stabilize_k=base.stabilize_k if "S" in parts else 0,
        restarts="R" in parts,
    )


def read_manifest(path) -> list[tuple[Path, Path]]:
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise UsageError(f"{path}:{lineno}: expected 'net_path,prop_path'")
        pairs.append(tuple(p if Path(p).is_absolute() else path.parent / p for p in map(Path, parts)))
    return pairs


@dataclass
class AblationRow:
    config: str
    solved: int
    total: int
    mean_time: float  # over solved instances
    verdicts: list[str]
    times: list[float]


def ablation(pairs, names, base: SearchConfig, progress=None) -> list[AblationRow]:
    problems = [load_problem(n, p) for n, p in pairs]
    rows = []
    for name in names:
        cfg = ablation_config(name, base)
        verdicts, times = [], []
        for i, problem in enumerate(problems):
            t0 = time.perf_counter()
            v = verify(problem, cfg)
            times.append(time.perf_counter() - t0)
            verdicts.append(v.status.value)
            if progress:
                progress(name, i, v.status.value, times[-1])
        solved = [t for v, t in zip(verdicts, times) if v in ("sat", "unsat")]
        mean = sum(solved) / len(solved) if solved else 0.0
        rows.append(AblationRow(name, len(solved), len(problems), mean, verdicts, times))
    return rows


def format_table(rows: list[AblationRow]) -> str:
    lines = [f"{'config':<8} {'solved':>7} {'total':>6} {'mean_s':>8}"]
    for r in rows:
        lines.append(f"{r.config:<8} {r.solved:>7} {r.total:>6} {r.mean_time:>8.3f}")
    return "\n".join(lines)


def run_ablation(argv, out=None) -> int:
    out = out or sys.stdout
    defaults = replace(SearchConfig(), timeout=60.0)
    p = _Parser(prog="relusat ablation", description="Compare search configurations over a manifest.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--configs", default=",".join(ABLATION_CONFIGS))
    p.add_argument("--json", help="write per-instance results here")
    _search_flags(p, defaults)
    try:
        args = p.parse_args(argv)
        names = [c.strip() for c in args.configs.split(",") if c.strip()]
        base = _config(args)
        for n in names:
            ablation_config(n, base)
        pairs = read_manifest(args.manifest)
        rows = ablation(pairs, names, base, lambda c, i, s, t: log.info("%s #%d %s %.2fs", c, i, s, t))
    except (UsageError, ValueError) as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"cannot read {e.filename}: {e.strerror}", file=sys.stderr)
        return EXIT_USAGE
    print(format_table(rows), file=out)
    if args.json:
        Path(args.json).write_text(json.dumps([asdict(r) for r in rows], indent=2) + "\n")
    return 0


# -- corpus generation and the oracle -------------------------------------------


def run_gen(argv, out=None) -> int:
    from .benchgen import gen_hard_instances, gen_instances, write_corpus

    out = out or sys.stdout
    p = _Parser(prog="relusat gen", description="Write a random benchmark corpus.")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=_nonneg_int, default=20)
    p.add_argument("--sat-fraction", type=float, default=0.5)
    p.add_argument("--hard", action="store_true", help="larger networks labeled by sampling")
    try:
        args = p.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    if args.hard:
        instances = gen_hard_instances(args.seed, args.count)
    else:
        instances = gen_instances(args.seed, args.count, sat_fraction=args.sat_fraction)
    manifest = write_corpus(instances, args.out)
    print(manifest, file=out)
    return 0


def run_oracle(argv, out=None) -> int:
    from .oracle import OracleRefused, enumerate_verify

    out = out or sys.stdout
    p = _Parser(prog="relusat oracle", description="Brute-force pattern enumeration (debugging).")
    p.add_argument("--net", required=True)
    p.add_argument("--prop", required=True)
    try:
        args = p.parse_args(argv)
        verdict = enumerate_verify(load_problem(args.net, args.prop))
    except (UsageError, OracleRefused) as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    print(verdict.status.value, file=out)
    if verdict.counterexample is not None:
        for i, v in enumerate(verdict.counterexample):
            print(f"x_{i} = {float(v)!r}", file=out)
    return EXIT_CODES[verdict.status]


COMMANDS = {"verify": run_verify, "ablation": run_ablation, "gen": run_gen, "oracle": run_oracle}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if argv and argv[0] in ("-V", "--version"):
        print(__version__)
        return 0
    if not argv or argv[0] not in COMMANDS:
        # bare flags mean verify
        if argv and argv[0].startswith("-") and argv[0] not in ("-h", "--help"):
            return run_verify(argv)
        print("usage: relusat {verify,ablation,gen,oracle} [options]", file=sys.stderr)
        return EXIT_USAGE if argv[:1] not in (["-h"], ["--help"]) else 0
    return COMMANDS[argv[0]](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
