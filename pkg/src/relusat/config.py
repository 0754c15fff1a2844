"""Numeric tolerances and search knobs, kept in one place so runs can log them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-8  # LP primal feasibility
    opt: float = 1e-9  # LP reduced-cost optimality
    pivot: float = 1e-10  # smallest usable pivot element
    improve: float = 1e-9  # minimum bound improvement reported by tighten()
    bound_slack: float = 1e-9  # outward slack on every computed bound
    phase_snap: float = 1e-9  # tightened bound this close to zero counts as zero
    witness_margin: float = 1e-6  # counterexamples must violate the property by more than this
    lp_confirm_band: float = 1e-6  # |margin| below this triggers an LP double check in deduce
    max_pivots: int = 50_000
    bland_after: int = 1_000  # degenerate pivots before switching to Bland's rule
    refactor_every: int = 64

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_TOLERANCES = Tolerances()


@dataclass(frozen=True)
class SearchConfig:
    beam_width: int = 4000
    stabilize_k: int = 64
    stabilize_max_depth: int = 4
    restart_node_limit: int = 100_000
    restart_frontier_limit: int = 10_000
    restarts: bool = True
    # both limits are multiplied by this after every restart, so a run that
    # keeps restarting still terminates
    restart_growth: float = 2.0
    seed: int = 0
    timeout: float | None = None  # seconds
    full_lp: bool = False  # LP feasibility check on every node, not just borderline ones
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam width must be at least 1")
        if self.stabilize_k < 0:
            raise ValueError("stabilize_k must be non-negative")
        if self.stabilize_max_depth < 0:
            raise ValueError("stabilize_max_depth must be non-negative")
        if self.restart_node_limit < 1 or self.restart_frontier_limit < 1:
            raise ValueError("restart limits must be at least 1")
        if self.restart_growth < 1.0:
            raise ValueError("restart_growth must be at least 1")
        if self.timeout is not None and self.timeout <= 0:
            raise ValueError("timeout must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> SearchConfig:
        data = dict(data)
        tol = data.pop("tolerances", None)
        return cls(**data, tolerances=Tolerances(**tol) if tol else Tolerances())
