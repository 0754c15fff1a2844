"""Complete verification of ReLU networks by DPLL(T) search over activation patterns."""

__version__ = "0.1.0"

from .config import SearchConfig, Tolerances
from .network import AffineLayer, Network, infer
from .search import Status, Verdict, verify, verify_witness
from .specio import Property, VerificationProblem, build_problem, parse_network, parse_property

__all__ = [
    "AffineLayer",
    "Network",
    "Property",
    "SearchConfig",
    "Status",
    "Tolerances",
    "Verdict",
    "VerificationProblem",
    "build_problem",
    "infer",
    "parse_network",
    "parse_property",
    "verify",
    "verify_witness",
]
