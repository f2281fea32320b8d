"""Pontryagin extremals and their constants of the motion.

Build an optimal control problem, form its Hamiltonian, eliminate the
controls through the stationarity conditions, integrate extremals, and check
or search for functions that stay constant along them.
"""

__version__ = "0.1.0"

from .conservation import (  # noqa: E402
    ConservationVerdict,
    SymbolicStatus,
    check_numeric,
    check_symbolic,
    reduce_modulo_stationarity,
    residual,
)
from .discovery import AnsatzSpec, DiscoveryResult, Family, discover, extract_nullspace  # noqa: E402
from .expr import Expr, differentiate, evaluate, free_variables, is_zero, parse, substitute, to_text  # noqa: E402
from .extremal import ExtremalField, Trajectory, build_field, evaluate_along, integrate  # noqa: E402
from .ocp import (  # noqa: E402
    Box,
    ControlElimination,
    Free,
    OCProblem,
    build_hamiltonian,
    eliminate_controls,
    make_problem,
    stationarity_system,
    validate,
)
