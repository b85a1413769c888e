"""Bilevel MPC gait timing on a single-rigid-body quadruped."""

import json
from pathlib import Path

from ._bmpc import (
    BmpcError,
    ToyProblem,
    cost_gradient,
    run_toy,
    solve_qp,
    validate_scenario,
)
from ._bmpc import simulate as _simulate

__all__ = [
    "BmpcError",
    "ToyProblem",
    "cost_gradient",
    "load_scenario",
    "run_toy",
    "simulate",
    "solve_qp",
    "validate_scenario",
]


def load_scenario(path):
    """Scenario file as a dict with every default filled in."""
    return json.loads(validate_scenario(Path(path).read_text()))


def simulate(scenario, bilevel=None):
    """Closed-loop run. `scenario` is a path, a JSON string or a dict.

    Returns (summary dict, trace csv text)."""
    if isinstance(scenario, dict):
        text = json.dumps(scenario)
    elif isinstance(scenario, Path) or (isinstance(scenario, str) and not scenario.lstrip().startswith("{")):
        text = Path(scenario).read_text()
    else:
        text = scenario
    summary, trace = _simulate(text, bilevel)
    return json.loads(summary), trace
