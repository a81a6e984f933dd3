"""Two-step Bayesian parameter estimation for ODE models."""

import json

from ._core import (
    ConfigError,
    OptimizationFailure,
    SplineBasis,
    credible_intervals,
    criterion,
    default_k_n,
    least_squares_fit,
    midpoint_design,
    posterior_sample,
    psi,
    vb_estimate,
)

__all__ = [
    "ConfigError",
    "OptimizationFailure",
    "SplineBasis",
    "bvm",
    "credible_intervals",
    "criterion",
    "default_k_n",
    "least_squares_fit",
    "midpoint_design",
    "posterior_sample",
    "psi",
    "run_study",
    "vb_estimate",
]


def run_study(config=None, **overrides):
    """Run a coverage study. Returns (csv_text, result_dict)."""
    from ._core import _run_study

    cfg = dict(config or {})
    cfg.update(overrides)
    csv, result = _run_study(json.dumps(cfg))
    return csv, json.loads(result)


def bvm(config=None, rep=0, **overrides):
    """Normal-approximation quantities and diagnostic for one replication."""
    from ._core import _bvm

    cfg = dict(config or {})
    cfg.update(overrides)
    return json.loads(_bvm(json.dumps(cfg), rep))
