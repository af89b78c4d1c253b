"""Targeted inference for the predictive importance of one covariate.

The heavy lifting lives in the compiled extension; this package just
re-exports it.  Arrays go in as anything numpy can coerce to float64;
reports come back as plain dicts.
"""

from tlvi._core import (
    check_eif,
    estimate,
    generate,
    simulate,
    true_importance,
)

__all__ = [
    "check_eif",
    "estimate",
    "generate",
    "simulate",
    "true_importance",
]

__version__ = "0.1.0"
