"""Pressure allocation for the three antagonistic actuators.

Maps absolute pressures (p_A, p_B, p_C) to the Delta Representation
(p_bar, dp_alpha, dp_beta) and back. p_bar is the lowest of the three
pressures and sets joint stiffness; the two decoupled differences drive the
two angles. All functions accept scalars or equally shaped arrays and work
in bar.
"""
from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

SQRT3_2 = np.sqrt(3.0) / 2.0

#: maps (dp_AB, dp_BC) onto (dp_alpha, dp_beta)
DECOUPLING_MATRIX = np.array([[0.0, SQRT3_2], [-1.0, -0.5]])

PBAR_MIN = 1.0
PBAR_MAX = 1.2


class AbsolutePressures(NamedTuple):
    p_a: np.ndarray | float
    p_b: np.ndarray | float
    p_c: np.ndarray | float


class PairwiseDifferences(NamedTuple):
    dp_ab: np.ndarray | float
    dp_bc: np.ndarray | float


class DeltaRepresentation(NamedTuple):
    p_bar: np.ndarray | float
    dp_alpha: np.ndarray | float
    dp_beta: np.ndarray | float


def _finite(*values):
    arrays = [np.asarray(v, dtype=float) for v in values]
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("pressures must be finite")
    return arrays


def differences_from_absolute(p: AbsolutePressures):
    """Return ``(PairwiseDifferences, p_bar)`` for absolute pressures."""
    p_a, p_b, p_c = _finite(*p)
    diffs = PairwiseDifferences(p_a - p_b, p_b - p_c)
    return diffs, np.minimum(np.minimum(p_a, p_b), p_c)


def absolute_from_differences(d: PairwiseDifferences, p_bar) -> AbsolutePressures:
    """Constrained inverse of :func:`differences_from_absolute`.

    Equivalent to

        p_A = max(p_bar, p_bar + dp_AB, p_bar + dp_AB + dp_BC)
        p_B = max(p_bar, p_bar + dp_BC, p_bar - dp_AB)
        p_C = max(p_bar, p_bar - dp_BC, p_bar - dp_AB - dp_BC)

    but evaluated as offsets from the lowest actuator so that the active
    constraint holds bit-exactly: min(p_A, p_B, p_C) == p_bar.
    """
    dab, dbc, p_bar = _finite(d.dp_ab, d.dp_bc, p_bar)
    phi_b = -dab
    phi_c = -dab - dbc
    low = np.minimum(np.minimum(0.0, phi_b), phi_c)
    return AbsolutePressures(p_bar + (0.0 - low), p_bar + (phi_b - low), p_bar + (phi_c - low))


def decouple(d: PairwiseDifferences):
    """(dp_AB, dp_BC) -> (dp_alpha, dp_beta)."""
    dab, dbc = _finite(d.dp_ab, d.dp_bc)
    return SQRT3_2 * dbc, -dab - 0.5 * dbc


def recouple(dp_alpha, dp_beta) -> PairwiseDifferences:
    """Exact inverse of :func:`decouple`."""
    dpa, dpb = _finite(dp_alpha, dp_beta)
    dbc = dpa / SQRT3_2
    return PairwiseDifferences(-dpb - 0.5 * dbc, dbc)


def xi(delta: DeltaRepresentation) -> AbsolutePressures:
    """Delta Representation -> absolute pressures."""
    return absolute_from_differences(recouple(delta.dp_alpha, delta.dp_beta), delta.p_bar)


def xi_inverse(p: AbsolutePressures) -> DeltaRepresentation:
    diffs, p_bar = differences_from_absolute(p)
    dpa, dpb = decouple(diffs)
    return DeltaRepresentation(p_bar, dpa, dpb)


def check_pbar(p_bar, lo=PBAR_MIN, hi=PBAR_MAX) -> bool:
    """Warn (do not raise) when p_bar leaves the admissible interval."""
    p = np.asarray(p_bar, dtype=float)
    ok = bool(np.all((p >= lo) & (p <= hi)))
    if not ok:
        warnings.warn(f"p_bar outside admissible interval [{lo}, {hi}] bar", stacklevel=2)
    return ok
