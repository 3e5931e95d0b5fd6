"""Sandwiching a capillary convex body between dilates of an ellipsoid cap.

From the body's extents we build the cap with base radius (2/3) R_in and
height H/3; the body then sits between the cap and its dilate by
(3/2) R_out / R_in + 3.  Containment of convex bodies is certified through
the pointwise inequality of capillary support functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ellipsoid import EllipsoidCap, cap_from_RH, cap_support
from .errors import DomainError
from .grid import BodyExtents, CapGeometry, ScalarField, curvature_tensor


@dataclass
class SandwichReport:
    cap: EllipsoidCap
    factor: float
    min_ratio: float
    max_ratio: float
    boundary_min_ratio: float
    boundary_max_ratio: float
    tol: float
    passed: bool

    def to_json_dict(self) -> dict:
        return {
            "cap": self.cap.to_json_dict(),
            "factor": self.factor,
            "min_ratio": self.min_ratio,
            "max_ratio": self.max_ratio,
            "boundary_min_ratio": self.boundary_min_ratio,
            "boundary_max_ratio": self.boundary_max_ratio,
            "tol": self.tol,
            "pass": self.passed,
        }


def height_ratio_check(extents: BodyExtents, theta: float):
    """H / R_in with its admissibility flag (must stay below tan(theta))."""
    ratio = extents.H / extents.R_in
    st, ct = math.sin(theta), math.cos(theta)
    return ratio, ratio * ct < st


def john_construct(extents: BodyExtents, theta: float):
    """Sandwich cap and outer dilation factor for a body with these extents."""
    ratio, ok = height_ratio_check(extents, theta)
    if not ok:
        raise DomainError(
            f"H/R_in = {ratio:.6g} >= tan(theta); not a capillary convex body"
        )
    cap = cap_from_RH(2.0 / 3.0 * extents.R_in, extents.H / 3.0, theta)
    factor = 1.5 * extents.R_out / extents.R_in + 3.0
    return cap, factor


def verify_sandwich(
    geom: CapGeometry,
    h: ScalarField,
    cap: EllipsoidCap,
    factor: float,
    tol: float | None = None,
) -> SandwichReport:
    """Check support-function sandwiching: 1 <= h / support(cap) <= factor."""
    cd = curvature_tensor(geom, h)
    if cd.lambda_min <= 0.0:
        raise DomainError("support function is not strictly convex")
    if tol is None:
        tol = 5.0 * geom.grid_eps()
    w = cap_support(geom, cap).values
    ratio = h.values / w
    min_ratio = float(np.min(ratio))
    max_ratio = float(np.max(ratio))
    passed = (min_ratio >= 1.0 - tol) and (max_ratio <= factor + tol)
    return SandwichReport(
        cap=cap,
        factor=factor,
        min_ratio=min_ratio,
        max_ratio=max_ratio,
        boundary_min_ratio=float(np.min(ratio[-1])),
        boundary_max_ratio=float(np.max(ratio[-1])),
        tol=tol,
        passed=passed,
    )
