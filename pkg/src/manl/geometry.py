"""Adjacent-box geometry for the two-species annihilating diffusion model.

The positive species lives in ``D+ = (0,1)^d``, the negative species in
``D- = (0,1)^{d-1} x (-1,0)``.  The two boxes share the facet
``I = (0,1)^{d-1} x {0}``, where all interaction happens.  Everything in
this module is exact, stateless and dimension-generic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class SpeciesTag(Enum):
    """Which box a particle belongs to."""

    PLUS = 1
    MINUS = -1


@dataclass(frozen=True)
class Box:
    """An axis-aligned box given by per-axis lower/upper corners."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have equal length")
        for a, b in zip(self.lo, self.hi):
            if not (b > a):
                raise ValueError(f"degenerate box axis: [{a}, {b}]")

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def lengths(self) -> tuple:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains(self, x, tol: float = 1e-12) -> bool:
        """Membership in the closed box, up to a round-off tolerance."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.d},)")
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))


@dataclass(frozen=True)
class DomainPair:
    """The glued pair (D+, D-) with unit reaction and diffusion constants.

    Only the canonical normalization (unit boxes, identity diffusion,
    unit rate constants) is supported; anything else is rejected so that
    every downstream formula can assume it.
    """

    d: int
    lam: float = 1.0
    lam_hat: float = 1.0
    rho: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.lam != 1.0 or self.lam_hat != 1.0 or self.rho != 1.0:
            raise ValueError("only lam = lam_hat = rho = 1 is supported")

    @property
    def box_plus(self) -> Box:
        return Box(lo=(0.0,) * self.d, hi=(1.0,) * self.d)

    @property
    def box_minus(self) -> Box:
        return Box(lo=(0.0,) * (self.d - 1) + (-1.0,), hi=(1.0,) * (self.d - 1) + (0.0,))

    def box(self, species: SpeciesTag) -> Box:
        return self.box_plus if species is SpeciesTag.PLUS else self.box_minus


def fold_reflect(coord, lo: float, hi: float):
    """Fold a free coordinate into [lo, hi] by repeated reflection.

    This is the exact map for reflected Brownian motion on an interval:
    the folded Gaussian step has the Neumann heat kernel as its
    transition density.  Accepts scalars or arrays.

    The map is 2(hi-lo)-periodic, idempotent on [lo, hi], and even
    around both endpoints.
    """
    if not (hi > lo):
        raise ValueError("need hi > lo")
    arr = np.asarray(coord, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite coordinate")
    length = hi - lo
    period = 2.0 * length
    y = np.mod(arr - lo, period)
    y = np.where(y > length, period - y, y)
    out = lo + y
    if np.isscalar(coord) or arr.ndim == 0:
        return float(out)
    return out


def _check_point(x, box: Box, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (box.d,):
        raise ValueError(f"{name} has shape {x.shape}, expected ({box.d},)")
    if not box.contains(x):
        raise ValueError(f"{name}={x.tolist()} lies outside its closed box")
    return x


def interface_dist_sq(x, y, domain: DomainPair) -> float:
    """Squared distance from (x, y) in D+ x D- to the diagonal over I.

    Computes ``min_z |x - z|^2 + |y - z*|^2`` over interface points
    ``z = (z', 0)``, where ``z*`` denotes the same point seen from D-.
    The minimizer in the tangential coordinates is the clamped midpoint
    ``m = clamp((x' + y')/2, [0,1]^{d-1})``, and the normal coordinates
    contribute ``x_d^2 + y_d^2``.
    """
    x = _check_point(x, domain.box_plus, "x")
    y = _check_point(y, domain.box_minus, "y")
    d = domain.d
    xn, yn = x[d - 1], y[d - 1]
    val = xn * xn + yn * yn
    if d > 1:
        m = np.clip(0.5 * (x[: d - 1] + y[: d - 1]), 0.0, 1.0)
        val += float(np.sum((x[: d - 1] - m) ** 2) + np.sum((y[: d - 1] - m) ** 2))
    return float(val)


def in_interaction_zone(x, y, delta: float, domain: DomainPair) -> bool:
    """Whether the pair (x, y) lies in the interaction zone I^delta.

    The zone is the open sublevel set ``interface_dist_sq < delta^2``;
    the boundary (distance exactly delta) is excluded.
    """
    if not (delta > 0.0) or not math.isfinite(delta):
        raise ValueError("delta must be a positive finite number")
    return interface_dist_sq(x, y, domain) < delta * delta


def mirror_point(x, domain: DomainPair) -> np.ndarray:
    """Reflect a point across the interface hyperplane (x_d -> -x_d)."""
    x = np.asarray(x, dtype=float)
    out = x.copy()
    out[domain.d - 1] = -out[domain.d - 1]
    return out
