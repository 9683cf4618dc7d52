"""Discrete energies, chemical potential, and slope surrogates on the circle.

Two energy levels coexist: the regularized functional with a gradient
penalty and a nonconvex well, and its relaxation built from the convex
envelope.  The auxiliary field `g_field` ties the two together through
the discrete identity  Dx(g) ~ f * Dx(chemical potential),  which the
dissipation audit relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .potential import ConvexEnvelope, PotentialSpec, eval_q1
from .wasserstein1d import DensityField

__all__ = [
    "EnergyReport",
    "chemical_potential",
    "dx_centered",
    "dx_forward",
    "energy_eps",
    "energy_report",
    "energy_star",
    "g_field",
    "laplacian",
    "slope_eps",
    "slope_star",
]


def dx_forward(values, h):
    """Forward difference (v[j+1] - v[j]) / h with periodic wrap."""
    v = np.asarray(values, dtype=float)
    return (np.roll(v, -1) - v) / h


def dx_centered(values, h):
    """Centered difference (v[j+1] - v[j-1]) / (2h) with periodic wrap."""
    v = np.asarray(values, dtype=float)
    return (np.roll(v, -1) - np.roll(v, 1)) / (2.0 * h)


def laplacian(values, h):
    """Standard three-point second difference with periodic wrap."""
    v = np.asarray(values, dtype=float)
    return (np.roll(v, -1) - 2.0 * v + np.roll(v, 1)) / (h * h)


@dataclass(frozen=True)
class EnergyReport:
    """Scalar energy diagnostics for a single snapshot.

    `gap` is the excess of the regularized energy over the relaxed one;
    it cannot drop below zero (up to rounding) because the gradient term
    is a square and the well dominates its envelope pointwise.
    """

    e_eps: float
    e_star: float
    slope_eps: float
    slope_star: float
    gap: float

    def __post_init__(self):
        if self.gap < -1e-10:
            raise ValueError(f"negative energy gap {self.gap!r}")


def energy_eps(f: DensityField, eps: float, spec: PotentialSpec) -> float:
    """Gradient-penalized energy: sum of (eps^2/2)|Dx f|^2 + W(f), times h.

    The gradient term uses the forward difference so that its discrete
    first variation pairs with the centered operators used elsewhere.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    h = f.h
    grad = dx_forward(f.values, h)
    return float(np.sum(0.5 * eps * eps * grad * grad + spec.eval_W(f.values)) * h)


def energy_star(f: DensityField, env: ConvexEnvelope) -> float:
    """Relaxed energy: the convex envelope integrated against the grid."""
    return float(np.sum(env.eval_Wss(f.values)) * f.h)


def chemical_potential(f: DensityField, eps: float, spec: PotentialSpec) -> np.ndarray:
    """W'(f) minus eps^2 times the discrete second difference of f."""
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    return spec.eval_W1(f.values) - eps * eps * laplacian(f.values, f.h)


def g_field(f: DensityField, eps: float, spec: PotentialSpec) -> np.ndarray:
    """Auxiliary flux potential whose gradient matches f * Dx(e).

    Built from the pressure-like term Q'(f) plus gradient corrections;
    all derivatives centered so the identity holds to first order.
    """
    h = f.h
    grad = dx_centered(f.values, h)
    return (
        eval_q1(spec, f.values)
        + 1.5 * eps * eps * grad * grad
        - eps * eps * dx_centered(f.values * grad, h)
    )


def slope_eps(f: DensityField, eps: float, spec: PotentialSpec, floor: float | None = None) -> float:
    """Upper slope surrogate: sqrt of sum f * (Dx e)^2 h off the vacuum set.

    `floor` masks near-vacuum cells where the factorized flux velocity is
    not resolvable; it defaults to 1e-8 times the field maximum.
    """
    if floor is None:
        floor = 1e-8 * float(np.max(f.values))
    if floor < 0.0:
        raise ValueError("floor must be nonnegative")
    e = chemical_potential(f, eps, spec)
    de = dx_centered(e, f.h)
    mask = f.values > floor
    return float(np.sqrt(np.sum(f.values[mask] * de[mask] ** 2) * f.h))


def slope_star(f: DensityField, env: ConvexEnvelope) -> float:
    """Relaxed slope: sqrt of sum f * (Dx W**'(f))^2 h.

    Composing W**' pointwise before differencing makes the slope vanish
    identically across contact-interval plateaus.
    """
    de = dx_centered(env.eval_Wss1(f.values), f.h)
    return float(np.sqrt(np.sum(f.values * de * de) * f.h))


def energy_report(
    f: DensityField,
    eps: float,
    spec: PotentialSpec,
    env: ConvexEnvelope,
    floor: float | None = None,
) -> EnergyReport:
    """Bundle both energies and both slopes for one snapshot."""
    e_eps = energy_eps(f, eps, spec)
    e_star = energy_star(f, env)
    return EnergyReport(
        e_eps=e_eps,
        e_star=e_star,
        slope_eps=slope_eps(f, eps, spec, floor=floor),
        slope_star=slope_star(f, env),
        gap=e_eps - e_star,
    )
