"""Constitutive scalar functions: relaxed obstacle potential, porosity
interpolation, interface modulation and the surface-tension constant c0.

All functions are vectorized over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import integrate


@dataclass(frozen=True)
class PotentialParams:
    """Moreau-Yosida relaxed double obstacle potential with parameter ``s``."""

    s: float = 1.0e6

    def __post_init__(self):
        if not self.s > 1.0:
            raise ValueError("relaxation parameter s must exceed 1")

    @property
    def scale(self) -> float:
        return self.s / (self.s - 1.0)

    @property
    def kinks(self) -> tuple[float, float]:
        k = 1.0 / self.scale
        return (-k, k)


@dataclass(frozen=True)
class InterpolationParams:
    """Inverse permeability ``alpha_eps`` with plateau below -2 and zero above 1."""

    alpha_bar: float = 0.03
    eps: float = 2.5e-4
    theta: float = 0.99

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.alpha_bar < 0:
            raise ValueError("alpha_bar must be nonnegative")
        if not -1.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (-1, 1)")


class Variant(str, Enum):
    HALF = "half"
    SQRT_PSI = "sqrt_psi"


@dataclass(frozen=True)
class ModulationChoice:
    variant: Variant = Variant.SQRT_PSI
    delta_eps: float = 0.0
    delta_floor: float = 1.0e-12

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.delta_eps < 0 or self.delta_floor < 0:
            raise ValueError("delta_eps and delta_floor must be nonnegative")


# ----------------------------------------------------------------- potential

def psi_family(y, params: PotentialParams = PotentialParams()):
    """Return ``(psi, psi_plus, psi_minus, dpsi_plus, dpsi_minus)``.

    ``psi_plus`` is the convex penalty part, ``psi_minus`` the concave
    quadratic part; ``psi = psi_plus + psi_minus`` holds identically.
    """
    y = np.asarray(y, dtype=float)
    s, k = params.s, params.scale
    ky = k * y
    over = np.maximum(0.0, ky - 1.0)
    under = np.minimum(0.0, ky + 1.0)
    p_plus = 0.5 * s * (over ** 2 + under ** 2)
    p_minus = 0.5 * (1.0 - ky ** 2) + 0.5 / (s - 1.0)
    dp_plus = s * k * (over + under)
    dp_minus = -k * ky
    # the wells cancel to round-off; clamp so psi >= 0 exactly
    total = np.maximum(p_plus + p_minus, 0.0)
    return total, p_plus, p_minus, dp_plus, dp_minus


def psi(y, params: PotentialParams = PotentialParams()):
    return psi_family(y, params)[0]


def dpsi(y, params: PotentialParams = PotentialParams()):
    f = psi_family(y, params)
    return f[3] + f[4]


def d2psi_plus(y, params: PotentialParams = PotentialParams()):
    """Generalized (Newton) derivative of ``psi_plus'``."""
    ky = params.scale * np.asarray(y, dtype=float)
    return params.s * params.scale ** 2 * (np.abs(ky) > 1.0)


def obstacle_psi(y):
    """Pure double obstacle well on [-1, 1]; +inf outside."""
    y = np.asarray(y, dtype=float)
    return np.where(np.abs(y) <= 1.0, 0.5 * (1.0 - y ** 2), np.inf)


def quartic_psi(y):
    y = np.asarray(y, dtype=float)
    return 0.25 * (1.0 - y ** 2) ** 2


# ------------------------------------------------------------- interpolation

def alpha_family(y, params: InterpolationParams = InterpolationParams()):
    """Return ``(alpha_eps, alpha_eps')``.

    The derivative is one-sided (zero) at the plateau kink ``y = -2``.
    """
    y = np.asarray(y, dtype=float)
    th = params.theta
    c = params.alpha_bar / params.eps
    quad = (y - 1.0) ** 2 / ((1.0 - th) * (3.0 + th))
    dquad = 2.0 * (y - 1.0) / ((1.0 - th) * (3.0 + th))
    lin = 1.0 - 2.0 * (y + 1.0) / (3.0 + th)
    plateau = 1.0 + 2.0 / (3.0 + th)
    low = np.minimum(plateau, lin)
    dlow = np.where(y > -2.0, -2.0 / (3.0 + th), 0.0)
    a = np.where(y >= 1.0, 0.0, np.where(y >= th, quad, low))
    da = np.where(y >= 1.0, 0.0, np.where(y >= th, dquad, dlow))
    return c * a, c * da


def alpha_dd(y, params: InterpolationParams = InterpolationParams()):
    """Second derivative of ``alpha_eps`` on [theta, 1], zero elsewhere.

    At ``y = 1`` (where clamped fluid nodes sit) the left value is returned;
    it is a valid generalized derivative and the one Newton needs there.
    """
    y = np.asarray(y, dtype=float)
    th = params.theta
    c = params.alpha_bar / params.eps
    return np.where((y >= th) & (y <= 1.0),
                    2.0 * c / ((1.0 - th) * (3.0 + th)), 0.0)


def alpha(y, params: InterpolationParams = InterpolationParams()):
    return alpha_family(y, params)[0]


# ---------------------------------------------------------------- modulation

def _quad_pieces(f, a, b, breaks):
    pts = sorted({a, b, *[t for t in breaks if a < t < b]})
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-13, limit=200)
        total += val
    return total


@lru_cache(maxsize=32)
def _c0_relaxed(s: float) -> float:
    prm = PotentialParams(s)
    f = lambda t: np.sqrt(2.0 * max(float(psi(t, prm)), 0.0))
    return 0.5 * _quad_pieces(f, -1.0, 1.0, prm.kinks)


def c0_value(params="relaxed") -> float:
    """``c0 = 1/2 int_{-1}^{1} sqrt(2 psi)``.

    ``params`` is a :class:`PotentialParams`, ``"relaxed"`` (default s),
    ``"obstacle"``, ``"quartic"`` or a callable potential.
    """
    if isinstance(params, PotentialParams):
        return _c0_relaxed(params.s)
    if params == "relaxed":
        return _c0_relaxed(PotentialParams().s)
    if params == "obstacle":
        fn = obstacle_psi
    elif params == "quartic":
        fn = quartic_psi
    elif callable(params):
        fn = params
    else:
        raise ValueError(f"unknown potential {params!r}")
    f = lambda t: np.sqrt(2.0 * max(float(fn(t)), 0.0))
    return 0.5 * _quad_pieces(f, -1.0, 1.0, [0.0])


def modulation(y, choice: ModulationChoice = ModulationChoice(),
               params: PotentialParams = PotentialParams()):
    """Return ``(M, M')`` for the configured variant."""
    y = np.asarray(y, dtype=float)
    if choice.variant is Variant.HALF:
        return np.full_like(y, 0.5), np.zeros_like(y)
    c0 = c0_value(params)
    fam = psi_family(y, params)
    p = np.maximum(fam[0], 0.0)
    dp = fam[3] + fam[4]
    m = np.sqrt((p + choice.delta_eps) / 2.0) / c0
    dm = dp / (2.0 * np.sqrt(2.0 * (p + choice.delta_eps + choice.delta_floor))) / c0
    return m, dm


@dataclass(frozen=True)
class Material:
    """Bundle of all constitutive parameters used by the solvers."""

    potential: PotentialParams = PotentialParams()
    interp: InterpolationParams = InterpolationParams()
    choice: ModulationChoice = ModulationChoice()

    @property
    def eps(self) -> float:
        return self.interp.eps

    def alpha(self, y):
        return alpha_family(y, self.interp)

    def psi(self, y):
        return psi_family(y, self.potential)

    def modulation(self, y):
        return modulation(y, self.choice, self.potential)

    @property
    def c0(self) -> float:
        return c0_value(self.potential)
