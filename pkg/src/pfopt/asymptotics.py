"""One-dimensional interface identities of the sharp-interface limit.

The optimal profile solves ``Phi'' = psi'(Phi)`` with ``Phi(0) = 0`` and
``Phi -> +-1``.  It is computed from the first integral
``Phi' = sqrt(2 psi(Phi))`` by inverting ``z(Phi) = int_0^Phi dt / sqrt(2 psi)``
with adaptive quadrature and Hermite interpolation, then used to check equipartition, the two
expressions for ``c0`` and the leading-order adjoint datum ``q0+ = 1``.
"""

from __future__ import annotations

import warnings

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline
from scipy.special import roots_legendre

from .material import (ModulationChoice, PotentialParams, Variant, c0_value,
                       obstacle_psi, psi, quartic_psi)


@dataclass(frozen=True)
class Potential:
    """Even double-well potential with wells at +-1."""

    name: str
    s: float = 1.0e6

    def __post_init__(self):
        if self.name not in ("obstacle", "quartic", "relaxed"):
            raise ValueError(f"unknown potential {self.name!r}")

    def __call__(self, y):
        if self.name == "obstacle":
            return obstacle_psi(y)
        if self.name == "quartic":
            return quartic_psi(y)
        return psi(y, PotentialParams(self.s))

    @property
    def kinks(self) -> tuple:
        """Nonsmooth points of psi inside (0, 1)."""
        return (1.0 - 1.0 / self.s,) if self.name == "relaxed" else ()

    @property
    def decay_length(self) -> float:
        """Length of the exponential approach to the well past the kink (relaxed)."""
        k = self.s / (self.s - 1.0)
        return 1.0 / (k * np.sqrt(self.s - 1.0))

    @property
    def z_max(self) -> float:
        if self.name == "relaxed":
            return _table(self).z_of(self.kinks[0]) + 40.0 * self.decay_length
        return {"obstacle": np.pi / 2, "quartic": 40.0}[self.name]

    @property
    def c0(self) -> float:
        if self.name == "relaxed":
            return c0_value(PotentialParams(self.s))
        return c0_value(self.name)


def as_potential(potential) -> Potential:
    if isinstance(potential, Potential):
        return potential
    if isinstance(potential, PotentialParams):
        return Potential("relaxed", potential.s)
    return Potential(str(potential))


@dataclass
class ProfileSolution:
    z: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray


class _ProfileTable:
    """Inverse of ``z(Phi)`` on ``[0, 1]``.

    ``z`` is accumulated by adaptive quadrature between graded nodes in
    ``Phi`` (dense towards the well and at kinks of psi); the inverse is the
    cubic Hermite interpolant through ``(z_j, Phi_j)`` with the exact slopes
    ``sqrt(2 psi(Phi_j))``, since ``Phi`` is smooth as a function of ``z``.
    """

    def __init__(self, pot: Potential):
        self.pot = pot
        ys = [np.linspace(0.0, 0.9, 241), 1.0 - np.logspace(-1, -16, 481), list(pot.kinks)]
        if pot.name == "obstacle":
            ys.append([1.0])
        y = np.unique(np.concatenate([np.asarray(v, dtype=float) for v in ys]))
        f = lambda t: 1.0 / np.sqrt(2.0 * max(float(pot(t)), 1e-300))
        with warnings.catch_warnings():
            # intervals next to the well are at round-off level; accuracy there is irrelevant
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            dz = [integrate.quad(f, lo, hi, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
                  for lo, hi in zip(y[:-1], y[1:])]
            if pot(1.0) == 0.0 and y[-1] == 1.0:
                # a well reached at finite z: 1/sqrt(2 psi) ~ (1 - t)^(-1/2),
                # integrated with the singular factor as a quadrature weight
                lo = y[-2]
                g = lambda t: np.sqrt(max(1.0 - t, 0.0) / (2.0 * max(float(pot(t)), 1e-300)))
                dz[-1] = integrate.quad(lambda t: g(min(t, np.nextafter(1.0, 0.0))), lo, 1.0,
                                        weight="alg", wvar=(0.0, -0.5))[0]
        z = np.concatenate([[0.0], np.cumsum(dz)])
        keep = np.concatenate([[True], np.diff(z) > 0])
        self.y, self.z = y[keep], z[keep]
        slope = np.sqrt(2.0 * np.maximum(pot(self.y), 0.0))
        self.spline = CubicHermiteSpline(self.z, self.y, slope)

    def z_of(self, y: float) -> float:
        return float(np.interp(y, self.y, self.z))

    def __call__(self, zs):
        zs = np.asarray(zs, dtype=float)
        zc = np.clip(zs, 0.0, self.z[-1])
        # bound by the node values of the containing interval: the cubic may
        # overshoot by round-off where the table saturates at the well
        i = np.clip(np.searchsorted(self.z, zc, side="right") - 1, 0, len(self.z) - 2)
        out = np.clip(self.spline(zc), self.y[i], self.y[i + 1])
        # where the nodes differ by a few ulps the cubic is pure noise; the
        # linear interpolant is monotone in floating point
        y0, y1 = self.y[i], self.y[i + 1]
        flat = y1 - y0 < 1e-12
        t = (zc - self.z[i]) / (self.z[i + 1] - self.z[i])
        out = np.where(flat, y0 + (y1 - y0) * t, out)
        return np.where(zs >= self.z[-1], self.y[-1], out)


def _evaluate_profile(pot: Potential, z):
    """``Phi`` and ``Phi'`` at arbitrary points, using oddness of the profile."""
    z = np.asarray(z, dtype=float)
    phi = np.sign(z) * _table(pot)(np.abs(z))
    dphi = np.sqrt(2.0 * np.maximum(pot(np.clip(phi, -1, 1)), 0.0))
    return phi, dphi


_TABLES: dict = {}


def _table(pot: Potential) -> _ProfileTable:
    if pot not in _TABLES:
        _TABLES[pot] = _ProfileTable(pot)
    return _TABLES[pot]


def profile_ode_solve(potential, z_max: float | None = None,
                      n_points: int = 401) -> ProfileSolution:
    """Monotone profile on a uniform grid symmetric about 0.

    Beyond the point where the profile reaches a well (obstacle case) it is
    clamped to +-1.
    """
    pot = as_potential(potential)
    if n_points < 3:
        raise ValueError("need at least three grid points")
    sample = np.linspace(-0.999, 0.999, 41)
    if np.any(pot(sample) <= 0):
        raise ValueError("potential must be positive on (-1, 1)")
    z_max = pot.z_max if z_max is None else z_max
    z = np.linspace(-z_max, z_max, n_points)
    phi, dphi = _evaluate_profile(pot, z)
    return ProfileSolution(z, phi, dphi)


def equipartition_residual(profile: ProfileSolution, potential) -> float:
    """``max |Phi'^2 / 2 - psi(Phi)|`` over the grid."""
    pot = as_potential(potential)
    with np.errstate(invalid="ignore"):
        r = np.abs(0.5 * profile.dphi ** 2 - pot(profile.phi))
    return float(np.max(np.where(np.isnan(r), np.inf, r)))


def _z_panels(pot: Potential, n_nodes: int = 20):
    """Gauss-Legendre nodes/weights on [0, z_max], graded near the wells."""
    zm = pot.z_max
    if pot.name == "relaxed":
        zk = _table(pot).z_of(pot.kinks[0])
        ell = pot.decay_length
        edges = np.concatenate([np.linspace(0.0, zk, 17),
                                zk + ell * np.geomspace(1e-2, 40.0, 24)])
        edges = np.unique(np.clip(np.append(edges, zm), 0.0, zm))
    elif pot.name == "quartic":
        edges = np.concatenate([np.linspace(0.0, 10.0, 41), np.linspace(10.0, zm, 16)[1:]])
    else:
        edges = np.linspace(0.0, zm, 17)
    x, w = roots_legendre(n_nodes)
    nodes = (0.5 * (edges[1:] - edges[:-1])[:, None] * (x + 1) + edges[:-1, None]).ravel()
    weights = (0.5 * (edges[1:] - edges[:-1])[:, None] * w).ravel()
    return nodes, weights


def c0_identities(potential) -> tuple[float, float]:
    """``(1/2 int sqrt(2 psi) ds, 1/2 int Phi'^2 dz)``."""
    pot = as_potential(potential)
    nodes, weights = _z_panels(pot)
    _, dphi = _evaluate_profile(pot, nodes)
    # even integrand: twice the half line
    c0_profile = float(np.sum(weights * dphi ** 2))
    return pot.c0, c0_profile


def modulation_leading(pot: Potential, phi, choice: ModulationChoice):
    if choice.variant is Variant.HALF:
        return np.full_like(phi, 0.5)
    return np.sqrt(np.maximum(pot(phi), 0.0)) / (np.sqrt(2.0) * pot.c0)


def q0_plus_check(potential, choice: ModulationChoice = ModulationChoice()) -> float:
    """``int M0(Phi) Phi' dz`` over the real line (equals 1 in the limit)."""
    pot = as_potential(potential)
    nodes, weights = _z_panels(pot)
    phi, dphi = _evaluate_profile(pot, nodes)
    return float(2.0 * np.sum(weights * modulation_leading(pot, phi, choice) * dphi))


def certification_report(potentials=("obstacle", "quartic", "relaxed"),
                         n_points: int = 201) -> list[dict]:
    """All identities for the given potentials, one dict per potential."""
    rows = []
    for name in potentials:
        pot = as_potential(name)
        prof = profile_ode_solve(pot, n_points=n_points)
        c0d, c0p = c0_identities(pot)
        rows.append(dict(
            potential=pot.name,
            c0_def=c0d, c0_profile=c0p,
            equipartition=equipartition_residual(prof, pot),
            q0_half=q0_plus_check(pot, ModulationChoice(Variant.HALF)),
            q0_sqrt=q0_plus_check(pot, ModulationChoice(Variant.SQRT_PSI)),
        ))
    return rows


def format_report(rows) -> str:
    out = ["potential,c0_def,c0_profile,equipartition,q0_half,q0_sqrt"]
    for r in rows:
        out.append(f"{r['potential']},c0_def={r['c0_def']:.6f},c0_profile={r['c0_profile']:.6f},"
                   f"equipartition={r['equipartition']:.3e},q0_half={r['q0_half']:.9f},"
                   f"q0_sqrt={r['q0_sqrt']:.9f}")
    return "\n".join(out) + "\n"
