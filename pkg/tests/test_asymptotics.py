import math

import numpy as np
import pytest

from pfopt.asymptotics import (Potential, ProfileSolution, c0_identities,
                               certification_report, equipartition_residual, format_report,
                               profile_ode_solve, q0_plus_check)
from pfopt.material import ModulationChoice, Variant

HALF = ModulationChoice(Variant.HALF)
SQRT = ModulationChoice(Variant.SQRT_PSI)


def test_obstacle_profile_is_sine():
    prof = profile_ode_solve("obstacle", n_points=801)
    assert np.max(np.abs(prof.phi - np.sin(prof.z))) <= 1e-8
    assert np.max(np.abs(prof.dphi - np.cos(prof.z))) <= 1e-7


def test_obstacle_profile_clamped_beyond_half_pi():
    prof = profile_ode_solve("obstacle", z_max=3.0, n_points=301)
    out = np.abs(prof.z) >= math.pi / 2
    assert np.all(np.abs(prof.phi[out]) == 1.0)


def test_quartic_profile_is_tanh():
    prof = profile_ode_solve("quartic", n_points=801)
    assert np.max(np.abs(prof.phi - np.tanh(prof.z / math.sqrt(2)))) <= 1e-8


def test_relaxed_profile_close_to_sine():
    prof = profile_ode_solve("relaxed", z_max=math.pi / 2 - 0.1, n_points=401)
    assert np.max(np.abs(prof.phi - np.sin(prof.z))) <= 1e-2


@pytest.mark.parametrize("name", ["obstacle", "quartic", "relaxed"])
def test_profile_invariants(name):
    prof = profile_ode_solve(name, n_points=401)
    assert np.all(np.diff(prof.phi) >= 0)
    assert abs(prof.phi[len(prof.z) // 2]) <= 1e-12
    assert prof.phi[0] == pytest.approx(-1.0, abs=1e-6)
    assert prof.phi[-1] == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(prof.z, -prof.z[::-1])


def test_equipartition_analytic_profiles():
    z = np.linspace(-math.pi / 2, math.pi / 2, 501)
    sine = ProfileSolution(z, np.sin(z), np.cos(z))
    assert equipartition_residual(sine, "obstacle") <= 1e-10
    z = np.linspace(-40, 40, 2001)
    t = np.tanh(z / math.sqrt(2))
    tanh = ProfileSolution(z, t, (1 - t ** 2) / math.sqrt(2))
    assert equipartition_residual(tanh, "quartic") <= 1e-10


@pytest.mark.parametrize("name", ["obstacle", "quartic", "relaxed"])
def test_equipartition_solver_and_negative_control(name):
    prof = profile_ode_solve(name, n_points=401)
    assert equipartition_residual(prof, name) <= 1e-10
    scaled = ProfileSolution(prof.z, np.clip(1.1 * prof.phi, -1, 1), 1.1 * prof.dphi)
    assert equipartition_residual(scaled, name) > 1e-2


def test_c0_identities():
    d, p = c0_identities("obstacle")
    assert d == pytest.approx(math.pi / 4, abs=1e-6) and p == pytest.approx(math.pi / 4, abs=1e-6)
    d, p = c0_identities("quartic")
    assert d == pytest.approx(math.sqrt(2) / 3, abs=1e-6) and p == pytest.approx(math.sqrt(2) / 3, abs=1e-6)
    d, p = c0_identities("relaxed")
    assert abs(d - p) <= 1e-6


@pytest.mark.parametrize("name", ["obstacle", "quartic", "relaxed"])
def test_q0_plus(name):
    assert q0_plus_check(name, HALF) == pytest.approx(1.0, abs=1e-8)
    assert q0_plus_check(name, SQRT) == pytest.approx(1.0, abs=1e-6)


def test_invalid_potential():
    with pytest.raises(ValueError):
        Potential("sextic")
    with pytest.raises(ValueError):
        profile_ode_solve("quartic", n_points=2)


def test_report_format():
    text = format_report(certification_report(["quartic"]))
    assert "c0_def=0.471405" in text
    assert text.splitlines()[0].startswith("potential,")


@pytest.mark.parametrize("s", [3.0, 1e2])
def test_c0_identities_relaxed_across_s(s):
    d, p = c0_identities(Potential("relaxed", s))
    assert abs(d - p) <= 1e-6
    prof = profile_ode_solve(Potential("relaxed", s), n_points=201)
    assert prof.phi[-1] == pytest.approx(1.0, abs=1e-6)
