import functools

import numpy as np
import pytest

from pfopt.material import InterpolationParams, Material, ModulationChoice, PotentialParams
from pfopt.mesh import generate_rect_mesh


@functools.lru_cache(maxsize=None)
def unit_square(h: float):
    return generate_rect_mesh(1.0, 1.0, h)


def make_material(eps=2e-3, alpha_bar=0.24, modulation="sqrt_psi", s=1e6, theta=0.99,
                  delta_eps=0.0):
    return Material(PotentialParams(s), InterpolationParams(alpha_bar, eps, theta),
                    ModulationChoice(modulation, delta_eps))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def coarse_fixture():
    """Circle in the channel on the coarse gradient-check mesh, state solved."""
    from pfopt.flow import solve_state
    from pfopt.optimizer import circle_phi

    mesh = generate_rect_mesh(1.7, 0.4, 0.02)
    mat = make_material()
    phi = circle_phi(mesh, (0.5, 0.2), 0.05, mat.eps)
    state = solve_state(mesh, phi, mat, 0.01)
    return mesh, phi, mat, state


def pytest_terminal_summary(terminalreporter):
    import sys

    mods = [m for name, m in list(sys.modules.items())
            if name.split(".")[-1] == "test_acceptance" and getattr(m, "RESULTS", None)]
    if not mods:
        return
    mod = mods[0]
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        label, status = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  ({label})")
