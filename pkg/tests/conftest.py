import numpy as np
import pytest

from liftbv.liftcore import LiftConfig, lift_pa_field
from liftbv.scaffold import (audit_scaffold, build_analytic_scaffold,
                             build_generic_scaffold)
from liftbv.synth import make_pa_map


@pytest.fixture(scope="session")
def circle_analytic():
    sc = build_analytic_scaffold("circle")
    audit_scaffold(sc, samples=2000, seed=11, segments=300)
    return sc


@pytest.fixture(scope="session")
def circle_generic():
    sc = build_generic_scaffold("circle", 8, 2.0, 0.25)
    audit_scaffold(sc, samples=3000, seed=11, segments=200)
    return sc


@pytest.fixture(scope="session")
def torus_analytic():
    sc = build_analytic_scaffold("clifford_torus")
    audit_scaffold(sc, samples=800, seed=11, segments=100)
    return sc


@pytest.fixture(scope="session")
def q8_analytic():
    sc = build_analytic_scaffold("so3_mod_v4")
    audit_scaffold(sc, samples=500, seed=11, segments=60)
    return sc


@pytest.fixture(scope="session")
def so3_analytic():
    sc = build_analytic_scaffold("so3")
    audit_scaffold(sc, samples=500, seed=11, segments=60)
    return sc


@pytest.fixture(scope="session")
def vortex32_lift(circle_analytic):
    u = make_pa_map("vortex", 32)
    return u, lift_pa_field(u, circle_analytic, cfg=LiftConfig(trials=8, seed=2))


@pytest.fixture(scope="session")
def smooth32_lift(circle_analytic):
    u = make_pa_map("smooth", 32)
    return u, lift_pa_field(u, circle_analytic, cfg=LiftConfig(trials=8, seed=3))


@pytest.fixture(scope="session")
def q8_lift32(q8_analytic):
    u = make_pa_map("q8_two_defect", 32)
    return u, lift_pa_field(u, q8_analytic, cfg=LiftConfig(trials=16, seed=5))


@pytest.fixture(scope="session")
def torus16_lift(torus_analytic):
    u = make_pa_map("torus_smooth", 16)
    return u, lift_pa_field(u, torus_analytic, cfg=LiftConfig(trials=8, seed=7))


@pytest.fixture(scope="session")
def constant16_lift(circle_analytic):
    u = make_pa_map("constant", 16)
    return u, lift_pa_field(u, circle_analytic, cfg=LiftConfig(trials=4, seed=1))


def q8_loop(centers, base=np.array([0.0, -0.8]), r=0.2, n=64):
    """Concatenated counterclockwise loops around the given centers."""
    pts = [base]
    for c in centers:
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        ring = np.asarray(c) + r * np.stack([np.cos(th), np.sin(th)], axis=1)
        k0 = int(np.argmin(np.linalg.norm(ring - base, axis=1)))
        ring = np.vstack([ring[k0:], ring[:k0 + 1]])
        pts.append(ring[0])
        pts.extend(ring)
        pts.append(base)
    return np.array(pts)


Q8_DEFECT_A = (-0.351, 0.0132)
Q8_DEFECT_B = (0.349, 0.0117)
