"""
Test-Skript für Fahrermodell und LTI-Modell
Testet: ovm.py
"""
import sys
from pathlib import Path

import numpy as np

# Pfad zum src-Verzeichnis hinzufügen
sys.path.insert(0, str(Path(__file__).parent / "src"))

from core.fleet import EquilibriumState, FleetConfig, OvmParams, Topology
from core.ovm import (
    build_lti_model,
    equilibrium_spacing_inverse,
    nonlinear_error_step,
    ovm_acceleration,
    ovm_desired_velocity,
    ovm_desired_velocity_derivative,
    simulate_lti,
    step_lti,
)

DT = 0.05


def test_desired_velocity():
    """Testet die Wunschgeschwindigkeit"""
    print("\n" + "=" * 80)
    print("TEST: Wunschgeschwindigkeit")
    print("=" * 80)

    p = OvmParams.straight_road()

    print("\n1. Test Stützstellen:")
    cases = [(0.3, 0.0), (0.5, 0.0), (0.8, 0.3), (1.1, 0.6), (2.0, 0.6)]
    for s, expected in cases:
        v = ovm_desired_velocity(s, p)
        print(f"   V({s}) = {v:.6f} (erwartet {expected})")
        assert abs(v - expected) < 1e-12

    print("\n2. Test Monotonie und Wertebereich:")
    s = np.linspace(0.0, 2.0, 401)
    v = ovm_desired_velocity(s, p)
    assert np.all(np.diff(v) >= -1e-15)
    assert v.min() >= 0.0 and v.max() <= p.v_max
    print("   [OK] monoton steigend in [0, v_max]")

    print("\n3. Test Ableitung gegen Differenzenquotient:")
    s = np.linspace(0.55, 1.05, 11)
    h = 1e-6
    numeric = (ovm_desired_velocity(s + h, p) - ovm_desired_velocity(s - h, p)) / (2 * h)
    assert np.allclose(ovm_desired_velocity_derivative(s, p), numeric, atol=1e-7)
    assert ovm_desired_velocity_derivative(0.4, p) == 0.0
    assert ovm_desired_velocity_derivative(1.5, p) == 0.0
    print("   [OK]")

    print("\n4. Test Beschleunigung im Gleichgewicht:")
    assert abs(ovm_acceleration(0.8, 0.3, 0.3, p)) < 1e-12
    a = ovm_acceleration(0.8, 0.2, 0.3, p)
    assert abs(a - (1.2 * 0.1 + 1.8 * 0.1)) < 1e-12
    print(f"   a(0.8, 0.2, 0.3) = {a:.4f}")


def test_inverse_spacing():
    """Testet die Umkehrfunktion"""
    print("\n" + "=" * 80)
    print("TEST: Gleichgewichtsabstand")
    print("=" * 80)

    p = OvmParams.straight_road()

    print("\n1. Test Beispielwerte:")
    assert abs(equilibrium_spacing_inverse(0.3, p) - 0.8) < 1e-12
    assert abs(equilibrium_spacing_inverse(0.0, p) - p.s_st) < 1e-12
    assert abs(equilibrium_spacing_inverse(0.6, p) - p.s_go) < 1e-12
    print("   s*(0.3)=0.8, s*(0)=s_st, s*(v_max)=s_go")

    print("\n2. Test Round-Trip V(s*(v)) = v:")
    for v in np.linspace(0.0, p.v_max, 61):
        assert abs(ovm_desired_velocity(equilibrium_spacing_inverse(v, p), p) - v) < 1e-10
    for s in np.linspace(0.51, 1.09, 30):
        assert abs(equilibrium_spacing_inverse(ovm_desired_velocity(s, p), p) - s) < 1e-8
    print("   [OK] beide Richtungen")

    print("\n3. Test außerhalb des Definitionsbereichs:")
    for v in (-0.01, 0.61):
        try:
            equilibrium_spacing_inverse(v, p)
            raise AssertionError(f"ValueError erwartet für v*={v}")
        except ValueError as e:
            print(f"   [OK] {e}")


def test_lti_structure():
    """Testet die Struktur der LTI-Matrizen"""
    print("\n" + "=" * 80)
    print("TEST: LTI-Modell")
    print("=" * 80)

    p = OvmParams.straight_road()
    fleet = FleetConfig(n=3, cav_set=(2,))
    eq = EquilibriumState(0.3, 0.8)
    model = build_lti_model(fleet, p, eq, DT)

    print("\n1. Test Dimensionen:")
    assert model.A.shape == (6, 6) and model.B.shape == (6, 1)
    assert model.C.shape == (4, 6) and model.H.shape == (6, 1)
    assert model.n == 3 and model.m == 1
    print(f"   A{model.A.shape} B{model.B.shape} C{model.C.shape} H{model.H.shape}")

    print("\n2. Test Einträge:")
    gain = p.alpha * ovm_desired_velocity_derivative(0.8, p)
    # Fahrzeug 1 (HDV) hängt über eps am Führungsfahrzeug
    assert abs(model.A[0, 0] - (1 - DT * (p.alpha + p.beta))) < 1e-12
    assert abs(model.A[0, 1] - DT * gain) < 1e-12
    assert abs(model.H[0, 0] - DT * p.beta) < 1e-12
    assert abs(model.H[1, 0] - DT) < 1e-12
    # Fahrzeug 2 ist CAV
    assert model.B[2, 0] == DT and np.allclose(model.A[2], np.eye(6)[2])
    assert abs(model.A[3, 0] - DT) < 1e-12 and abs(model.A[3, 2] + DT) < 1e-12
    # Ausgang: Geschwindigkeiten und CAV-Abstand
    assert np.allclose(model.C[:3, [0, 2, 4]], np.eye(3))
    assert model.C[3, 3] == 1.0 and model.C[3].sum() == 1.0
    print("   [OK]")

    print("\n3. Test Ring-Fenster:")
    ring = FleetConfig(n=9, cav_set=(5,), topology=Topology.RING, controlled_subset=(3, 7))
    ring_model = build_lti_model(ring, OvmParams.ring_road(), EquilibriumState(0.25, 0.77), DT)
    assert ring_model.n == 4 and ring_model.m == 1
    assert ring_model.B[2, 0] == DT
    print(f"   n={ring_model.n}, m={ring_model.m}")

    print("\n4. Test Randwerte abgelehnt:")
    for v in (0.0, p.v_max):
        try:
            build_lti_model(fleet, p, EquilibriumState(v, 0.8), DT)
            raise AssertionError("ValueError erwartet")
        except ValueError as e:
            print(f"   [OK] {e}")


def test_lti_simulation():
    """Testet step_lti, simulate_lti und die Linearisierung"""
    print("\n" + "=" * 80)
    print("TEST: LTI-Simulation und Linearisierung")
    print("=" * 80)

    p = OvmParams.straight_road()
    fleet = FleetConfig(n=3, cav_set=(2,))
    eq = EquilibriumState(0.25, equilibrium_spacing_inverse(0.25, p))
    model = build_lti_model(fleet, p, eq, DT)
    rng = np.random.default_rng(7)

    print("\n1. Test Gleichgewicht bleibt erhalten:")
    x_next, y = step_lti(model, np.zeros(6), [0.0], 0.0)
    assert np.allclose(x_next, 0) and np.allclose(y, 0)
    print("   [OK]")

    print("\n2. Test simulate_lti = wiederholtes step_lti:")
    x0 = rng.normal(0, 0.01, 6)
    u = rng.uniform(-0.1, 0.1, (25, 1))
    eps = rng.uniform(-0.05, 0.05, 25)
    xs, ys = simulate_lti(model, x0, u, eps)
    x = x0
    for k in range(25):
        x, y = step_lti(model, x, u[k], eps[k])
        assert np.allclose(ys[k], y) and np.allclose(xs[k + 1], x)
    assert xs.shape == (26, 6) and ys.shape == (25, 4)
    print("   [OK] 25 Schritte identisch")

    print("\n3. Test Linearisierungsfehler wächst quadratisch:")
    direction = rng.normal(0, 1, 6)
    u0, e0 = np.array([0.02]), 0.01
    errors = []
    for delta in (1e-3, 1e-4):
        x = delta * direction
        lin, _ = step_lti(model, x, delta * u0, delta * e0)
        nonlin = nonlinear_error_step(fleet, p, eq, DT, x, delta * u0, delta * e0)
        errors.append(np.max(np.abs(lin - nonlin)))
        print(f"   delta={delta:.0e}: Fehler={errors[-1]:.3e}")
    assert errors[1] < 1e-8
    assert errors[0] / errors[1] > 50

    print("\n4. Test Dimensionsfehler:")
    for args in ((np.zeros(5), [0.0], 0.0), (np.zeros(6), [0.0, 0.0], 0.0)):
        try:
            step_lti(model, *args)
            raise AssertionError("ValueError erwartet")
        except ValueError as e:
            print(f"   [OK] {e}")


def main():
    """Hauptfunktion - führt alle Tests durch"""
    print("\n" + "=" * 80)
    print(" DeepLccLab - Fahrermodell und LTI-Modell")
    print("=" * 80)

    try:
        test_desired_velocity()
        test_inverse_spacing()
        test_lti_structure()
        test_lti_simulation()

        print("\n" + "=" * 80)
        print(" [OK] Alle Tests erfolgreich abgeschlossen!")
        print("=" * 80 + "\n")

    except Exception as e:
        print(f"\n[FEHLER] Fehler bei Tests: {e}")
        import traceback
        traceback.print_exc()
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
