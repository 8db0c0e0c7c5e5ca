"""
Test-Skript für den Mischverkehrs-Simulator
Testet: simulator.py (Störprofil, Imperfektionen, gerade Strecke, Ring, Datensammlung)
"""
import sys
from pathlib import Path

import numpy as np

# Pfad zum src-Verzeichnis hinzufügen
sys.path.insert(0, str(Path(__file__).parent / "src"))

from core.controller import DeepLccConfig
from core.fleet import FleetConfig, OvmParams, Topology
from core.metrics import wave_amplitude
from core.ovm import equilibrium_spacing_inverse, ovm_acceleration, ovm_desired_velocity
from core.simulator import (
    CollectionConfig,
    DisturbanceMode,
    DisturbanceSchedule,
    ImperfectionConfig,
    MeasurementPipeline,
    MixedTrafficSimulator,
    RingPhasePlan,
    RingTrack,
    apply_actuator_lag,
    collect_offline_data,
    command_velocity,
    head_velocity,
    simulate_ring,
    simulate_straight,
)

DT = 0.05


def _ring_fleet(cav_set=()) -> FleetConfig:
    return FleetConfig(n=9, cav_set=cav_set, topology=Topology.RING, controlled_subset=(3, 7),
                       vehicle_length=0.0)


def test_command_and_lag():
    """Testet Geschwindigkeitsbefehl und Aktor-Trägheit"""
    print("\n" + "=" * 80)
    print("TEST: Befehl und Aktor-Trägheit")
    print("=" * 80)

    print("\n1. Test command_velocity:")
    assert abs(command_velocity(0.3, 0.2, 0.05) - 0.31) < 1e-12
    assert np.allclose(command_velocity(np.array([0.1, 0.2]), np.array([-0.2, 0.4]), 0.05), [0.09, 0.22])
    try:
        command_velocity(0.3, 0.1, 0.0)
        raise AssertionError("ValueError erwartet")
    except ValueError as e:
        print(f"   [OK] {e}")

    print("\n2. Test tau = 0 liefert exakt den Befehl:")
    assert apply_actuator_lag(0.37, 0.1, 0.0, DT) == 0.37
    print("   [OK]")

    print("\n3. Test Sprungantwort erster Ordnung:")
    tau, target, v = 0.12, 0.3, 0.0
    r = tau / (tau + DT)
    for k in range(1, 41):
        v = apply_actuator_lag(target, v, tau, DT)
        assert abs(v - target * (1 - r ** k)) < 1e-12
    print(f"   v nach 2 s: {v:.6f} (Ziel {target})")
    try:
        apply_actuator_lag(0.3, 0.0, -0.1, DT)
        raise AssertionError("ValueError erwartet")
    except ValueError as e:
        print(f"   [OK] {e}")


def test_disturbance_schedule():
    """Testet das Geschwindigkeitsprofil des Führungsfahrzeugs"""
    print("\n" + "=" * 80)
    print("TEST: Störprofil")
    print("=" * 80)

    sched = DisturbanceSchedule()
    seg = sched.segment_end - sched.segment_start

    print("\n1. Test außerhalb der Störung:")
    for d in (0.0, 3.0, 8.75, 12.0, 17.4):
        assert head_velocity(d, sched) == sched.v_c
    print(f"   v = {sched.v_c} außerhalb [{sched.segment_start}, {sched.segment_end})")

    print("\n2. Test Sinus im zweiten Segment:")
    assert abs(head_velocity(sched.segment_start + seg / 8, sched) - (0.3 - 0.13)) < 1e-12
    assert abs(head_velocity(sched.segment_start + 3 * seg / 8, sched) - (0.3 + 0.13)) < 1e-12
    print(f"   min {0.3 - 0.13:.2f}, max {0.3 + 0.13:.2f}")

    print("\n3. Test Periodizität über Runden:")
    for d in np.linspace(0, 17.4, 25):
        assert abs(head_velocity(d, sched) - head_velocity(d + 2 * sched.lap_length, sched)) < 1e-9

    print("\n4. Test Konstant und Anfahren:")
    const = DisturbanceSchedule(mode=DisturbanceMode.CONSTANT)
    assert head_velocity(sched.segment_start + seg / 8, const) == const.v_c
    idle = DisturbanceSchedule(mode=DisturbanceMode.IDLE_START, ramp_time=5.0)
    assert head_velocity(0.0, idle, t=0.0) == 0.0
    assert abs(head_velocity(0.0, idle, t=2.5) - 0.15) < 1e-12
    print("   [OK]")

    print("\n5. Test Round-Trip:")
    assert DisturbanceSchedule.from_dict(sched.to_dict()) == sched


def test_imperfection_config():
    """Testet Rechenverzögerung und Serialisierung"""
    print("\n" + "=" * 80)
    print("TEST: Imperfektionen")
    print("=" * 80)

    imp = ImperfectionConfig()

    print("\n1. Test Rechenverzögerung:")
    assert imp.computation_delay(0) == 0.0
    assert imp.computation_delay(1) == 0.29280
    assert imp.computation_delay(2) == 0.40569
    assert abs(imp.computation_delay(3) - (0.40569 + 0.11289)) < 1e-12
    assert imp.computation_delay_steps(1, DT) == 6
    assert imp.computation_delay_steps(2, DT) == 9
    assert ImperfectionConfig.disabled().computation_delay_steps(2, DT) == 0
    print(f"   m=1: {imp.computation_delay_steps(1, DT)} Schritte, m=2: {imp.computation_delay_steps(2, DT)}")

    print("\n2. Test Round-Trip:")
    assert ImperfectionConfig.from_dict(imp.to_dict()) == imp
    assert ImperfectionConfig.from_dict({"tau": 0.2}).tau == 0.2

    print("\n3. Test ungültige Werte:")
    for kwargs in (dict(tau=-0.1), dict(velocity_noise_std=-1.0), dict(computation_delays={1: -0.1})):
        try:
            ImperfectionConfig(**kwargs)
            raise AssertionError(f"ValueError erwartet für {kwargs}")
        except ValueError as e:
            print(f"   [OK] {e}")


def test_measurement_noise_statistics():
    """Empirische Momente des Messrauschens"""
    print("\n" + "=" * 80)
    print("TEST: Rauschstatistik")
    print("=" * 80)

    imp = ImperfectionConfig()
    pipeline = MeasurementPipeline(imp, np.random.default_rng(0), DT, 1)
    vel = pipeline.sample_velocity_noise(100_000)
    sp = pipeline.sample_spacing_noise(100_000)
    print(f"   Geschwindigkeit: Mittel {vel.mean():.5f}, Std {vel.std():.5f}")
    print(f"   Abstand:         Mittel {sp.mean():.5f}, Std {sp.std():.5f}")
    assert abs(vel.mean() - imp.velocity_noise_mean) < 1e-4
    assert abs(vel.std() - imp.velocity_noise_std) / imp.velocity_noise_std < 0.02
    assert abs(sp.mean()) < 1e-4
    assert abs(sp.std() - imp.spacing_noise_std) / imp.spacing_noise_std < 0.02


def test_measurement_delay():
    """Lokalisierungsverzögerung auf dem Abstand, Funkverzögerung auf der Geschwindigkeit"""
    print("\n" + "=" * 80)
    print("TEST: Messverzögerung")
    print("=" * 80)

    imp = ImperfectionConfig(noise_enabled=False)
    pipeline = MeasurementPipeline(imp, np.random.default_rng(1), DT, 3)
    for k in range(10):
        true_v = np.full(3, 0.1 * k)
        true_s = np.full(3, 1.0 + k)
        v_meas, s_meas = pipeline.measure(true_v, true_s)
        # ~50 ms entsprechen einem Schritt, ~2 ms keinem
        assert np.allclose(v_meas, true_v)
        assert np.allclose(s_meas, true_s if k == 0 else true_s - 1.0)
    print("   [OK] Abstand um 1 Schritt verzögert, Geschwindigkeit unverzögert")

    print("\n2. Test ohne Verzögerung und Rauschen:")
    ideal = MeasurementPipeline(ImperfectionConfig.disabled(), np.random.default_rng(1), DT, 3)
    v, s = ideal.measure(np.ones(3), np.full(3, 2.0))
    assert np.array_equal(v, np.ones(3)) and np.array_equal(s, np.full(3, 2.0))
    print("   [OK]")


def test_pure_ovm_matches_reference_loop():
    """S = {} ohne Imperfektionen entspricht exakt der OVM-Integration"""
    print("\n" + "=" * 80)
    print("TEST: Reine OVM-Simulation")
    print("=" * 80)

    p = OvmParams.straight_road()
    fleet = FleetConfig(n=5)
    sched = DisturbanceSchedule()
    log = simulate_straight(fleet, p, DeepLccConfig(), sched, ImperfectionConfig.disabled(),
                            duration=20.0, seed=0)
    assert len(log) == 400 and not log.failed

    L = fleet.vehicle_length
    s0 = equilibrium_spacing_inverse(sched.v_c, p)
    pos = -np.arange(6) * (s0 + L)
    vel = np.full(6, sched.v_c)
    vel[0] = head_velocity(0.0, sched, 0.0)
    for k in range(400):
        assert np.allclose(log.velocities()[k], vel, atol=1e-12, rtol=0), f"Schritt {k}"
        assert np.allclose(log.positions()[k], pos, atol=1e-12, rtol=0), f"Schritt {k}"
        s = pos[:-1] - pos[1:] - L
        acc = ovm_acceleration(s, vel[1:], vel[:-1], p)
        v_new = vel.copy()
        v_new[1:] = np.maximum(vel[1:] + acc * DT, 0.0)
        pos = pos + vel * DT
        v_new[0] = head_velocity(pos[0], sched, (k + 1) * DT)
        vel = v_new
    print(f"   [OK] 400 Schritte identisch, min. Geschwindigkeit {log.velocities().min():.4f}")


def test_straight_determinism():
    """Gleicher Seed liefert identische Logs"""
    print("\n" + "=" * 80)
    print("TEST: Determinismus")
    print("=" * 80)

    p = OvmParams.straight_road()
    fleet = FleetConfig(n=5)
    args = (fleet, p, DeepLccConfig(), DisturbanceSchedule(), ImperfectionConfig())
    a = simulate_straight(*args, duration=10.0, seed=5)
    b = simulate_straight(*args, duration=10.0, seed=5)
    c = simulate_straight(*args, duration=10.0, seed=6)
    assert np.array_equal(a.velocities(), b.velocities())
    assert np.array_equal(a.cmd_velocities(), b.cmd_velocities())
    assert not np.array_equal(a.velocities(), c.velocities())
    assert (a.velocities() >= 0).all()
    print("   [OK] Seed 5 zweimal identisch, Seed 6 verschieden")

    print("\n2. Test falsche Topologie und fehlende Blöcke:")
    for call in (
        lambda: simulate_straight(_ring_fleet(), p, DeepLccConfig(), DisturbanceSchedule(),
                                  ImperfectionConfig(), duration=1.0),
        lambda: simulate_straight(FleetConfig(n=5, cav_set=(2,)), p, DeepLccConfig(), DisturbanceSchedule(),
                                  ImperfectionConfig(), duration=1.0),
    ):
        try:
            call()
            raise AssertionError("ValueError erwartet")
        except ValueError as e:
            print(f"   [OK] {e}")


def test_ring_conservation():
    """Summe der Abstände bleibt gleich dem Umfang, Geschwindigkeiten nichtnegativ"""
    print("\n" + "=" * 80)
    print("TEST: Ringstraße")
    print("=" * 80)

    fleet = _ring_fleet()
    track = RingTrack()
    plan = RingPhasePlan(t1=1.0, t2=2.0, t3=3.0, t_end=4.0)
    log = simulate_ring(fleet, OvmParams.ring_road(), DeepLccConfig(), plan, ImperfectionConfig(),
                        track=track, seed=3)
    assert len(log) == 80 and not log.failed

    print("\n1. Test Abstandssumme:")
    sums = log.spacings().sum(axis=1)
    assert np.allclose(sums, track.circumference - fleet.n * fleet.vehicle_length, atol=1e-9)
    print(f"   Summe = {sums[0]:.6f} m in allen {len(log)} Schritten")

    print("\n2. Test Geschwindigkeiten:")
    assert (log.velocities() >= 0).all()
    assert np.allclose(log.velocities()[0], track.start_velocity)

    print("\n3. Test Phasen:")
    assert log.phases[0] == "a" and log.phases[-1] == "d"
    assert [log.phases[k] for k in (0, 20, 40, 60)] == ["a", "b", "c", "d"]
    df = log.to_dataframe()
    assert set(df["phase"]) == {"a", "b", "c", "d"}
    assert df["pos"].between(0, track.circumference).all()
    print("   [OK] a, b, c, d")

    print("\n4. Test Phasenplan:")
    full = RingPhasePlan()
    assert (full.t1, full.t2, full.t3, full.t_end) == (20.0, 68.85, 139.05, 200.0)
    assert full.control_active(70.0) and not full.control_active(68.0) and not full.control_active(139.05)
    try:
        RingPhasePlan(t1=30.0, t2=20.0)
        raise AssertionError("ValueError erwartet")
    except ValueError as e:
        print(f"   [OK] {e}")


def test_collision_detection():
    """Kollision wird mit Fahrzeug und Abstand gemeldet"""
    print("\n" + "=" * 80)
    print("TEST: Kollision")
    print("=" * 80)

    fleet = FleetConfig(n=2)
    sim = MixedTrafficSimulator(fleet, OvmParams(), ImperfectionConfig.disabled(), DT,
                                np.random.default_rng(0), positions=[2.0, 1.0, 0.9], velocities=[0.3] * 3,
                                head_profile=lambda pos, t, k: 0.3)
    reason = sim.collision()
    assert reason is not None and "Fahrzeug 2" in reason
    print(f"   {reason}")

    ok = MixedTrafficSimulator(fleet, OvmParams(), ImperfectionConfig.disabled(), DT,
                               np.random.default_rng(0), positions=[2.0, 1.0, 0.0], velocities=[0.3] * 3,
                               head_profile=lambda pos, t, k: 0.3)
    assert ok.collision() is None
    print("   [OK] ohne Überlappung keine Meldung")


def test_offline_collection():
    """Testet die Datensammlung"""
    print("\n" + "=" * 80)
    print("TEST: Datensammlung")
    print("=" * 80)

    p = OvmParams.straight_road()
    fleet = FleetConfig(n=5, cav_set=(2,))
    cfg = CollectionConfig()

    print("\n1. Test gerade Strecke ohne Imperfektionen:")
    data = collect_offline_data(fleet, p, cfg, "straight", seed=1, T=300,
                                imperfections=ImperfectionConfig.disabled())
    assert (data.T, data.n, data.m, data.cav_set) == (300, 5, 1, (2,))
    assert data.y_raw.shape == (300, 6)
    assert abs(data.equilibrium.v_star - 0.3) < 1e-12
    assert np.max(np.abs(data.eps)) <= cfg.delta_eps + 1e-12
    assert data.eps[0] == 0.0
    assert np.allclose(data.y_raw[0], [0.3] * 5 + [equilibrium_spacing_inverse(0.3, p)])
    print(f"   u in [{data.u.min():.3f}, {data.u.max():.3f}], eps in [{data.eps.min():.3f}, {data.eps.max():.3f}]")

    print("\n2. Test Determinismus:")
    again = collect_offline_data(fleet, p, cfg, "straight", seed=1, T=300,
                                 imperfections=ImperfectionConfig.disabled())
    assert np.array_equal(data.u, again.u) and np.array_equal(data.y_raw, again.y_raw)
    print("   [OK]")

    print("\n3. Test Ring mit Regelungsfenster:")
    ring = collect_offline_data(_ring_fleet((5,)), OvmParams.ring_road(), cfg, "ring", seed=2, T=300)
    ring_gap = RingTrack().uniform_gap(_ring_fleet((5,)))
    assert (ring.n, ring.m) == (4, 1) and ring.y_raw.shape == (300, 5)
    assert cfg.v_r is None
    assert abs(ring.equilibrium.v_star - ovm_desired_velocity(ring_gap, OvmParams.ring_road())) < 1e-12
    assert abs(ring.equilibrium.s_star - ring_gap) < 1e-9
    print(f"   n={ring.n}, m={ring.m}, v*={ring.equilibrium.v_star:.4f}")

    print("\n4. Test Fehler:")
    for call in (
        lambda: collect_offline_data(FleetConfig(n=5), p, cfg, "straight", seed=1, T=10),
        lambda: collect_offline_data(fleet, p, cfg, "zickzack", seed=1, T=10),
        lambda: collect_offline_data(fleet, p, cfg, "ring", seed=1, T=10),
    ):
        try:
            call()
            raise AssertionError("ValueError erwartet")
        except ValueError as e:
            print(f"   [OK] {e}")


def test_ring_collection_head_velocity():
    """Testet die mittlere Kopfgeschwindigkeit der Ring-Sammlung (T=1500)"""
    print("\n" + "=" * 80)
    print("TEST: Ring-Sammlung um das Gleichgewicht")
    print("=" * 80)

    p = OvmParams.ring_road()
    fleet = _ring_fleet((5,))
    cfg = CollectionConfig()

    print("\n1. Test 6.77 m Ring, Referenz aus dem gleichmäßigen Abstand:")
    for seed in (0, 1, 2):
        data = collect_offline_data(fleet, p, cfg, "ring", seed=seed)
        assert data.T == 1500
        mean_eps = float(np.mean(data.eps))
        assert abs(mean_eps) <= 0.02, mean_eps
        print(f"   Seed {seed}: v*={data.equilibrium.v_star:.4f}, mittleres eps {mean_eps:+.4f}")

    print("\n2. Test Ring für v_r = 0.25 bemessen:")
    sized = RingTrack(circumference=fleet.n * equilibrium_spacing_inverse(0.25, p))
    data = collect_offline_data(fleet, p, CollectionConfig(v_r=0.25), "ring", seed=0, track=sized)
    mean_head = float(np.mean(data.eps)) + 0.25
    assert data.equilibrium.v_star == 0.25
    assert abs(mean_head - 0.25) <= 0.02, mean_head
    print(f"   Umfang {sized.circumference:.3f} m, mittlere Kopfgeschwindigkeit {mean_head:.4f}")

    print("\n3. Test ungültiges v_r:")
    try:
        CollectionConfig(v_r=0.0)
        raise AssertionError("ValueError erwartet")
    except ValueError as e:
        print(f"   [OK] {e}")


def test_straight_wave_amplification():
    """Testet die Verstärkung der Störung stromaufwärts ohne CAV"""
    print("\n" + "=" * 80)
    print("TEST: Wellenverstärkung auf der geraden Strecke")
    print("=" * 80)

    p = OvmParams.straight_road()
    fleet = FleetConfig(n=5)

    print("\n1. Test mit Verzögerung und Aktor-Trägheit:")
    for seed in (1, 2, 3):
        log = simulate_straight(fleet, p, DeepLccConfig(), DisturbanceSchedule(), ImperfectionConfig(),
                                duration=60.0, seed=seed)
        amp = [wave_amplitude(log, i) for i in range(6)]
        assert not log.failed
        assert amp[5] > amp[1], amp
        print(f"   Seed {seed}: " + ", ".join(f"{a:.4f}" for a in amp))

    print("\n2. Test ohne Imperfektionen (gedämpft):")
    log = simulate_straight(fleet, p, DeepLccConfig(), DisturbanceSchedule(), ImperfectionConfig.disabled(),
                            duration=60.0, seed=1)
    amp = [wave_amplitude(log, i) for i in range(6)]
    assert amp[5] < amp[1], amp
    print("   " + ", ".join(f"{a:.4f}" for a in amp))


def main():
    """Hauptfunktion - führt alle Tests durch"""
    print("\n" + "=" * 80)
    print(" DeepLccLab - Simulator")
    print("=" * 80)

    try:
        test_command_and_lag()
        test_disturbance_schedule()
        test_imperfection_config()
        test_measurement_noise_statistics()
        test_measurement_delay()
        test_pure_ovm_matches_reference_loop()
        test_straight_determinism()
        test_ring_conservation()
        test_collision_detection()
        test_offline_collection()
        test_ring_collection_head_velocity()
        test_straight_wave_amplification()

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
