"""
Test-Skript für den DeeP-LCC Regler
Testet: controller.py (Konfiguration, Puffer, QP-Aufbau, Lösung, Rückfallebene)
"""
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

# Pfad zum src-Verzeichnis hinzufügen
sys.path.insert(0, str(Path(__file__).parent / "src"))

from core.controller import (
    DeepLccConfig,
    DeepLccController,
    PastBuffer,
    SolverError,
    assemble_problem,
    control_step,
    design_equilibrium_spacing,
    estimate_equilibrium_velocity,
    solve_qp,
    spacing_selector,
)
from core.fleet import EquilibriumState, FleetConfig, OvmParams, error_to_raw_output
from core.hankel import HankelDims, TrajectoryDataset, partition
from core.ovm import build_lti_model, equilibrium_spacing_inverse, simulate_lti
from core.qp_solver import QpResult, QpSolver, QpStatus

DT = 0.05
N_FOLLOWERS, M_CAVS = 3, 1
P_OUT = N_FOLLOWERS + M_CAVS


def _small_config(**overrides) -> DeepLccConfig:
    values = dict(T_ini=6, N=10, N_c=3, qp_eps_abs=1e-9, qp_eps_rel=1e-9, qp_max_iter=100000)
    values.update(overrides)
    return DeepLccConfig(**values)


def _oracle_setup(seed: int = 11):
    """LTI-Modell, Gleichgewicht und Hankel-Blöcke aus rauschfreien Daten"""
    p = OvmParams.straight_road()
    fleet = FleetConfig(n=N_FOLLOWERS, cav_set=(2,))
    eq = EquilibriumState(0.3, equilibrium_spacing_inverse(0.3, p))
    model = build_lti_model(fleet, p, eq, DT)
    rng = np.random.default_rng(seed)
    T = 300
    u = rng.uniform(-0.2, 0.2, (T, M_CAVS))
    eps = rng.uniform(-0.05, 0.05, T)
    _, y = simulate_lti(model, rng.normal(0, 0.02, 2 * N_FOLLOWERS), u, eps)
    dataset = TrajectoryDataset(u=u, eps=eps, y_raw=error_to_raw_output(y, eq, N_FOLLOWERS, M_CAVS),
                                dt=DT, n=N_FOLLOWERS, m=M_CAVS, equilibrium=eq)
    blocks = partition(dataset, eq, HankelDims(N_FOLLOWERS, M_CAVS, T_ini=6, N=10))
    return p, eq, model, blocks


def _past_trajectory(model, eq, rng, T_ini=6):
    """Zufällige Vergangenheit des LTI-Modells als gefüllter Puffer"""
    u = rng.uniform(-0.1, 0.1, (T_ini, M_CAVS))
    eps = rng.uniform(-0.03, 0.03, T_ini)
    xs, y = simulate_lti(model, rng.normal(0, 0.02, 2 * N_FOLLOWERS), u, eps)
    buffer = PastBuffer(T_ini, M_CAVS, P_OUT)
    y_raw = error_to_raw_output(y, eq, N_FOLLOWERS, M_CAVS)
    for k in range(T_ini):
        buffer.push(u[k], eq.v_star + eps[k], y_raw[k])
    return buffer, xs[-1]


def _equilibrium_buffer(eq, T_ini=6) -> PastBuffer:
    buffer = PastBuffer(T_ini, M_CAVS, P_OUT)
    y_raw = error_to_raw_output(np.zeros(P_OUT), eq, N_FOLLOWERS, M_CAVS)
    for _ in range(T_ini):
        buffer.push([0.0], eq.v_star, y_raw)
    return buffer


def test_config_and_buffer():
    """Testet DeepLccConfig und PastBuffer"""
    print("\n" + "=" * 80)
    print("TEST: Konfiguration und Puffer")
    print("=" * 80)

    print("\n1. Test Standardwerte:")
    cfg = DeepLccConfig()
    assert (cfg.T_ini, cfg.N, cfg.N_c) == (20, 50, 10)
    assert (cfg.w_v, cfg.w_s, cfg.w_u) == (5.0, 40.0, 2.0)
    assert (cfg.lambda_g, cfg.lambda_y) == (10.0, 1e5)
    assert (cfg.s_tilde_min, cfg.s_tilde_max, cfg.a_min, cfg.a_max) == (-0.4, 1.2, -0.4, 0.4)
    two = DeepLccConfig.table_defaults(2)
    assert (two.w_s, two.w_u) == (20.0, 1.0)
    assert DeepLccConfig.from_dict(two.to_dict()) == two
    print(f"   m=2: w_s={two.w_s}, w_u={two.w_u}")

    print("\n2. Test ungültige Werte:")
    for kwargs in (dict(N_c=0), dict(N_c=60), dict(w_v=0.0), dict(a_min=0.5), dict(T_ini=0)):
        try:
            DeepLccConfig(**kwargs)
            raise AssertionError(f"ValueError erwartet für {kwargs}")
        except ValueError as e:
            print(f"   [OK] {kwargs}: {e}")

    print("\n3. Test Puffer:")
    buffer = PastBuffer(3, 1, 4)
    try:
        estimate_equilibrium_velocity(buffer)
        raise AssertionError("ValueError erwartet")
    except ValueError:
        pass
    for k, v0 in enumerate([0.2, 0.3, 0.4, 0.5]):
        buffer.push([0.01 * k], v0, np.zeros(4))
    assert buffer.is_warm and len(buffer) == 3
    assert np.allclose(buffer.v0_array(), [0.3, 0.4, 0.5])
    assert abs(estimate_equilibrium_velocity(buffer) - 0.4) < 1e-12
    try:
        buffer.push([0.0, 0.0], 0.3, np.zeros(4))
        raise AssertionError("ValueError erwartet")
    except ValueError as e:
        print(f"   [OK] {e}")
    buffer.clear()
    assert len(buffer) == 0 and not buffer.is_warm

    print("\n4. Test Gleichgewichtsabstand:")
    assert abs(design_equilibrium_spacing(0.3, OvmParams()) - 0.8) < 1e-12
    print("   s*(0.3) = 0.8")


def test_problem_structure():
    """Testet Gewichte, Selektor und Matrixformen"""
    print("\n" + "=" * 80)
    print("TEST: QP-Struktur")
    print("=" * 80)

    p, eq, _, blocks = _oracle_setup()
    cfg = _small_config()
    problem = assemble_problem(blocks, _equilibrium_buffer(eq), eq, cfg)
    L = blocks.L

    print("\n1. Test Q und R:")
    assert np.allclose(problem.Q(), np.diag([5.0, 5.0, 5.0, 40.0]))
    assert np.allclose(problem.R(), [[2.0]])
    print(f"   Q = diag{np.diag(problem.Q()).tolist()}")

    print("\n2. Test Spaltenselektor:")
    S = spacing_selector(3, 1, 10).toarray()
    assert S.shape == (10, 40)
    for k in range(10):
        assert S[k, 4 * k + 3] == 1.0 and S[k].sum() == 1.0
    S2 = spacing_selector(5, 2, 4).toarray()
    assert S2.shape == (8, 28) and S2[1, 6] == 1.0 and S2[2, 12] == 1.0
    print("   [OK]")

    print("\n3. Test Kostenmatrix:")
    P = problem.cost_matrix().toarray()
    diag = np.diag(P)
    size = L + 10 + 40 + 24
    assert P.shape == (size, size)
    assert np.allclose(diag[:L], 2 * cfg.lambda_g)
    assert np.allclose(diag[L:L + 10], 2 * cfg.w_u)
    assert np.allclose(diag[L + 10:L + 14], 2 * np.array([5, 5, 5, 40]))
    assert np.allclose(diag[-24:], 2 * cfg.lambda_y)
    print(f"   {size} Variablen")

    print("\n4. Test Nebenbedingungen:")
    A = problem.constraint_matrix()
    l, u = problem.bounds()
    rows = 6 + 6 + 24 + 10 + 10 + 40 + 10 + 10
    assert A.shape == (rows, size) and l.shape == (rows,) and u.shape == (rows,)
    assert np.allclose(l[-20:-10], cfg.a_min) and np.allclose(u[-10:], cfg.s_tilde_max)
    print(f"   {rows} Zeilen")

    print("\n5. Test Dimensionsfehler:")
    try:
        assemble_problem(blocks, PastBuffer(6, 1, 4), eq, cfg)
        raise AssertionError("ValueError erwartet (Puffer leer)")
    except ValueError as e:
        print(f"   [OK] {e}")
    try:
        assemble_problem(blocks, _equilibrium_buffer(eq), eq, _small_config(N=12))
        raise AssertionError("ValueError erwartet (N)")
    except ValueError as e:
        print(f"   [OK] {e}")


def test_equilibrium_gives_zero_input():
    """Im Gleichgewicht ist die optimale Eingangsfolge null"""
    print("\n" + "=" * 80)
    print("TEST: Gleichgewicht")
    print("=" * 80)

    p, eq, _, blocks = _oracle_setup()
    result = control_step(blocks, _equilibrium_buffer(eq), _small_config(), p)
    sol = result.solution
    print(f"   Status {sol.status.value}, |u|max={np.max(np.abs(sol.u_opt)):.2e}, |sigma|={sol.slack_norm:.2e}")
    assert sol.ok
    assert np.max(np.abs(sol.u_opt)) < 1e-5
    assert np.max(np.abs(sol.y_opt)) < 1e-5
    assert abs(result.equilibrium.v_star - 0.3) < 1e-12
    assert result.applied_inputs.shape == (1, 3) and not result.fallback_mask.any()


def test_slack_monotone_in_lambda_y():
    """Größeres lambda_y verkleinert die Schlupfnorm"""
    print("\n" + "=" * 80)
    print("TEST: Schlupf gegen lambda_y")
    print("=" * 80)

    p, eq, model, blocks = _oracle_setup()
    rng = np.random.default_rng(12)
    buffer, _ = _past_trajectory(model, eq, rng)
    noise = rng.normal(0, 0.01, (6, P_OUT))
    base = assemble_problem(blocks, buffer, eq, _small_config())
    noisy = replace(base, y_ini=base.y_ini + noise)

    norms = []
    for lam in (1e1, 1e3, 1e5, 1e7):
        sol = solve_qp(replace(noisy, cfg=replace(noisy.cfg, lambda_y=lam)), tol=1e-8, max_iter=400000)
        assert sol.ok, sol.status
        norms.append(sol.slack_norm)
        print(f"   lambda_y={lam:.0e}: |sigma_y|={sol.slack_norm:.4e}")
    for a, b in zip(norms, norms[1:]):
        assert b <= a * (1 + 1e-3) + 1e-7


def test_receding_horizon_consistency():
    """Der geplante Ausgang stimmt mit dem Modell unter dem geplanten Eingang überein"""
    print("\n" + "=" * 80)
    print("TEST: Vorhersage gegen Modell")
    print("=" * 80)

    p, eq, model, blocks = _oracle_setup()
    rng = np.random.default_rng(13)
    for lambda_g in (1e-3, 1e-6):
        cfg = _small_config(lambda_y=1e9, lambda_g=lambda_g)
        worst = 0.0
        for _ in range(5):
            buffer, x_now = _past_trajectory(model, eq, rng)
            sol = solve_qp(assemble_problem(blocks, buffer, eq, cfg), tol=1e-8, max_iter=400000)
            assert sol.ok, sol.status
            u_plan = sol.u_opt.reshape(cfg.N, M_CAVS)
            _, y_model = simulate_lti(model, x_now, u_plan, np.zeros(cfg.N))
            worst = max(worst, np.max(np.abs(y_model - sol.y_opt.reshape(cfg.N, P_OUT))))
            # Eingänge innerhalb der Schranken
            assert u_plan.min() >= cfg.a_min - 1e-6 and u_plan.max() <= cfg.a_max + 1e-6
        print(f"   lambda_g={lambda_g:.0e}: max. Abweichung {worst:.2e}")
        assert worst <= 1e-6


def test_infeasible_problem():
    """Leere Eingangsbox liefert INFEASIBLE ohne Lösung"""
    print("\n" + "=" * 80)
    print("TEST: Unzulässiges QP")
    print("=" * 80)

    p, eq, _, blocks = _oracle_setup()
    problem = assemble_problem(blocks, _equilibrium_buffer(eq), eq, _small_config())
    sol = solve_qp(replace(problem, u_lower=0.5, u_upper=0.1))
    print(f"   Status {sol.status.value}")
    assert sol.status is QpStatus.INFEASIBLE and sol.u_opt is None and not sol.ok


class _FailingSolver(QpSolver):
    """QpSolver, dessen solve() immer scheitert"""

    def solve(self) -> QpResult:
        return QpResult(status=QpStatus.ERROR, x=None, y=None, objective=float("nan"),
                        iterations=0, solve_time=0.0, raw_status="test")


def test_fallback_and_persistent_failure():
    """Rückfall auf den Restplan, danach OVM-Maske, danach SolverError"""
    print("\n" + "=" * 80)
    print("TEST: Rückfallebene")
    print("=" * 80)

    p, eq, model, blocks = _oracle_setup()
    rng = np.random.default_rng(14)
    cfg = _small_config(max_consecutive_failures=3)
    controller = DeepLccController(blocks, cfg, p)
    buffer, _ = _past_trajectory(model, eq, rng)

    print("\n1. Test erfolgreicher Aufruf:")
    first = controller.step(buffer, t=1.0, step_index=20)
    assert first.solution.ok and not first.diagnostics.fallback
    plan = first.solution.u_opt.reshape(cfg.N, M_CAVS)
    assert np.allclose(first.applied_inputs[0], np.clip(plan[:3, 0], cfg.a_min, cfg.a_max))
    assert first.diagnostics.plan_u_min == plan.min() and first.diagnostics.plan_u_max == plan.max()
    assert first.diagnostics.plan_u_min >= cfg.a_min - 1e-6 and first.diagnostics.plan_u_max <= cfg.a_max + 1e-6

    print("\n2. Test Restplan bei Fehlschlag:")
    controller.solver = _FailingSolver()
    second = controller.step(buffer, t=1.15, step_index=23)
    assert second.diagnostics.fallback and not second.fallback_mask.any()
    assert np.isnan(second.diagnostics.plan_u_min) and np.isnan(second.diagnostics.plan_u_max)
    assert np.allclose(second.applied_inputs[0], plan[3:6, 0])
    third = controller.step(buffer, t=1.3, step_index=26)
    assert np.allclose(third.applied_inputs[0], plan[6:9, 0])
    fourth = controller.step(buffer, t=1.45, step_index=29)
    assert fourth.fallback_mask.tolist() == [False, True, True]
    assert abs(fourth.applied_inputs[0, 0] - plan[9, 0]) < 1e-12
    print(f"   Maske nach erschöpftem Plan: {fourth.fallback_mask.tolist()}")

    print("\n3. Test dauerhafter Fehlschlag:")
    try:
        controller.step(buffer, t=1.6, step_index=32)
        raise AssertionError("SolverError erwartet")
    except SolverError as e:
        print(f"   [OK] {e}")

    print("\n4. Test Zustands-Dump:")
    dump = controller.state_dump()
    assert dump.count("\n") >= 6 and "FALLBACK" in dump
    print(dump.splitlines()[1])


def main():
    """Hauptfunktion - führt alle Tests durch"""
    print("\n" + "=" * 80)
    print(" DeepLccLab - DeeP-LCC Regler")
    print("=" * 80)

    try:
        test_config_and_buffer()
        test_problem_structure()
        test_equilibrium_gives_zero_input()
        test_slack_monotone_in_lambda_y()
        test_receding_horizon_consistency()
        test_infeasible_problem()
        test_fallback_and_persistent_failure()

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
