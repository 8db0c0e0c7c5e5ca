"""
Fahrermodell (OVM) und linearisiertes LTI-Modell des Mischverkehrs

Zustandsreihenfolge des LTI-Modells: x = [v~1, s~1, v~2, s~2, ...]
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .fleet import FleetConfig, OvmParams, EquilibriumState


def ovm_desired_velocity(s, p: OvmParams):
    """
    Abstandsabhängige Wunschgeschwindigkeit

    0 unterhalb s_st, v_max oberhalb s_go, dazwischen Kosinus-Übergang.
    Funktioniert für Skalare und numpy-Arrays.
    """
    s = np.asarray(s, dtype=float)
    phase = np.pi * (s - p.s_st) / (p.s_go - p.s_st)
    v = p.v_max / 2 * (1 - np.cos(phase))
    v = np.where(s <= p.s_st, 0.0, np.where(s >= p.s_go, p.v_max, v))
    return float(v) if v.ndim == 0 else v


def ovm_desired_velocity_derivative(s, p: OvmParams):
    """Ableitung der Wunschgeschwindigkeit nach dem Abstand (0 außerhalb (s_st, s_go))"""
    s = np.asarray(s, dtype=float)
    width = p.s_go - p.s_st
    dv = np.pi * p.v_max / (2 * width) * np.sin(np.pi * (s - p.s_st) / width)
    dv = np.where((s <= p.s_st) | (s >= p.s_go), 0.0, dv)
    return float(dv) if dv.ndim == 0 else dv


def ovm_acceleration(s, v, v_pred, p: OvmParams):
    """alpha*(V(s) - v) + beta*(v_pred - v)"""
    return p.alpha * (ovm_desired_velocity(s, p) - np.asarray(v)) + p.beta * (np.asarray(v_pred) - np.asarray(v))


def equilibrium_spacing_inverse(v_star: float, p: OvmParams, tol: float = 1e-12) -> float:
    """
    Umkehrfunktion der Wunschgeschwindigkeit: Abstand zu v*

    Raises:
        ValueError: v* außerhalb [0, v_max]
    """
    if not -tol <= v_star <= p.v_max + tol:
        raise ValueError(f"v*={v_star} außerhalb [0, {p.v_max}]")
    ratio = min(max(1 - 2 * v_star / p.v_max, -1.0), 1.0)
    return float(np.arccos(ratio) * (p.s_go - p.s_st) / np.pi + p.s_st)


@dataclass(frozen=True)
class LtiMixedModel:
    """
    Zeitdiskretes Modell x(k+1) = A x(k) + B u(k) + H eps(k), y(k) = C x(k)

    Erzeugt durch Vorwärts-Euler mit dem Simulator-dt.
    """
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    H: np.ndarray
    dt: float

    def __post_init__(self):
        for name in ("A", "B", "C", "H"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n2 = self.A.shape[0]
        if self.A.shape != (n2, n2) or self.B.shape[0] != n2 or self.H.shape != (n2, 1) \
                or self.C.shape[1] != n2:
            raise ValueError(f"Inkonsistente Dimensionen: A{self.A.shape} B{self.B.shape} "
                             f"C{self.C.shape} H{self.H.shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0] // 2

    @property
    def m(self) -> int:
        return self.B.shape[1]


def build_lti_model(fleet: FleetConfig, p: OvmParams, eq: EquilibriumState, dt: float) -> LtiMixedModel:
    """
    Linearisiert die Flotte um das Gleichgewicht und diskretisiert per Vorwärts-Euler

    Raises:
        ValueError: v* am Rand (0 oder v_max), dort ist V nicht glatt
    """
    if not 0 < eq.v_star < p.v_max:
        raise ValueError(f"Linearisierung nur für 0 < v* < v_max möglich (v*={eq.v_star})")
    if dt <= 0:
        raise ValueError(f"dt muss positiv sein: {dt}")

    n, m = fleet.formulation_dims()
    cav_local = fleet.local_cav_indices()
    s_star = equilibrium_spacing_inverse(eq.v_star, p)
    gain = p.alpha * ovm_desired_velocity_derivative(s_star, p)

    Ac = np.zeros((2 * n, 2 * n))
    Bc = np.zeros((2 * n, m))
    Hc = np.zeros((2 * n, 1))

    for i in range(1, n + 1):
        vi, si = 2 * (i - 1), 2 * (i - 1) + 1
        # Abstand: Vorderfahrzeug-Geschwindigkeit minus eigene
        Ac[si, vi] = -1.0
        if i == 1:
            Hc[si, 0] = 1.0
        else:
            Ac[si, 2 * (i - 2)] = 1.0

        if i in cav_local:
            Bc[vi, cav_local.index(i)] = 1.0
        else:
            Ac[vi, si] = gain
            Ac[vi, vi] = -(p.alpha + p.beta)
            if i == 1:
                Hc[vi, 0] = p.beta
            else:
                Ac[vi, 2 * (i - 2)] = p.beta

    C = np.zeros((n + m, 2 * n))
    for i in range(n):
        C[i, 2 * i] = 1.0
    for j, i in enumerate(cav_local):
        C[n + j, 2 * (i - 1) + 1] = 1.0

    return LtiMixedModel(A=np.eye(2 * n) + dt * Ac, B=dt * Bc, C=C, H=dt * Hc, dt=dt)


def step_lti(model: LtiMixedModel, x, u, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ein Schritt des LTI-Modells

    Returns:
        (x(k+1), y(k))

    Raises:
        ValueError: Dimensionsfehler
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != model.A.shape[0]:
        raise ValueError(f"Zustand hat Länge {x.shape[0]}, erwartet {model.A.shape[0]}")
    if u.shape[0] != model.m:
        raise ValueError(f"Eingang hat Länge {u.shape[0]}, erwartet {model.m}")
    x_next = model.A @ x + model.B @ u + model.H[:, 0] * float(eps)
    return x_next, model.C @ x


def simulate_lti(model: LtiMixedModel, x0, u_seq, eps_seq) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rollt step_lti über eine Sequenz

    Args:
        x0: Anfangszustand (2n)
        u_seq: Eingänge (T x m)
        eps_seq: externe Eingänge (T)

    Returns:
        (Zustände (T+1) x 2n, Ausgänge T x (n+m))
    """
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.m)
    eps_seq = np.asarray(eps_seq, dtype=float).reshape(-1)
    if u_seq.shape[0] != eps_seq.shape[0]:
        raise ValueError(f"Sequenzlängen verschieden: u={u_seq.shape[0]}, eps={eps_seq.shape[0]}")

    T = u_seq.shape[0]
    xs = np.zeros((T + 1, model.A.shape[0]))
    ys = np.zeros((T, model.C.shape[0]))
    xs[0] = np.asarray(x0, dtype=float)
    for k in range(T):
        xs[k + 1], ys[k] = step_lti(model, xs[k], u_seq[k], eps_seq[k])
    return xs, ys


def nonlinear_error_step(fleet: FleetConfig, p: OvmParams, eq: EquilibriumState, dt: float,
                         x, u, eps: float) -> np.ndarray:
    """
    Ein Vorwärts-Euler-Schritt der nichtlinearen OVM-Flotte in Fehlerkoordinaten

    Gleiche Zustandsreihenfolge wie das LTI-Modell; dient als Referenz für die
    Linearisierung.
    """
    n, _ = fleet.formulation_dims()
    cav_local = fleet.local_cav_indices()
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)

    v = eq.v_star + x[0::2]
    s = eq.s_star + x[1::2]
    v_pred = np.concatenate([[eq.v_star + eps], v[:-1]])

    acc = np.asarray(ovm_acceleration(s, v, v_pred, p), dtype=float)
    for j, i in enumerate(cav_local):
        acc[i - 1] = u[j]

    x_next = x.copy()
    x_next[0::2] += dt * acc
    x_next[1::2] += dt * (v_pred - v)
    return x_next
