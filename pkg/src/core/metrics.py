"""
Auswertung von Simulationsläufen
ASVE (aufsummierter quadratischer Geschwindigkeitsfehler), Wellenamplitude und Vergleichstabellen
"""
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from .sim_log import SimulationLog

REPORT_COLUMNS = ["cav_set", "asve_ee", "asve_pe", "reduction_ee", "reduction_pe", "status"]


class EquilibriumMode(Enum):
    """Bezugsgeschwindigkeit der ASVE"""
    ESTIMATED = "estimated"     # gleitender Mittelwert der Kopf-Geschwindigkeit
    PRESCRIBED = "prescribed"   # fest vorgegebenes v_c


@dataclass
class AsveReport:
    """ASVE eines Laufs unter geschätztem und vorgegebenem Gleichgewicht"""
    asve_estimated: float
    asve_prescribed: float
    window: Tuple[float, float]
    reduction_estimated: Optional[float] = None
    reduction_prescribed: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _window_steps(log: SimulationLog, window: Optional[Tuple[float, float]]) -> Tuple[int, int]:
    """Schrittbereich [k0, k1) zu einem Zeitfenster [t0, tf)"""
    if window is None:
        k0, k1 = 0, len(log)
    else:
        t0, tf = window
        if t0 < 0 or tf > log.duration + 1e-9:
            raise ValueError(f"Fenster {window} liegt außerhalb des Logs [0, {log.duration}]")
        k0 = int(round(t0 / log.dt))
        k1 = int(round(tf / log.dt))
    if k1 <= k0:
        raise ValueError(f"Leeres Auswertefenster: {window}")
    return k0, k1


def estimated_reference(log: SimulationLog, t_ini: int = 20) -> np.ndarray:
    """
    Gleitender Mittelwert der Kopf-Geschwindigkeit über die vorherigen t_ini Schritte

    Schritt 0 verwendet die Geschwindigkeit zum Zeitpunkt 0, in den ersten
    Schritten wird über die verfügbaren Werte gemittelt.
    """
    v0 = log.velocity_of(log.head_id)
    csum = np.concatenate([[0.0], np.cumsum(v0)])
    k = np.arange(len(v0))
    start = np.maximum(k - t_ini, 0)
    ref = np.empty_like(v0)
    ref[1:] = (csum[k[1:]] - csum[start[1:]]) / (k[1:] - start[1:])
    if len(v0):
        ref[0] = v0[0]
    return ref


def compute_asve(log: SimulationLog, mode: EquilibriumMode = EquilibriumMode.PRESCRIBED,
                 v_c: Optional[float] = None, window: Optional[Tuple[float, float]] = None,
                 t_ini: int = 20, vehicle_ids: Optional[Iterable[int]] = None) -> float:
    """
    Summe über die Fahrzeuge von sum_k (v_i - v*)^2 * dt (Linksrechteck)

    Args:
        mode: ESTIMATED oder PRESCRIBED (dann v_c nötig)
        window: (t0, tf) in Sekunden, Standard: gesamter Lauf
        vehicle_ids: Standard: log.metric_ids

    Raises:
        ValueError: leeres Fenster oder fehlendes v_c
    """
    mode = EquilibriumMode(mode)
    k0, k1 = _window_steps(log, window)
    ids = list(vehicle_ids) if vehicle_ids is not None else log.metric_ids
    cols = [log.column(i) for i in ids]
    v = log.velocities()[k0:k1, cols]

    if mode is EquilibriumMode.PRESCRIBED:
        if v_c is None:
            raise ValueError("Vorgegebenes Gleichgewicht benötigt v_c")
        ref = np.full(k1 - k0, float(v_c))
    else:
        ref = estimated_reference(log, t_ini)[k0:k1]

    return float(np.sum((v - ref[:, None]) ** 2) * log.dt)


def build_asve_report(log: SimulationLog, v_c: float, window: Optional[Tuple[float, float]] = None,
                      baseline: Optional[SimulationLog] = None, t_ini: int = 20) -> AsveReport:
    """ASVE unter beiden Gleichgewichten, mit Reduktion gegenüber einem Referenzlauf"""
    k0, k1 = _window_steps(log, window)
    used = (k0 * log.dt, k1 * log.dt)
    report = AsveReport(
        asve_estimated=compute_asve(log, EquilibriumMode.ESTIMATED, window=used, t_ini=t_ini),
        asve_prescribed=compute_asve(log, EquilibriumMode.PRESCRIBED, v_c=v_c, window=used),
        window=used,
    )
    if baseline is not None:
        base_ee = compute_asve(baseline, EquilibriumMode.ESTIMATED, window=used, t_ini=t_ini)
        base_pe = compute_asve(baseline, EquilibriumMode.PRESCRIBED, v_c=v_c, window=used)
        report.reduction_estimated = 1 - report.asve_estimated / base_ee if base_ee > 0 else None
        report.reduction_prescribed = 1 - report.asve_prescribed / base_pe if base_pe > 0 else None
    return report


def wave_amplitude(log: SimulationLog, vehicle_id: int, window: Optional[Tuple[float, float]] = None) -> float:
    """max(v) - min(v) eines Fahrzeugs im Fenster"""
    k0, k1 = _window_steps(log, window)
    v = log.velocity_of(vehicle_id)[k0:k1]
    return float(v.max() - v.min())


def velocity_spread(log: SimulationLog) -> np.ndarray:
    """Momentane Differenz max - min der Geschwindigkeiten über alle Fahrzeuge"""
    v = log.velocities()
    if v.size == 0:
        return np.zeros(0)
    return v.max(axis=1) - v.min(axis=1)


def format_cav_set(cav_set) -> str:
    return "{" + ",".join(str(i) for i in cav_set) + "}" if cav_set else "{}"


def report_row(cav_set, report: Optional[AsveReport], status: str = "ok") -> dict:
    """Eine Tabellenzeile (fehlgeschlagene Fälle mit leeren Werten)"""
    if report is None:
        return {"cav_set": format_cav_set(cav_set), "asve_ee": np.nan, "asve_pe": np.nan,
                "reduction_ee": np.nan, "reduction_pe": np.nan, "status": status}
    return {
        "cav_set": format_cav_set(cav_set),
        "asve_ee": report.asve_estimated,
        "asve_pe": report.asve_prescribed,
        "reduction_ee": np.nan if report.reduction_estimated is None else report.reduction_estimated,
        "reduction_pe": np.nan if report.reduction_prescribed is None else report.reduction_prescribed,
        "status": status,
    }


def report_table(rows: List[dict]) -> pd.DataFrame:
    """Vergleichstabelle mit den Spalten cav_set, asve_ee, asve_pe, reduction_ee, reduction_pe, status"""
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)
