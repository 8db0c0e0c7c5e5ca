"""
Simulations-Log für DeepLccLab
Speichert Fahrzeugzustände pro Zeitschritt, Regler-Diagnosen und Ausfallinformation
"""
import logging
import os
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import List, Optional, Dict

import numpy as np
import pandas as pd

from .fleet import SystemSignals, VehicleState

logger = logging.getLogger(__name__)


@dataclass
class ControlDiagnostics:
    """
    Diagnose eines einzelnen Regler-Aufrufs

    u_min/u_max: angewendete (geclippte) Eingänge, plan_u_min/plan_u_max:
    ungeclippte QP-Lösung über den ganzen Horizont
    """
    step: int
    t: float
    status: str
    objective: float
    slack_norm: float
    iterations: int
    solve_time: float
    v_star: float
    s_star: float
    fallback: bool = False
    u_min: float = float("nan")
    u_max: float = float("nan")
    plan_u_min: float = float("nan")
    plan_u_max: float = float("nan")
    spacing_pred_min: float = float("nan")
    spacing_pred_max: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)

    def format(self) -> str:
        """Eine Zeile für den Zustands-Dump des Reglers"""
        return (f"step={self.step:6d} t={self.t:8.2f}s status={self.status:<11s} "
                f"v*={self.v_star:.4f} s*={self.s_star:.4f} obj={self.objective:.6g} "
                f"|sigma_y|={self.slack_norm:.3e} iter={self.iterations} "
                f"solve={self.solve_time * 1000:.1f}ms"
                + (" FALLBACK" if self.fallback else ""))


class SimulationLog:
    """
    Append-only Log einer Simulation auf gleichmäßigem Zeitgitter

    Datensatz k enthält den Zustand zum Zeitpunkt t_k = k*dt und die in
    diesem Schritt kommandierten Größen. Anzahl Datensätze * dt = simulierte Dauer.
    """

    def __init__(self, dt: float, vehicle_ids: List[int], cav_ids: List[int],
                 head_id: int, metric_ids: List[int], kind: str = "straight",
                 circumference: Optional[float] = None):
        if dt <= 0:
            raise ValueError(f"dt muss positiv sein: {dt}")
        self.dt = dt
        self.vehicle_ids = list(vehicle_ids)
        self.cav_ids = list(cav_ids)
        self.head_id = head_id
        self.metric_ids = list(metric_ids)
        self.kind = kind
        self.circumference = circumference

        self._positions: List[np.ndarray] = []
        self._velocities: List[np.ndarray] = []
        self._accelerations: List[np.ndarray] = []
        self._spacings: List[np.ndarray] = []
        self._cmd_velocities: List[np.ndarray] = []
        self.phases: List[str] = []
        self.signals: Dict[int, SystemSignals] = {}
        self.diagnostics: List[ControlDiagnostics] = []

        self.failed = False
        self.failure_time: Optional[float] = None
        self.failure_reason: str = ""

    # ------------------------------------------------------------------
    # Schreiben

    def append(self, positions, velocities, accelerations, spacings, cmd_velocities, phase: str = ""):
        """Hängt einen Zeitschritt an (Arrays in Reihenfolge von vehicle_ids)"""
        self._positions.append(np.array(positions, dtype=float))
        self._velocities.append(np.array(velocities, dtype=float))
        self._accelerations.append(np.array(accelerations, dtype=float))
        self._spacings.append(np.array(spacings, dtype=float))
        self._cmd_velocities.append(np.array(cmd_velocities, dtype=float))
        self.phases.append(phase)

    def record_signals(self, step: int, signals: SystemSignals):
        """Speichert (u, eps, y) eines Regelschritts unter dem Schrittindex"""
        self.signals[step] = signals

    def add_diagnostics(self, diag: ControlDiagnostics):
        self.diagnostics.append(diag)

    def mark_failed(self, t: float, reason: str):
        """Markiert den Lauf als fehlgeschlagen (nur die erste Verletzung zählt)"""
        if self.failed:
            return
        self.failed = True
        self.failure_time = t
        self.failure_reason = reason
        logger.warning(f"Simulation fehlgeschlagen bei t={t:.2f}s: {reason}")

    # ------------------------------------------------------------------
    # Lesen

    def __len__(self) -> int:
        return len(self._velocities)

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def column(self, vehicle_id: int) -> int:
        """
        Spaltenindex eines Fahrzeugs in den Matrizen des Logs

        Raises:
            ValueError: Fahrzeug nicht im Log
        """
        return self.vehicle_ids.index(vehicle_id)

    def positions(self) -> np.ndarray:
        return self._stack(self._positions)

    def velocities(self) -> np.ndarray:
        """Geschwindigkeiten als Matrix (Schritte x Fahrzeuge)"""
        return self._stack(self._velocities)

    def accelerations(self) -> np.ndarray:
        return self._stack(self._accelerations)

    def spacings(self) -> np.ndarray:
        return self._stack(self._spacings)

    def cmd_velocities(self) -> np.ndarray:
        return self._stack(self._cmd_velocities)

    def velocity_of(self, vehicle_id: int) -> np.ndarray:
        return self.velocities()[:, self.column(vehicle_id)]

    def state_at(self, step: int, vehicle_id: int) -> VehicleState:
        """
        Zustand eines Fahrzeugs in einem Schritt

        Raises:
            ValueError: Fahrzeug nicht im Log
            IndexError: Schritt außerhalb des Logs
        """
        j = self.column(vehicle_id)
        return VehicleState(
            position=float(self._positions[step][j]),
            velocity=float(self._velocities[step][j]),
            acceleration=float(self._accelerations[step][j]),
            spacing=float(self._spacings[step][j]),
        )

    def cav_inputs(self) -> np.ndarray:
        """Kommandierte CAV-Beschleunigungen (Schritte x m)"""
        cols = [self.column(i) for i in self.cav_ids]
        return self.accelerations()[:, cols]

    def _stack(self, rows: List[np.ndarray]) -> np.ndarray:
        if not rows:
            return np.zeros((0, len(self.vehicle_ids)))
        return np.vstack(rows)

    # ------------------------------------------------------------------
    # Export

    def to_dataframe(self) -> pd.DataFrame:
        """
        Langes Tabellenformat: eine Zeile pro (Zeitschritt, Fahrzeug)

        Spalten: t,veh_id,pos,vel,acc,spacing,is_cav,cmd_vel (+ phase beim Ring)
        """
        steps, count = len(self), len(self.vehicle_ids)
        pos = self.positions()
        if self.circumference is not None:
            pos = np.mod(pos, self.circumference)
        data = {
            "t": np.repeat(self.times, count),
            "veh_id": np.tile(self.vehicle_ids, steps),
            "pos": pos.reshape(-1),
            "vel": self.velocities().reshape(-1),
            "acc": self.accelerations().reshape(-1),
            "spacing": self.spacings().reshape(-1),
            "is_cav": np.tile([int(i in self.cav_ids) for i in self.vehicle_ids], steps),
            "cmd_vel": self.cmd_velocities().reshape(-1),
        }
        if any(self.phases):
            data["phase"] = np.repeat(self.phases, count)
        return pd.DataFrame(data)

    def diagnostics_dataframe(self) -> pd.DataFrame:
        columns = list(ControlDiagnostics.__dataclass_fields__)
        return pd.DataFrame([d.to_dict() for d in self.diagnostics], columns=columns)

    def save_csv(self, path, diagnostics_path=None):
        """
        Schreibt Log (und optional Diagnosen) atomar als CSV

        Args:
            path: Ziel für das Fahrzeug-Log
            diagnostics_path: Ziel für die Diagnose-Tabelle
        """
        write_csv_atomic(self.to_dataframe(), path)
        if diagnostics_path is not None:
            write_csv_atomic(self.diagnostics_dataframe(), diagnostics_path)

    def __repr__(self):
        status = f"FAILED@{self.failure_time:.2f}s" if self.failed else "ok"
        return f"SimulationLog(kind={self.kind}, steps={len(self)}, dt={self.dt}, {status})"


def write_csv_atomic(df: pd.DataFrame, path):
    """
    Schreibt ein DataFrame über eine temporäre Datei und os.replace

    Raises:
        IOError: Schreiben fehlgeschlagen
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(temp_path, "w", encoding="utf-8", newline="") as f:
            df.to_csv(f, index=False)
            f.flush()
            os.fsync(f.fileno())
        os.replace(temp_path, path)
    except Exception as e:
        if temp_path.exists():
            try:
                temp_path.unlink()
            except OSError:
                pass
        raise IOError(f"Fehler beim Schreiben von {path}: {e}")
