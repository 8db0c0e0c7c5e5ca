"""
Hankel-Matrizen für die datengetriebene Systemdarstellung
Datensatz, Hankel-Aufbau, Prüfung auf persistente Anregung und Vergangenheit/Zukunft-Aufteilung
"""
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import svdvals

from .fleet import EquilibriumState, raw_to_error_output
from .sim_log import write_csv_atomic

logger = logging.getLogger(__name__)

# Singulärwerte unter max_dim * sigma_max * RANK_RTOL gelten als Null
RANK_RTOL = 1e-10


class ExcitationError(RuntimeError):
    """Daten sind nicht persistent anregend"""


@dataclass(frozen=True)
class HankelDims:
    """Dimensionen des Regler-Ansatzes: n Folger, m CAVs, T_ini Vergangenheit, N Horizont"""
    n: int
    m: int
    T_ini: int
    N: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.T_ini < 1 or self.N < 1:
            raise ValueError(f"Ungültige Dimensionen: {self}")

    @property
    def p(self) -> int:
        """Ausgangsdimension n+m"""
        return self.n + self.m

    @property
    def depth(self) -> int:
        return self.T_ini + self.N


@dataclass
class TrajectoryDataset:
    """
    Offline gesammelte Trajektorien

    u: CAV-Eingänge (T x m), eps: v_0 - v* zum Sammelzeitpunkt (T),
    y_raw: Rohausgänge (T x (n+m)), equilibrium: Gleichgewicht der Sammlung
    """
    u: np.ndarray
    eps: np.ndarray
    y_raw: np.ndarray
    dt: float
    n: int
    m: int
    equilibrium: EquilibriumState
    cav_set: Tuple[int, ...] = ()
    kind: str = "straight"
    seed: Optional[int] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(-1, self.m)
        self.eps = np.asarray(self.eps, dtype=float).reshape(-1)
        self.y_raw = np.asarray(self.y_raw, dtype=float).reshape(-1, self.n + self.m)
        self.cav_set = tuple(int(i) for i in self.cav_set)
        T = self.u.shape[0]
        if self.eps.shape[0] != T or self.y_raw.shape[0] != T:
            raise ValueError(f"Ungleiche Längen: u={T}, eps={self.eps.shape[0]}, y_raw={self.y_raw.shape[0]}")

    @property
    def T(self) -> int:
        return self.u.shape[0]

    def error_output(self, eq: Optional[EquilibriumState] = None) -> np.ndarray:
        """Fehlerausgang bezogen auf eq (Standard: Sammel-Gleichgewicht)"""
        return raw_to_error_output(self.y_raw, eq or self.equilibrium, self.n, self.m)

    def to_dataframe(self) -> pd.DataFrame:
        """Spalten t, u_1..u_m, eps, yraw_1..yraw_{n+m} in CSV-Reihenfolge"""
        data = {"t": np.arange(self.T) * self.dt}
        for j in range(self.m):
            data[f"u_{j + 1}"] = self.u[:, j]
        data["eps"] = self.eps
        for j in range(self.n + self.m):
            data[f"yraw_{j + 1}"] = self.y_raw[:, j]
        return pd.DataFrame(data)

    def sidecar(self) -> dict:
        """
        JSON-Metadaten zur CSV-Datei (Version, Dimensionen, Gleichgewicht, Seed)

        metadata enthält u.a. die Sammel-Konfiguration; check_assumption_1 liest
        daraus delta_u.

        Returns:
            JSON-serialisierbares dict, von load_csv wieder gelesen
        """
        return {
            "version": 1,
            "n": self.n,
            "m": self.m,
            "dt": self.dt,
            "v_star": self.equilibrium.v_star,
            "s_star": self.equilibrium.s_star,
            "cav_set": list(self.cav_set),
            "kind": self.kind,
            "seed": self.seed,
            "metadata": self.metadata,
        }

    def save_csv(self, path):
        """
        Schreibt CSV (t,u_1..u_m,eps,yraw_1..yraw_{n+m}) plus JSON-Sidecar

        Raises:
            IOError: Schreiben fehlgeschlagen
        """
        path = Path(path)
        write_csv_atomic(self.to_dataframe(), path)
        sidecar_path = sidecar_path_for(path)
        temp_path = sidecar_path.with_suffix(".json.tmp")
        try:
            with open(temp_path, "w", encoding="utf-8") as f:
                json.dump(self.sidecar(), f, indent=2, ensure_ascii=False)
                f.flush()
                os.fsync(f.fileno())
            os.replace(temp_path, sidecar_path)
        except Exception as e:
            if temp_path.exists():
                temp_path.unlink()
            raise IOError(f"Fehler beim Speichern des Datensatz-Sidecars: {e}")

    @classmethod
    def load_csv(cls, path) -> "TrajectoryDataset":
        """
        Lädt einen Datensatz samt Sidecar

        Raises:
            IOError: Datei fehlt oder ist unlesbar
            ValueError: Spalten passen nicht zum Sidecar
        """
        path = Path(path)
        sidecar_path = sidecar_path_for(path)
        if not path.exists():
            raise IOError(f"Datensatz nicht gefunden: {path}")
        if not sidecar_path.exists():
            raise IOError(f"Sidecar nicht gefunden: {sidecar_path}")

        try:
            with open(sidecar_path, "r", encoding="utf-8") as f:
                meta = json.load(f)
            df = pd.read_csv(path, float_precision="round_trip")
        except json.JSONDecodeError as e:
            raise ValueError(f"Ungültiges Sidecar-JSON: {e}")
        except Exception as e:
            raise IOError(f"Fehler beim Laden des Datensatzes: {e}")

        if meta.get("version") != 1:
            raise ValueError(f"Unbekannte Datensatz-Version: {meta.get('version')}")

        n, m = int(meta["n"]), int(meta["m"])
        u_cols = [f"u_{j + 1}" for j in range(m)]
        y_cols = [f"yraw_{j + 1}" for j in range(n + m)]
        missing = [c for c in u_cols + ["eps"] + y_cols if c not in df.columns]
        if missing:
            raise ValueError(f"Spalten fehlen im Datensatz: {missing}")

        return cls(
            u=df[u_cols].to_numpy(),
            eps=df["eps"].to_numpy(),
            y_raw=df[y_cols].to_numpy(),
            dt=float(meta["dt"]),
            n=n,
            m=m,
            equilibrium=EquilibriumState(meta["v_star"], meta["s_star"]),
            cav_set=tuple(meta.get("cav_set", ())),
            kind=meta.get("kind", "straight"),
            seed=meta.get("seed"),
            metadata=meta.get("metadata", {}),
        )


def sidecar_path_for(path) -> Path:
    """dataset.csv -> dataset.json"""
    path = Path(path)
    return path.with_suffix(".json")


def build_hankel(signal, order: int) -> np.ndarray:
    """
    Hankel-Matrix der Tiefe order

    Spalte c enthält die Abtastwerte c..c+order-1 untereinander gestapelt.

    Args:
        signal: Folge von q-Vektoren (T x q) oder Skalaren (T)
        order: Tiefe l

    Returns:
        Matrix (q*l) x (T-l+1)

    Raises:
        ValueError: l < 1 oder l > T
    """
    X = np.asarray(signal, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T, q = X.shape
    if order < 1 or order > T:
        raise ValueError(f"Ordnung {order} ungültig für Signallänge {T}")
    # (T-l+1, q, l) -> (T-l+1, l, q) -> Spalten
    windows = sliding_window_view(X, order, axis=0)
    return windows.transpose(0, 2, 1).reshape(T - order + 1, order * q).T.copy()


def numerical_rank(H: np.ndarray) -> int:
    """Numerischer Rang mit Toleranz max_dim * sigma_max * 1e-10"""
    if H.size == 0:
        return 0
    sv = svdvals(H)
    if sv[0] == 0:
        return 0
    tol = max(H.shape) * sv[0] * RANK_RTOL
    return int(np.sum(sv > tol))


@dataclass(frozen=True)
class ExcitationReport:
    """Ergebnis einer Prüfung auf persistente Anregung"""
    satisfied: bool
    rank: int
    required_rank: int
    order: int
    reason: str = ""

    def format(self) -> str:
        status = "erfüllt" if self.satisfied else "NICHT erfüllt"
        text = f"Persistente Anregung der Ordnung {self.order}: {status} (Rang {self.rank}/{self.required_rank})"
        if self.reason:
            text += f" - {self.reason}"
        return text


def check_persistent_excitation(signal, order: int) -> ExcitationReport:
    """Prüft, ob die Hankel-Matrix der Tiefe order vollen Zeilenrang hat"""
    X = np.asarray(signal, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T, q = X.shape
    required = q * order
    columns = T - order + 1
    if order < 1 or columns < required:
        return ExcitationReport(
            satisfied=False, rank=0, required_rank=required, order=order,
            reason=f"zu wenige Spalten: {max(columns, 0)} < {required} (T={T})",
        )
    rank = numerical_rank(build_hankel(X, order))
    return ExcitationReport(satisfied=rank == required, rank=rank, required_rank=required, order=order)


def collection_input_excitation(dataset: TrajectoryDataset) -> Optional[float]:
    """
    Anregungsamplitude delta_u der CAV-Eingänge laut Sammel-Metadaten

    Returns:
        delta_u oder None, wenn der Datensatz keine Sammel-Metadaten trägt
    """
    collection = dataset.metadata.get("collection") or {}
    value = collection.get("delta_u")
    return None if value is None else float(value)


def check_assumption_1(dataset: TrajectoryDataset, dims: HankelDims) -> ExcitationReport:
    """
    Prüft col(u, eps) verschachtelt auf persistente Anregung der Ordnung T_ini+N+2n

    Ohne eigene Anregung der CAV-Eingänge (delta_u = 0 in den Sammel-Metadaten)
    sind u reine Rückführung der Ausgänge. Der Rang der nichtlinearen Daten ist
    dann numerisch trotzdem voll, die Prüfung gilt als nicht erfüllt.

    Raises:
        ValueError: u und eps haben verschiedene Längen
    """
    if dataset.u.shape[0] != dataset.eps.shape[0]:
        raise ValueError("u und eps haben verschiedene Längen")
    interleaved = np.hstack([dataset.u, dataset.eps[:, None]])
    report = check_persistent_excitation(interleaved, dims.T_ini + dims.N + 2 * dims.n)
    if report.satisfied and collection_input_excitation(dataset) == 0:
        report = replace(report, satisfied=False, reason="delta_u = 0: CAV-Eingänge ohne eigene Anregung")
    logger.info(report.format())
    return report


@dataclass(frozen=True)
class HankelBlocks:
    """Aufgeteilte Hankel-Matrizen Up/Uf, Ep/Ef, Yp/Yf"""
    Up: np.ndarray
    Uf: np.ndarray
    Ep: np.ndarray
    Ef: np.ndarray
    Yp: np.ndarray
    Yf: np.ndarray
    dims: HankelDims
    T: int

    def __post_init__(self):
        for name in ("Up", "Uf", "Ep", "Ef", "Yp", "Yf"):
            getattr(self, name).setflags(write=False)

    @property
    def L(self) -> int:
        """Anzahl der Spalten T - T_ini - N + 1"""
        return self.Up.shape[1]

    def past(self) -> np.ndarray:
        return np.vstack([self.Up, self.Ep, self.Yp])

    def future_inputs(self) -> np.ndarray:
        return np.vstack([self.Uf, self.Ef])

    def stacked(self) -> np.ndarray:
        """[Up; Ep; Yp; Uf; Ef; Yf]"""
        return np.vstack([self.Up, self.Ep, self.Yp, self.Uf, self.Ef, self.Yf])


def partition(dataset: TrajectoryDataset, eq: EquilibriumState, dims: HankelDims) -> HankelBlocks:
    """
    Baut die Hankel-Matrizen der Tiefe T_ini+N und teilt sie auf

    Ausgänge werden mit eq zentriert. eps wird auf eq umgerechnet, falls
    eq vom Sammel-Gleichgewicht abweicht.

    Raises:
        ValueError: Dimensionen passen nicht oder Datensatz zu kurz
    """
    if (dataset.n, dataset.m) != (dims.n, dims.m):
        raise ValueError(f"Datensatz (n={dataset.n}, m={dataset.m}) passt nicht zu {dims}")
    if dataset.T < dims.depth:
        raise ValueError(f"Datensatz zu kurz: T={dataset.T} < T_ini+N={dims.depth}")

    y = dataset.error_output(eq)
    eps = dataset.eps + dataset.equilibrium.v_star - eq.v_star

    depth = dims.depth
    split_u = dims.m * dims.T_ini
    split_y = dims.p * dims.T_ini
    Hu = build_hankel(dataset.u, depth)
    He = build_hankel(eps, depth)
    Hy = build_hankel(y, depth)

    return HankelBlocks(
        Up=Hu[:split_u], Uf=Hu[split_u:],
        Ep=He[:dims.T_ini], Ef=He[dims.T_ini:],
        Yp=Hy[:split_y], Yf=Hy[split_y:],
        dims=dims, T=dataset.T,
    )


@dataclass(frozen=True)
class Prediction:
    """Vorhersage über die Hankel-Darstellung"""
    y: np.ndarray
    g: np.ndarray
    residual: float


def predict_future_output(blocks: HankelBlocks, u_ini, eps_ini, y_ini, u, eps) -> Prediction:
    """
    Sagt den zukünftigen Ausgang aus Vergangenheit und zukünftigen Eingängen vorher

    Löst [Up; Ep; Yp; Uf; Ef] g = [u_ini; eps_ini; y_ini; u; eps] nach kleinsten
    Quadraten, y = Yf g. residual ist das relative Residuum.

    Vektoren zeitschrittweise: u_ini (T_ini x m), y_ini (T_ini x (n+m)), u (N x m).
    """
    d = blocks.dims
    lhs = np.vstack([blocks.past(), blocks.future_inputs()])
    rhs = np.concatenate([
        np.asarray(u_ini, dtype=float).reshape(-1),
        np.asarray(eps_ini, dtype=float).reshape(-1),
        np.asarray(y_ini, dtype=float).reshape(-1),
        np.asarray(u, dtype=float).reshape(-1),
        np.asarray(eps, dtype=float).reshape(-1),
    ])
    if rhs.shape[0] != lhs.shape[0]:
        raise ValueError(f"Rechte Seite hat Länge {rhs.shape[0]}, erwartet {lhs.shape[0]}")

    g, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    norm = np.linalg.norm(rhs)
    residual = float(np.linalg.norm(lhs @ g - rhs) / norm) if norm > 0 else float(np.linalg.norm(lhs @ g))
    return Prediction(y=(blocks.Yf @ g).reshape(d.N, d.p), g=g, residual=residual)
