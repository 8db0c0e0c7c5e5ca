"""
Domänentypen für den Mischverkehr
Fahrzeugzustand, Flottenkonfiguration, OVM-Parameter, Gleichgewicht und Systemsignale
"""
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Optional, Tuple, List

import numpy as np


class Topology(Enum):
    """Streckentopologie"""
    OPEN = "open"   # Gerade Strecke mit Führungsfahrzeug (Index 0)
    RING = "ring"   # Ringstraße, Fahrzeug 1 folgt Fahrzeug n


@dataclass(frozen=True)
class VehicleState:
    """
    Zustand eines Fahrzeugs zu einem Zeitpunkt

    Abstand = Lücke zwischen eigener Front und Heck des Vorderfahrzeugs
    """
    position: float
    velocity: float
    acceleration: float = 0.0
    spacing: float = float("nan")


@dataclass(frozen=True)
class OvmParams:
    """
    Parameter des Optimal Velocity Model

    alpha/beta in 1/s, Abstände in m, v_max in m/s
    """
    alpha: float = 1.2
    beta: float = 1.8
    s_st: float = 0.5
    s_go: float = 1.1
    v_max: float = 0.6

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"OVM-Verstärkungen müssen positiv sein: alpha={self.alpha}, beta={self.beta}")
        if not 0 < self.s_st < self.s_go:
            raise ValueError(f"Ungültige Abstände: 0 < s_st={self.s_st} < s_go={self.s_go} verletzt")
        if self.v_max <= 0:
            raise ValueError(f"v_max muss positiv sein: {self.v_max}")

    @classmethod
    def straight_road(cls) -> "OvmParams":
        """Parametersatz für die gerade Strecke"""
        return cls(alpha=1.2, beta=1.8)

    @classmethod
    def ring_road(cls) -> "OvmParams":
        """Parametersatz für die Ringstraße (doppelte Verstärkungen)"""
        return cls(alpha=2.4, beta=3.6)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EquilibriumState:
    """Gleichgewichtspunkt (v*, s*) des gleichförmigen Verkehrsflusses"""
    v_star: float
    s_star: float

    def __post_init__(self):
        if self.v_star < 0:
            raise ValueError(f"Gleichgewichtsgeschwindigkeit negativ: {self.v_star}")
        if self.s_star <= 0:
            raise ValueError(f"Gleichgewichtsabstand nicht positiv: {self.s_star}")

    def check_against(self, p: OvmParams, tol: float = 1e-9):
        """
        Prüft den Gleichgewichtspunkt gegen die OVM-Parameter

        Raises:
            ValueError: v* oder s* außerhalb des Definitionsbereichs
        """
        if not -tol <= self.v_star <= p.v_max + tol:
            raise ValueError(f"v*={self.v_star} außerhalb [0, {p.v_max}]")
        if not p.s_st - tol <= self.s_star <= p.s_go + tol:
            raise ValueError(f"s*={self.s_star} außerhalb [{p.s_st}, {p.s_go}]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FleetConfig:
    """
    Flottenkonfiguration

    Offene Strecke: Führungsfahrzeug 0, Folgefahrzeuge 1..n.
    Ringstraße: Fahrzeuge 1..n, Fahrzeug i folgt i-1 und Fahrzeug 1 folgt n.
    controlled_subset = (Kopf, letztes Fahrzeug) legt das Fenster fest,
    das im DeeP-LCC-Ansatz berücksichtigt wird (nur Ring).
    """
    n: int
    cav_set: Tuple[int, ...] = ()
    topology: Topology = Topology.OPEN
    controlled_subset: Optional[Tuple[int, int]] = None
    vehicle_length: float = 0.20

    def __post_init__(self):
        # Tuples erzwingen (JSON liefert Listen)
        object.__setattr__(self, "cav_set", tuple(int(i) for i in self.cav_set))
        if self.controlled_subset is not None:
            object.__setattr__(self, "controlled_subset", tuple(int(i) for i in self.controlled_subset))
        if isinstance(self.topology, str):
            object.__setattr__(self, "topology", Topology(self.topology))

        if self.n < 1:
            raise ValueError(f"Mindestens ein Folgefahrzeug nötig: n={self.n}")
        if self.vehicle_length < 0:
            raise ValueError(f"Fahrzeuglänge negativ: {self.vehicle_length}")

        S = self.cav_set
        if any(b <= a for a, b in zip(S, S[1:])):
            raise ValueError(f"CAV-Menge muss streng aufsteigend sein: {S}")
        if S and (S[0] < 1 or S[-1] > self.n):
            raise ValueError(f"CAV-Index außerhalb 1..{self.n}: {S}")

        if self.topology is Topology.RING:
            if self.controlled_subset is None:
                raise ValueError("Ringstraße benötigt controlled_subset (Kopf, letztes Fahrzeug)")
            head, last = self.controlled_subset
            if not 1 <= head < last <= self.n:
                raise ValueError(f"Ungültiges Regelungsfenster {self.controlled_subset} für n={self.n}")
            outside = [i for i in S if not head < i <= last]
            if outside:
                raise ValueError(f"CAVs {outside} liegen nicht hinter dem Kopf im Fenster {self.controlled_subset}")

    @property
    def m(self) -> int:
        """Anzahl der CAVs"""
        return len(self.cav_set)

    @property
    def vehicle_ids(self) -> List[int]:
        """Alle Fahrzeug-IDs in Fahrtrichtung (vorderstes zuerst)"""
        if self.topology is Topology.OPEN:
            return list(range(0, self.n + 1))
        return list(range(1, self.n + 1))

    def formulation_head(self) -> int:
        """ID des Fahrzeugs, das im Regler als Führungsfahrzeug dient"""
        if self.topology is Topology.OPEN:
            return 0
        return self.controlled_subset[0]

    def formulation_followers(self) -> List[int]:
        """IDs der Folgefahrzeuge im Regler-Ansatz"""
        if self.topology is Topology.OPEN:
            return list(range(1, self.n + 1))
        head, last = self.controlled_subset
        return list(range(head + 1, last + 1))

    def local_cav_indices(self) -> List[int]:
        """CAV-Positionen relativ zum Kopf (1-basiert, wie S im Regler-Ansatz)"""
        head = self.formulation_head()
        return [i - head for i in self.cav_set]

    def formulation_dims(self) -> Tuple[int, int]:
        """(n, m) des Regler-Ansatzes"""
        return len(self.formulation_followers()), self.m

    def with_cav_set(self, cav_set) -> "FleetConfig":
        """Kopie mit anderer CAV-Menge"""
        return FleetConfig(
            n=self.n,
            cav_set=tuple(cav_set),
            topology=self.topology,
            controlled_subset=self.controlled_subset,
            vehicle_length=self.vehicle_length,
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "cav_set": list(self.cav_set),
            "topology": self.topology.value,
            "controlled_subset": list(self.controlled_subset) if self.controlled_subset else None,
            "vehicle_length": self.vehicle_length,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FleetConfig":
        return cls(
            n=data["n"],
            cav_set=tuple(data.get("cav_set", ())),
            topology=Topology(data.get("topology", "open")),
            controlled_subset=tuple(data["controlled_subset"]) if data.get("controlled_subset") else None,
            vehicle_length=data.get("vehicle_length", 0.20),
        )


@dataclass(frozen=True)
class SystemSignals:
    """
    Signale des Regler-Ansatzes zu einem Zeitschritt

    u: Beschleunigungen der CAVs, epsilon: v_0 - v*,
    y: Fehlerausgang, y_raw: Geschwindigkeiten der Folger, danach CAV-Abstände
    """
    u: np.ndarray
    epsilon: float
    y: np.ndarray
    y_raw: np.ndarray

    def __post_init__(self):
        for name in ("u", "y", "y_raw"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.y.shape != self.y_raw.shape:
            raise ValueError(f"y und y_raw haben verschiedene Länge: {self.y.shape} vs {self.y_raw.shape}")

    @classmethod
    def from_raw(cls, u, v0: float, y_raw, eq: EquilibriumState, n: int, m: int) -> "SystemSignals":
        """Baut die Signale aus Rohmessungen und dem aktuellen Gleichgewicht"""
        return cls(
            u=np.asarray(u, dtype=float),
            epsilon=float(v0) - eq.v_star,
            y=raw_to_error_output(y_raw, eq, n, m),
            y_raw=np.asarray(y_raw, dtype=float),
        )


def _equilibrium_offset(eq: EquilibriumState, n: int, m: int) -> np.ndarray:
    return np.concatenate([np.full(n, eq.v_star), np.full(m, eq.s_star)])


def raw_to_error_output(y_raw, eq: EquilibriumState, n: int, m: int) -> np.ndarray:
    """
    Rohausgang -> Fehlerausgang

    Akzeptiert einen Vektor der Länge n+m oder eine Matrix mit n+m Spalten
    (eine Zeile pro Abtastschritt).

    Raises:
        ValueError: Falsche Dimension
    """
    y_raw = np.asarray(y_raw, dtype=float)
    if y_raw.shape[-1] != n + m:
        raise ValueError(f"Rohausgang hat Länge {y_raw.shape[-1]}, erwartet n+m={n + m}")
    return y_raw - _equilibrium_offset(eq, n, m)


def error_to_raw_output(y, eq: EquilibriumState, n: int, m: int) -> np.ndarray:
    """
    Fehlerausgang -> Rohausgang (Umkehrung von raw_to_error_output)

    Die Umkehrung ist bis auf Rundung exakt: |error_to_raw(raw_to_error(y)) - y|
    <= 4 * eps_mach * max(1, |y|, |y*|) elementweise.

    Raises:
        ValueError: Falsche Dimension
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != n + m:
        raise ValueError(f"Fehlerausgang hat Länge {y.shape[-1]}, erwartet n+m={n + m}")
    return y + _equilibrium_offset(eq, n, m)
