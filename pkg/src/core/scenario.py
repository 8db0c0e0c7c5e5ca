"""
Szenario-Konfiguration für DeepLccLab
Beschreibt ein komplettes Experiment und speichert/lädt es als JSON
"""
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from .controller import DeepLccConfig
from .fleet import FleetConfig, OvmParams, Topology
from .ovm import ovm_desired_velocity
from .simulator import (
    CollectionConfig,
    DisturbanceSchedule,
    ImperfectionConfig,
    RingPhasePlan,
    RingTrack,
    DEFAULT_DT,
)

SCENARIO_VERSION = 1

# Fälle des Vergleichs auf der geraden Strecke
STRAIGHT_CAV_SETS = [(), (1,), (2,), (1, 3), (2, 4)]


@dataclass
class ScenarioConfig:
    """
    Vollständige Experimentbeschreibung

    Die Gewichte w_s und w_u in controller gelten pro CAV und werden mit
    scale_weights_by_cav_count durch die CAV-Anzahl geteilt.
    """
    kind: str
    fleet: FleetConfig
    ovm: OvmParams
    controller: DeepLccConfig = field(default_factory=DeepLccConfig)
    collection: CollectionConfig = field(default_factory=CollectionConfig)
    disturbance: DisturbanceSchedule = field(default_factory=DisturbanceSchedule)
    imperfections: ImperfectionConfig = field(default_factory=ImperfectionConfig)
    ring_plan: RingPhasePlan = field(default_factory=RingPhasePlan)
    ring_track: RingTrack = field(default_factory=RingTrack)
    name: str = ""
    duration: float = 60.0
    dt: float = DEFAULT_DT
    seed: int = 0
    asve_window: Optional[Tuple[float, float]] = None
    scale_weights_by_cav_count: bool = True
    version: int = SCENARIO_VERSION

    def __post_init__(self):
        if self.kind not in ("straight", "ring"):
            raise ValueError(f"Unbekannte Szenario-Art: {self.kind}")
        expected = Topology.OPEN if self.kind == "straight" else Topology.RING
        if self.fleet.topology is not expected:
            raise ValueError(f"Szenario '{self.kind}' benötigt Topologie {expected.value}")
        if self.dt <= 0 or self.duration <= 0:
            raise ValueError(f"dt und duration müssen positiv sein: dt={self.dt}, duration={self.duration}")
        if self.asve_window is not None:
            self.asve_window = tuple(float(t) for t in self.asve_window)
        if not self.name:
            self.name = self.kind

    @classmethod
    def straight_road(cls, cav_set=(2,), seed: int = 0) -> "ScenarioConfig":
        """Gerade Strecke: 5 Folgefahrzeuge hinter dem Führungsfahrzeug"""
        return cls(
            kind="straight",
            fleet=FleetConfig(n=5, cav_set=tuple(cav_set), topology=Topology.OPEN, vehicle_length=0.20),
            ovm=OvmParams.straight_road(),
            duration=60.0,
            seed=seed,
            name="straight",
        )

    @classmethod
    def ring_road(cls, seed: int = 0) -> "ScenarioConfig":
        """
        Ringstraße: 9 Fahrzeuge, CAV 5, Regelungsfenster 3..7

        Abstände von Referenzpunkt zu Referenzpunkt (Fahrzeuglänge 0).
        """
        return cls(
            kind="ring",
            fleet=FleetConfig(n=9, cav_set=(5,), topology=Topology.RING,
                              controlled_subset=(3, 7), vehicle_length=0.0),
            ovm=OvmParams.ring_road(),
            duration=RingPhasePlan().t_end,
            seed=seed,
            name="ring",
        )

    def with_cav_set(self, cav_set) -> "ScenarioConfig":
        """
        Kopie mit anderer CAV-Menge

        Raises:
            ValueError: Menge passt nicht zur Kolonne (siehe FleetConfig)
        """
        return replace(self, fleet=self.fleet.with_cav_set(cav_set))

    def effective_controller(self) -> DeepLccConfig:
        """Reglerparameter mit auf die CAV-Anzahl skalierten Gewichten"""
        m = self.fleet.m
        if not self.scale_weights_by_cav_count or m <= 1:
            return self.controller
        return replace(self.controller, w_s=self.controller.w_s / m, w_u=self.controller.w_u / m)

    def prescribed_velocity(self) -> float:
        """Vorgegebene Gleichgewichtsgeschwindigkeit für die ASVE"""
        if self.kind == "straight":
            return self.disturbance.v_c
        return float(ovm_desired_velocity(self.ring_track.uniform_gap(self.fleet), self.ovm))

    def run_duration(self) -> float:
        """Simulationsdauer in s: Ende des Phasenplans auf dem Ring, sonst duration"""
        return self.ring_plan.t_end if self.kind == "ring" else self.duration

    def with_overrides(self, disable_noise: bool = False, disable_delay: bool = False,
                       tau: Optional[float] = None, seed: Optional[int] = None) -> "ScenarioConfig":
        """Übernimmt CLI-Schalter in eine Kopie der Konfiguration"""
        imp = self.imperfections
        if disable_noise:
            imp = replace(imp, noise_enabled=False)
        if disable_delay:
            imp = replace(imp, delay_enabled=False)
        if tau is not None:
            imp = replace(imp, tau=tau)
        return replace(self, imperfections=imp, seed=self.seed if seed is None else seed)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "name": self.name,
            "kind": self.kind,
            "duration": self.duration,
            "dt": self.dt,
            "seed": self.seed,
            "asve_window": list(self.asve_window) if self.asve_window else None,
            "scale_weights_by_cav_count": self.scale_weights_by_cav_count,
            "fleet": self.fleet.to_dict(),
            "ovm": self.ovm.to_dict(),
            "controller": self.controller.to_dict(),
            "collection": self.collection.to_dict(),
            "disturbance": self.disturbance.to_dict(),
            "imperfections": self.imperfections.to_dict(),
            "ring_plan": self.ring_plan.to_dict(),
            "ring_track": self.ring_track.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ScenarioConfig":
        """
        Raises:
            ValueError: unbekannte Version oder ungültige Werte
        """
        version = data.get("version", SCENARIO_VERSION)
        if version != SCENARIO_VERSION:
            raise ValueError(f"Unbekannte Szenario-Version: {version}")
        try:
            return cls(
                kind=data["kind"],
                fleet=FleetConfig.from_dict(data["fleet"]),
                ovm=OvmParams(**data.get("ovm", {})),
                controller=DeepLccConfig.from_dict(data.get("controller", {})),
                collection=CollectionConfig.from_dict(data.get("collection", {})),
                disturbance=DisturbanceSchedule.from_dict(data.get("disturbance", {})),
                imperfections=ImperfectionConfig.from_dict(data.get("imperfections", {})),
                ring_plan=RingPhasePlan.from_dict(data.get("ring_plan", {})),
                ring_track=RingTrack.from_dict(data.get("ring_track", {})),
                name=data.get("name", ""),
                duration=data.get("duration", 60.0),
                dt=data.get("dt", DEFAULT_DT),
                seed=data.get("seed", 0),
                asve_window=tuple(data["asve_window"]) if data.get("asve_window") else None,
                scale_weights_by_cav_count=data.get("scale_weights_by_cav_count", True),
                version=version,
            )
        except KeyError as e:
            raise ValueError(f"Pflichtfeld fehlt in der Szenario-Datei: {e}")
        except TypeError as e:
            raise ValueError(f"Ungültiger Eintrag in der Szenario-Datei: {e}")


class ScenarioManager:
    """
    Speichert und lädt Szenario-Dateien (JSON)

    Standard-Dateiname: deeplcc_scenario.json
    """

    SCENARIO_FILENAME = "deeplcc_scenario.json"

    def __init__(self, path: str = None):
        """
        Args:
            path: Datei oder Verzeichnis (Standard: aktuelles Verzeichnis)
        """
        path = Path(path) if path is not None else Path(".")
        if path.suffix.lower() != ".json":
            path = path / self.SCENARIO_FILENAME
        self.scenario_path = path

    def save(self, config: ScenarioConfig):
        """
        Speichert das Szenario als JSON (atomic write)

        Raises:
            IOError: Speichern fehlgeschlagen
        """
        self.scenario_path.parent.mkdir(parents=True, exist_ok=True)
        temp_path = self.scenario_path.with_suffix('.tmp')

        try:
            with open(temp_path, 'w', encoding='utf-8') as f:
                json.dump(config.to_dict(), f, indent=2, ensure_ascii=False)
                f.flush()
                os.fsync(f.fileno())

            os.replace(temp_path, self.scenario_path)

        except Exception as e:
            if temp_path.exists():
                try:
                    temp_path.unlink()
                except Exception:
                    pass
            raise IOError(f"Fehler beim Speichern des Szenarios: {e}")

    def load(self) -> ScenarioConfig:
        """
        Lädt das Szenario

        Raises:
            IOError: Datei fehlt oder ist unlesbar
            ValueError: ungültiges JSON oder ungültige Werte
        """
        if not self.exists():
            raise IOError(f"Szenario-Datei nicht gefunden: {self.scenario_path}")

        try:
            with open(self.scenario_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Ungültiges JSON-Format in Szenario-Datei: {e}")
        except OSError as e:
            raise IOError(f"Fehler beim Laden des Szenarios: {e}")

        return ScenarioConfig.from_dict(data)

    def exists(self) -> bool:
        return self.scenario_path.exists()

    def get_scenario_path(self) -> str:
        return str(self.scenario_path.absolute())

    def __repr__(self):
        return f"ScenarioManager(scenario_path={self.scenario_path})"
