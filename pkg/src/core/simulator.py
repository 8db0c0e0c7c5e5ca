"""
Zeitdiskreter Mischverkehrs-Simulator
Störprofile des Führungsfahrzeugs, Mess-Imperfektionen, gerade Strecke, Ringstraße
und Offline-Datensammlung
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, asdict, field
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .controller import DeepLccConfig, DeepLccController, PastBuffer
from .fleet import EquilibriumState, FleetConfig, OvmParams, SystemSignals, Topology
from .hankel import HankelBlocks, TrajectoryDataset
from .ovm import ovm_acceleration, ovm_desired_velocity, equilibrium_spacing_inverse
from .sim_log import SimulationLog

logger = logging.getLogger(__name__)

DEFAULT_DT = 0.05


class CollisionError(RuntimeError):
    """Abstand <= 0 während einer Simulation, die keinen Fehlschlag zulässt"""

    def __init__(self, message: str, t: float = float("nan")):
        super().__init__(message)
        self.t = t


class DisturbanceMode(Enum):
    """Geschwindigkeitsprofil des Führungsfahrzeugs"""
    CONSTANT = "constant"
    SEGMENT_SINUSOID = "segment_sinusoid"
    IDLE_START = "idle_start"


@dataclass(frozen=True)
class DisturbanceSchedule:
    """
    Störprofil der geraden Strecke

    Runde von lap_length Metern in vier gleiche Segmente; gestört wird
    zwischen segment_start und segment_end (Standard: zweites Segment).
    IDLE_START: Anfahren aus dem Stand, linear auf v_c über ramp_time.
    """
    mode: DisturbanceMode = DisturbanceMode.SEGMENT_SINUSOID
    v_c: float = 0.3
    amplitude: float = 0.13
    lap_length: float = 17.5
    segment_start: float = 4.375
    segment_end: float = 8.75
    ramp_time: float = 5.0

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", DisturbanceMode(self.mode))
        if self.v_c <= 0:
            raise ValueError(f"v_c muss positiv sein: {self.v_c}")
        if not 0 <= self.amplitude < self.v_c:
            raise ValueError(f"Amplitude {self.amplitude} muss in [0, v_c={self.v_c}) liegen")
        if not 0 <= self.segment_start < self.segment_end <= self.lap_length:
            raise ValueError(f"Ungültiges Störsegment [{self.segment_start}, {self.segment_end}] "
                             f"für Runde {self.lap_length}")
        if self.ramp_time <= 0:
            raise ValueError(f"ramp_time muss positiv sein: {self.ramp_time}")

    @property
    def segment_length(self) -> float:
        return self.segment_end - self.segment_start

    def to_dict(self) -> dict:
        data = asdict(self)
        data["mode"] = self.mode.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "DisturbanceSchedule":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})


def head_velocity(position: float, sched: DisturbanceSchedule, t: float = 0.0) -> float:
    """
    Sollgeschwindigkeit des Führungsfahrzeugs an einer Streckenposition

    Im Störsegment v_c - A*sin(4*pi*d/d_seg) mit d = Abstand zum Segmentanfang,
    sonst v_c.
    """
    if sched.mode is DisturbanceMode.CONSTANT:
        return sched.v_c
    if sched.mode is DisturbanceMode.IDLE_START:
        return sched.v_c * min(1.0, max(t, 0.0) / sched.ramp_time)

    d = math.fmod(position, sched.lap_length)
    if d < 0:
        d += sched.lap_length
    d -= sched.segment_start
    if 0 <= d < sched.segment_length:
        return sched.v_c - sched.amplitude * math.sin(4 * math.pi * d / sched.segment_length)
    return sched.v_c


@dataclass(frozen=True)
class ImperfectionConfig:
    """
    Messrauschen, Verzögerungen und Aktor-Trägheit

    Rechenverzögerung pro CAV-Anzahl in Sekunden, über zwei CAVs linear
    extrapoliert.
    """
    velocity_noise_mean: float = -0.0010
    velocity_noise_std: float = 0.0054
    spacing_noise_mean: float = 0.0
    spacing_noise_std: float = 0.0025
    localization_delay_mean: float = 0.04955
    localization_delay_std: float = 0.00139
    comm_delay_mean: float = 0.00171
    comm_delay_std: float = 0.00066
    computation_delays: Dict[int, float] = field(default_factory=lambda: {1: 0.29280, 2: 0.40569})
    tau: float = 0.12
    noise_enabled: bool = True
    delay_enabled: bool = True
    computation_delay_enabled: bool = True
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "computation_delays",
                           {int(k): float(v) for k, v in self.computation_delays.items()})
        for name in ("velocity_noise_std", "spacing_noise_std", "localization_delay_std", "comm_delay_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} darf nicht negativ sein: {getattr(self, name)}")
        if self.tau < 0:
            raise ValueError(f"tau darf nicht negativ sein: {self.tau}")
        if any(v < 0 for v in self.computation_delays.values()):
            raise ValueError(f"Negative Rechenverzögerung: {self.computation_delays}")

    @classmethod
    def disabled(cls) -> "ImperfectionConfig":
        """Ideale Messung ohne Verzögerung und ohne Aktor-Trägheit"""
        return cls(tau=0.0, noise_enabled=False, delay_enabled=False, computation_delay_enabled=False)

    def computation_delay(self, m: int) -> float:
        """Mittlere Rechenverzögerung in Sekunden für m CAVs"""
        if m <= 0 or not self.computation_delays:
            return 0.0
        if m in self.computation_delays:
            return self.computation_delays[m]
        known = sorted(self.computation_delays)
        if len(known) == 1:
            return self.computation_delays[known[0]]
        lo, hi = known[-2], known[-1]
        slope = (self.computation_delays[hi] - self.computation_delays[lo]) / (hi - lo)
        if m < known[0]:
            return self.computation_delays[known[0]]
        return self.computation_delays[hi] + slope * (m - hi)

    def computation_delay_steps(self, m: int, dt: float) -> int:
        """Anzahl der Schritte, die nach jedem QP den alten Befehl halten"""
        if not (self.delay_enabled and self.computation_delay_enabled):
            return 0
        return int(math.ceil(self.computation_delay(m) / dt - 1e-9))

    def to_dict(self) -> dict:
        data = asdict(self)
        data["computation_delays"] = {str(k): v for k, v in self.computation_delays.items()}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ImperfectionConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class CollectionConfig:
    """
    Anregung der Offline-Datensammlung

    v_r ist die Referenzgeschwindigkeit des Fensterkopfs auf dem Ring. None:
    Gleichgewichtsgeschwindigkeit des gleichmäßigen Abstands (ring_reference).
    """
    delta_eps: float = 0.05
    delta_u: float = 0.2
    k_r: float = 8.0
    v_r: Optional[float] = None
    v_c: float = 0.3
    T: int = 1500

    def __post_init__(self):
        if self.delta_eps < 0 or self.delta_u < 0:
            raise ValueError(f"Anregungsbreiten dürfen nicht negativ sein: "
                             f"delta_eps={self.delta_eps}, delta_u={self.delta_u}")
        if self.T < 1:
            raise ValueError(f"T muss positiv sein: {self.T}")
        if self.v_r is not None and self.v_r <= 0:
            raise ValueError(f"v_r muss positiv sein: {self.v_r}")

    def ring_reference(self, fleet: FleetConfig, p: OvmParams, track: "RingTrack") -> float:
        """
        Referenz- und Gleichgewichtsgeschwindigkeit der Ring-Sammlung

        Auf dem geschlossenen Ring ist der mittlere Abstand fest, das Kollektiv
        fährt daher im Mittel V(Umfang/n - L). Ein einzelner Kopf mit
        Rückführung auf ein anderes v_r verschiebt dieses Gleichgewicht kaum.

        Args:
            fleet: Ring-Flotte
            p: OVM-Parameter
            track: Geometrie des Rings

        Returns:
            float: v_r falls gesetzt, sonst V(gleichmäßiger Abstand)
        """
        if self.v_r is not None:
            return float(self.v_r)
        return float(ovm_desired_velocity(track.uniform_gap(fleet), p))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CollectionConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class RingPhasePlan:
    """
    Phasen des Ring-Experiments

    a: [0, t1) Anfahren, b: [t1, t2) nur HDVs, c: [t2, t3) DeeP-LCC aktiv,
    d: [t3, t_end) wieder nur HDVs
    """
    t1: float = 20.0
    t2: float = 68.85
    t3: float = 139.05
    t_end: float = 200.0

    def __post_init__(self):
        if not 0 <= self.t1 < self.t2 < self.t3 < self.t_end:
            raise ValueError(f"Phasenzeiten müssen 0 <= t1 < t2 < t3 < t_end erfüllen: {self}")

    def phase_at(self, t: float) -> str:
        """Phase a-d zum Zeitpunkt t; Grenzen t1, t2, t3 gehören zur jeweils späteren Phase"""
        if t < self.t1:
            return "a"
        if t < self.t2:
            return "b"
        if t < self.t3:
            return "c"
        return "d"

    def control_active(self, t: float) -> bool:
        """Regler aktiv nur in Phase c (t2 <= t < t3)"""
        return self.t2 <= t < self.t3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RingPhasePlan":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class RingTrack:
    """Geometrie und Startbedingung der Ringstraße"""
    circumference: float = 6.77
    start_velocity: float = 0.05
    spacing_jitter_std: float = 0.02

    def __post_init__(self):
        if self.circumference <= 0:
            raise ValueError(f"Umfang muss positiv sein: {self.circumference}")
        if self.start_velocity < 0 or self.spacing_jitter_std < 0:
            raise ValueError(f"Ungültige Startbedingung: {self}")

    def uniform_gap(self, fleet: FleetConfig) -> float:
        """Gleichmäßiger Abstand bei n Fahrzeugen"""
        return self.circumference / fleet.n - fleet.vehicle_length

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RingTrack":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})


def command_velocity(v_prev_measured, a_cmd, dt_real: float):
    """
    Beschleunigungsbefehl -> Geschwindigkeitsbefehl: v + a*dt

    Raises:
        ValueError: dt <= 0
    """
    if dt_real <= 0:
        raise ValueError(f"dt muss positiv sein: {dt_real}")
    return v_prev_measured + a_cmd * dt_real


def apply_actuator_lag(v_cmd, v_actual, tau: float, dt: float):
    """
    Aktor-Trägheit erster Ordnung: v + dt/(tau+dt) * (v_cmd - v)

    tau = 0 liefert exakt v_cmd.
    """
    if tau < 0:
        raise ValueError(f"tau darf nicht negativ sein: {tau}")
    if tau == 0:
        return np.array(v_cmd, dtype=float) if np.ndim(v_cmd) else float(v_cmd)
    return v_actual + dt / (tau + dt) * (v_cmd - v_actual)


class MeasurementPipeline:
    """
    Messkette: Rauschen auf Geschwindigkeit und Abstand, danach Verzögerung

    Lokalisierungsverzögerung wirkt auf den Abstand, Funkverzögerung auf die
    Geschwindigkeit. Verzögerungen werden auf ganze Schritte gerundet.
    """

    def __init__(self, imp: ImperfectionConfig, rng: np.random.Generator, dt: float, count: int):
        self.imp = imp
        self.rng = rng
        self.dt = dt
        self.count = count
        worst = max(imp.localization_delay_mean + 6 * imp.localization_delay_std,
                    imp.comm_delay_mean + 6 * imp.comm_delay_std)
        self.depth = int(math.ceil(worst / dt)) + 1
        self._vel = deque(maxlen=self.depth)
        self._spacing = deque(maxlen=self.depth)

    def sample_velocity_noise(self, size) -> np.ndarray:
        return self.rng.normal(self.imp.velocity_noise_mean, self.imp.velocity_noise_std, size)

    def sample_spacing_noise(self, size) -> np.ndarray:
        return self.rng.normal(self.imp.spacing_noise_mean, self.imp.spacing_noise_std, size)

    def _delay_steps(self, mean: float, std: float) -> np.ndarray:
        raw = self.rng.normal(mean, std, self.count)
        return np.clip(np.rint(raw / self.dt), 0, self.depth - 1).astype(int)

    def measure(self, velocities: np.ndarray, spacings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Liefert gemessene (Geschwindigkeiten, Abstände) des aktuellen Schritts"""
        if self.imp.noise_enabled:
            velocities = velocities + self.sample_velocity_noise(self.count)
            spacings = spacings + self.sample_spacing_noise(self.count)
        else:
            velocities = velocities.copy()
            spacings = spacings.copy()

        if not self.imp.delay_enabled:
            return velocities, spacings

        self._vel.append(velocities)
        self._spacing.append(spacings)
        d_vel = self._delay_steps(self.imp.comm_delay_mean, self.imp.comm_delay_std)
        d_sp = self._delay_steps(self.imp.localization_delay_mean, self.imp.localization_delay_std)
        return self._delayed(self._vel, d_vel), self._delayed(self._spacing, d_sp)

    @staticmethod
    def _delayed(history: deque, delays: np.ndarray) -> np.ndarray:
        available = len(history) - 1
        out = np.empty_like(history[-1])
        for j, d in enumerate(delays):
            out[j] = history[-1 - min(int(d), available)][j]
        return out


class MixedTrafficSimulator:
    """
    Fahrzeugkette mit Vorwärts-Euler bei festem dt

    Alle Fahrzeuge außer dem Führungsfahrzeug der offenen Strecke erhalten
    eine Beschleunigung, die über v_mess + a*dt und die Aktor-Trägheit
    umgesetzt wird. Das Führungsfahrzeug folgt direkt seinem Profil.
    """

    def __init__(self, fleet: FleetConfig, p: OvmParams, imp: ImperfectionConfig, dt: float,
                 rng: np.random.Generator, positions, velocities,
                 head_profile: Optional[Callable[[float, float, int], float]] = None,
                 circumference: Optional[float] = None):
        self.fleet = fleet
        self.p = p
        self.imp = imp
        self.dt = dt
        self.rng = rng
        self.ids = fleet.vehicle_ids
        self.pos = np.array(positions, dtype=float)
        self.vel = np.array(velocities, dtype=float)
        self.open = fleet.topology is Topology.OPEN
        self.head_profile = head_profile
        self.circumference = circumference
        self.step_index = 0
        self.pipeline = MeasurementPipeline(imp, rng, dt, len(self.ids))
        if self.open and head_profile is None:
            raise ValueError("Offene Strecke benötigt ein Profil für das Führungsfahrzeug")
        if not self.open and circumference is None:
            raise ValueError("Ringstraße benötigt den Umfang")

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    def column(self, vehicle_id: int) -> int:
        return self.ids.index(vehicle_id)

    def spacings(self) -> np.ndarray:
        L = self.fleet.vehicle_length
        s = np.empty_like(self.pos)
        s[1:] = self.pos[:-1] - self.pos[1:] - L
        if self.open:
            s[0] = np.nan
        else:
            s[0] = self.pos[-1] + self.circumference - self.pos[0] - L
        return s

    def measure(self) -> Tuple[np.ndarray, np.ndarray]:
        """Gemessene (Geschwindigkeiten, Abstände) mit Rauschen und Verzögerung"""
        return self.pipeline.measure(self.vel, self.spacings())

    def ovm_accelerations(self, v_meas: np.ndarray, s_meas: np.ndarray) -> np.ndarray:
        """OVM-Beschleunigung aller Fahrzeuge aus Messwerten (Führungsfahrzeug: NaN)"""
        acc = np.asarray(ovm_acceleration(s_meas, v_meas, np.roll(v_meas, 1), self.p), dtype=float)
        if self.open:
            acc[0] = np.nan
        return acc

    def advance(self, acc: np.ndarray, v_meas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Ein Zeitschritt

        Returns:
            (Geschwindigkeitsbefehle, realisierte Beschleunigung des Führungsfahrzeugs)
        """
        dt = self.dt
        cmd = command_velocity(v_meas, acc, dt)
        v_new = np.maximum(apply_actuator_lag(cmd, self.vel, self.imp.tau, dt), 0.0)
        v_old = self.vel
        self.pos = self.pos + v_old * dt
        self.step_index += 1
        head_acc = np.nan
        if self.open:
            cmd[0] = v_old[0]
            v_new[0] = self.head_profile(self.pos[0], self.t, self.step_index)
            head_acc = (v_new[0] - v_old[0]) / dt
        self.vel = v_new
        return cmd, head_acc

    def collision(self) -> Optional[str]:
        """
        Prüft alle echten Abstände auf s <= 0

        Returns:
            Meldung zum ersten betroffenen Fahrzeug oder None
        """
        s = self.spacings()
        bad = np.where(s <= 0)[0]
        if bad.size == 0:
            return None
        j = int(bad[0])
        return f"Kollision: Fahrzeug {self.ids[j]} Abstand {s[j]:.4f} m"


class _CavControl:
    """
    Verknüpft Simulator, Vergangenheitspuffer und Regler

    Nach jedem QP halten die ersten delay_steps Schritte des neuen Fensters
    den vorherigen Befehl; danach gilt der Plan zeitrichtig (Spalte j im
    Fensterschritt j). Maskierte Spalten erhalten die OVM-Beschleunigung.
    """

    def __init__(self, fleet: FleetConfig, sim: MixedTrafficSimulator, cfg: DeepLccConfig,
                 controller: Optional[DeepLccController], delay_steps: int, log: SimulationLog):
        n, m = fleet.formulation_dims()
        self.n, self.m = n, m
        self.sim = sim
        self.cfg = cfg
        self.controller = controller
        self.delay_steps = delay_steps
        self.log = log
        self.head_col = sim.column(fleet.formulation_head())
        self.follower_cols = [sim.column(i) for i in fleet.formulation_followers()]
        self.cav_cols = [sim.column(i) for i in fleet.cav_set]
        self.buffer = PastBuffer(cfg.T_ini, m, n + m)
        self.eq: Optional[EquilibriumState] = None
        self._window: Optional[np.ndarray] = None
        self._mask: Optional[np.ndarray] = None
        self._pos = 0
        self._prev_u: Optional[np.ndarray] = None

    def reset_window(self):
        self._window = None
        self._pos = 0

    def inputs(self, active: bool, ovm_acc: np.ndarray) -> np.ndarray:
        """CAV-Beschleunigungen dieses Schritts"""
        fallback = ovm_acc[self.cav_cols]
        if not active or self.controller is None or not self.buffer.is_warm:
            self.reset_window()
            u = fallback
        else:
            if self._window is None or self._pos >= self.cfg.N_c:
                result = self.controller.step(self.buffer, t=self.sim.t, step_index=self.sim.step_index)
                self.log.add_diagnostics(result.diagnostics)
                self._window, self._mask, self.eq = result.applied_inputs, result.fallback_mask, result.equilibrium
                self._pos = 0
            j = self._pos
            self._pos += 1
            if j < self.delay_steps and self._prev_u is not None:
                u = self._prev_u
            elif self._mask[j]:
                u = fallback
            else:
                u = self._window[:, j]
        self._prev_u = np.array(u, dtype=float)
        return self._prev_u

    def record(self, u: np.ndarray, v_meas: np.ndarray, s_meas: np.ndarray, active: bool):
        v0 = v_meas[self.head_col]
        y_raw = np.concatenate([v_meas[self.follower_cols], s_meas[self.cav_cols]])
        self.buffer.push(u, v0, y_raw)
        if active and self.eq is not None:
            self.log.record_signals(self.sim.step_index,
                                    SystemSignals.from_raw(u, v0, y_raw, self.eq, self.n, self.m))


def _run_loop(sim: MixedTrafficSimulator, log: SimulationLog, steps: int,
              control: Optional[_CavControl], active_fn: Callable[[float], bool],
              phase_fn: Callable[[float], str]) -> SimulationLog:
    for _ in range(steps):
        t = sim.t
        v_meas, s_meas = sim.measure()
        acc = sim.ovm_accelerations(v_meas, s_meas)
        active = active_fn(t)
        if control is not None and control.m > 0:
            u = control.inputs(active, acc)
            acc[control.cav_cols] = u
            control.record(u, v_meas, s_meas, active)

        pos, vel, spacing = sim.pos.copy(), sim.vel.copy(), sim.spacings()
        cmd, head_acc = sim.advance(acc, v_meas)
        if sim.open:
            acc[0] = head_acc
        log.append(pos, vel, acc, spacing, cmd, phase_fn(t))

        reason = sim.collision()
        if reason:
            log.mark_failed(sim.t, reason)
            break
    return log


def _make_rng(seed: Optional[int], imp: ImperfectionConfig) -> np.random.Generator:
    return np.random.default_rng(seed if seed is not None else imp.seed)


def _make_controller(fleet: FleetConfig, p: OvmParams, cfg: DeepLccConfig,
                     blocks: Optional[HankelBlocks]) -> Optional[DeepLccController]:
    if fleet.m == 0:
        return None
    if blocks is None:
        raise ValueError(f"CAV-Menge {fleet.cav_set} benötigt Hankel-Blöcke")
    n, m = fleet.formulation_dims()
    if (blocks.dims.n, blocks.dims.m) != (n, m):
        raise ValueError(f"Hankel-Blöcke {blocks.dims} passen nicht zur Flotte (n={n}, m={m})")
    return DeepLccController(blocks, cfg, p)


def simulate_straight(fleet: FleetConfig, p: OvmParams, cfg: DeepLccConfig, sched: DisturbanceSchedule,
                      imperfections: ImperfectionConfig, duration: float,
                      blocks: Optional[HankelBlocks] = None, dt: float = DEFAULT_DT,
                      seed: Optional[int] = None,
                      controller: Optional[DeepLccController] = None) -> SimulationLog:
    """
    Gerade Strecke: Führungsfahrzeug nach Störprofil, HDVs nach OVM, CAVs nach DeeP-LCC

    Returns:
        SimulationLog (bei Kollision als fehlgeschlagen markiert)

    Raises:
        SolverError: QP scheitert dauerhaft
    """
    if fleet.topology is not Topology.OPEN:
        raise ValueError("simulate_straight benötigt eine offene Strecke")
    rng = _make_rng(seed, imperfections)
    L = fleet.vehicle_length
    count = fleet.n + 1

    if sched.mode is DisturbanceMode.IDLE_START:
        v_init, s_init = 0.0, p.s_st
    else:
        v_init = sched.v_c
        s_init = equilibrium_spacing_inverse(sched.v_c, p)
    positions = -np.arange(count) * (s_init + L)
    velocities = np.full(count, v_init)
    velocities[0] = head_velocity(0.0, sched, 0.0)

    sim = MixedTrafficSimulator(fleet, p, imperfections, dt, rng, positions, velocities,
                                head_profile=lambda pos, t, k: head_velocity(pos, sched, t))
    log = SimulationLog(dt, fleet.vehicle_ids, list(fleet.cav_set), fleet.formulation_head(),
                        fleet.formulation_followers(), kind="straight")
    if controller is None:
        controller = _make_controller(fleet, p, cfg, blocks)
    control = _CavControl(fleet, sim, cfg, controller,
                          imperfections.computation_delay_steps(fleet.m, dt), log)

    steps = int(round(duration / dt))
    logger.info(f"Gerade Strecke: S={fleet.cav_set}, {steps} Schritte, dt={dt}")
    return _run_loop(sim, log, steps, control, active_fn=lambda t: True, phase_fn=lambda t: "")


def _ring_positions(fleet: FleetConfig, track: RingTrack, rng: np.random.Generator) -> np.ndarray:
    gap = track.circumference / fleet.n
    positions = -np.arange(fleet.n) * gap
    if track.spacing_jitter_std > 0:
        # Positionsversatz mit std/sqrt(2) ergibt Abstandsstreuung std
        positions = positions + rng.normal(0.0, track.spacing_jitter_std / math.sqrt(2), fleet.n)
    return positions


def simulate_ring(fleet: FleetConfig, p: OvmParams, cfg: DeepLccConfig, plan: RingPhasePlan,
                  imperfections: ImperfectionConfig, blocks: Optional[HankelBlocks] = None,
                  track: RingTrack = RingTrack(), dt: float = DEFAULT_DT,
                  seed: Optional[int] = None,
                  controller: Optional[DeepLccController] = None) -> SimulationLog:
    """
    Ringstraße mit vier Phasen; DeeP-LCC nur in Phase c

    Der Kopf des Regelungsfensters fährt OVM, seine gemessene Geschwindigkeit
    ist die Quelle von eps.

    Raises:
        SolverError: QP scheitert dauerhaft
    """
    if fleet.topology is not Topology.RING:
        raise ValueError("simulate_ring benötigt eine Ring-Topologie")
    rng = _make_rng(seed, imperfections)
    positions = _ring_positions(fleet, track, rng)
    velocities = np.full(fleet.n, track.start_velocity)

    sim = MixedTrafficSimulator(fleet, p, imperfections, dt, rng, positions, velocities,
                                circumference=track.circumference)
    log = SimulationLog(dt, fleet.vehicle_ids, list(fleet.cav_set), fleet.formulation_head(),
                        fleet.vehicle_ids, kind="ring", circumference=track.circumference)
    if controller is None:
        controller = _make_controller(fleet, p, cfg, blocks)
    control = _CavControl(fleet, sim, cfg, controller,
                          imperfections.computation_delay_steps(fleet.m, dt), log)

    reason = sim.collision()
    if reason:
        log.mark_failed(0.0, reason)
        return log

    steps = int(round(plan.t_end / dt))
    logger.info(f"Ringstraße: S={fleet.cav_set}, Fenster={fleet.controlled_subset}, {steps} Schritte")
    return _run_loop(sim, log, steps, control, active_fn=plan.control_active, phase_fn=plan.phase_at)


def collect_offline_data(fleet: FleetConfig, p: OvmParams, cfg: CollectionConfig, kind: str,
                         seed: Optional[int], T: Optional[int] = None,
                         imperfections: Optional[ImperfectionConfig] = None,
                         track: RingTrack = RingTrack(), dt: float = DEFAULT_DT) -> TrajectoryDataset:
    """
    Sammelt Anregungsdaten für die Hankel-Matrizen

    CAVs: OVM + U[-delta_u, delta_u].
    Gerade Strecke: Führungsfahrzeug v_c + U[-delta_eps, delta_eps].
    Ring: Kopf des Fensters OVM - k_r*(v - v_r) + U[-delta_u, delta_u].

    Raises:
        CollisionError: Kollision während der Sammlung
        ValueError: keine CAVs oder unbekannte Szenario-Art
    """
    if fleet.m == 0:
        raise ValueError("Datensammlung benötigt mindestens eine CAV")
    if kind not in ("straight", "ring"):
        raise ValueError(f"Unbekannte Szenario-Art: {kind}")
    imp = imperfections if imperfections is not None else ImperfectionConfig()
    T = cfg.T if T is None else T
    rng = np.random.default_rng(seed)
    n, m = fleet.formulation_dims()
    L = fleet.vehicle_length

    if kind == "straight":
        if fleet.topology is not Topology.OPEN:
            raise ValueError("Sammlung 'straight' benötigt eine offene Strecke")
        v_star = cfg.v_c
        s_init = equilibrium_spacing_inverse(cfg.v_c, p)
        count = fleet.n + 1
        positions = -np.arange(count) * (s_init + L)
        velocities = np.full(count, cfg.v_c)

        def head_profile(pos, t, k):
            return cfg.v_c + rng.uniform(-cfg.delta_eps, cfg.delta_eps)

        sim = MixedTrafficSimulator(fleet, p, imp, dt, rng, positions, velocities, head_profile=head_profile)
    else:
        if fleet.topology is not Topology.RING:
            raise ValueError("Sammlung 'ring' benötigt eine Ring-Topologie")
        v_star = cfg.ring_reference(fleet, p, track)
        gap = track.uniform_gap(fleet)
        positions = -np.arange(fleet.n) * (track.circumference / fleet.n)
        velocities = np.full(fleet.n, ovm_desired_velocity(gap, p))
        sim = MixedTrafficSimulator(fleet, p, imp, dt, rng, positions, velocities,
                                    circumference=track.circumference)

    eq = EquilibriumState(v_star, equilibrium_spacing_inverse(v_star, p))
    head_col = sim.column(fleet.formulation_head())
    follower_cols = [sim.column(i) for i in fleet.formulation_followers()]
    cav_cols = [sim.column(i) for i in fleet.cav_set]

    u_data = np.zeros((T, m))
    eps_data = np.zeros(T)
    y_data = np.zeros((T, n + m))

    for k in range(T):
        v_meas, s_meas = sim.measure()
        acc = sim.ovm_accelerations(v_meas, s_meas)
        acc[cav_cols] += rng.uniform(-cfg.delta_u, cfg.delta_u, m)
        if kind == "ring":
            acc[head_col] += -cfg.k_r * (v_meas[head_col] - v_star) + rng.uniform(-cfg.delta_u, cfg.delta_u)

        u_data[k] = acc[cav_cols]
        eps_data[k] = v_meas[head_col] - v_star
        y_data[k] = np.concatenate([v_meas[follower_cols], s_meas[cav_cols]])

        sim.advance(acc, v_meas)
        reason = sim.collision()
        if reason:
            raise CollisionError(f"Datensammlung abgebrochen bei t={sim.t:.2f}s: {reason}", t=sim.t)

    logger.info(f"Datensammlung ({kind}) abgeschlossen: T={T}, S={fleet.cav_set}, seed={seed}")
    return TrajectoryDataset(
        u=u_data, eps=eps_data, y_raw=y_data, dt=dt, n=n, m=m, equilibrium=eq,
        cav_set=fleet.cav_set, kind=kind, seed=seed,
        metadata={"collection": asdict(cfg), "tau": imp.tau,
                  "noise_enabled": imp.noise_enabled, "delay_enabled": imp.delay_enabled},
    )
