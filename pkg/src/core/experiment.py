"""
Experiment-Steuerung für DeepLccLab
Datensammlung, Einzellauf und Vergleich mehrerer CAV-Platzierungen
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum, auto
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .controller import DeepLccController
from .hankel import (
    ExcitationError,
    ExcitationReport,
    TrajectoryDataset,
    check_assumption_1,
    partition,
)
from .metrics import (
    AsveReport,
    EquilibriumMode,
    build_asve_report,
    compute_asve,
    format_cav_set,
    report_row,
    report_table,
)
from .scenario import ScenarioConfig, ScenarioManager
from .sim_log import SimulationLog, write_csv_atomic
from .simulator import CollisionError, collect_offline_data, simulate_ring, simulate_straight
from utils.logger import ExperimentLogger

logger = logging.getLogger(__name__)

# Zweck-Schlüssel für die Seed-Ableitung
SEED_PURPOSE_COLLECT = 0
SEED_PURPOSE_RUN = 1


class RunState(Enum):
    """Status des Experiment-Runners"""
    IDLE = auto()
    RUNNING = auto()
    COMPLETED = auto()
    FAILED = auto()


def derive_seed(master: int, purpose: int, cav_set: Optional[Sequence[int]] = None) -> int:
    """
    Leitet einen Seed aus Master-Seed, Zweck und optional der CAV-Menge ab

    Gleiche Eingaben liefern immer denselben Seed.
    """
    key: Tuple[int, ...] = (purpose,)
    if cav_set is not None:
        key = (purpose, len(cav_set), *[int(i) for i in cav_set])
    ss = np.random.SeedSequence(int(master), spawn_key=key)
    return int(ss.generate_state(1)[0])


@dataclass
class CollectResult:
    """Ergebnis einer Datensammlung"""
    dataset: TrajectoryDataset
    excitation: ExcitationReport
    path: Optional[Path]
    seed: int
    attempts: int


@dataclass
class RunResult:
    """Ergebnis eines Simulationslaufs"""
    log: SimulationLog
    report: AsveReport
    baseline: Optional[SimulationLog] = None
    controller_dump: str = ""
    files: Dict[str, Path] = field(default_factory=dict)


class ExperimentRunner:
    """
    Führt Datensammlung, Läufe und Vergleiche für ein Szenario aus

    Alle Ergebnisse landen im Ausgabeverzeichnis.
    """

    DATASET_FILENAME = "dataset.csv"
    LOG_FILENAME = "sim_log.csv"
    BASELINE_FILENAME = "baseline_log.csv"
    DIAGNOSTICS_FILENAME = "diagnostics.csv"
    REPORT_FILENAME = "asve_report.csv"
    STATE_FILENAME = "controller_state.txt"
    SWEEP_FILENAME = "sweep_report.csv"
    MAX_COLLECTION_ATTEMPTS = 5

    def __init__(self, config: ScenarioConfig, out_dir, exp_logger: Optional[ExperimentLogger] = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.exp_logger = exp_logger
        self.state = RunState.IDLE

    # ------------------------------------------------------------------
    # Logging

    def _info(self, message: str):
        logger.info(message)
        if self.exp_logger:
            self.exp_logger.info(message)

    def _warning(self, message: str):
        logger.warning(message)
        if self.exp_logger:
            self.exp_logger.warning(message)

    def _success(self, message: str):
        logger.info(message)
        if self.exp_logger:
            self.exp_logger.success(message)

    # ------------------------------------------------------------------
    # Datensammlung

    def collect(self, seed: Optional[int] = None, path=None) -> CollectResult:
        """
        Sammelt einen Datensatz, prüft die Anregung und schreibt ihn

        Bei Kollision wird mit abgeleitetem Seed neu gesammelt.

        Raises:
            CollisionError: alle Versuche kollidiert
        """
        cfg = self.config
        if seed is None:
            seed = derive_seed(cfg.seed, SEED_PURPOSE_COLLECT, cfg.fleet.cav_set)
        path = Path(path) if path is not None else self.out_dir / self.DATASET_FILENAME

        self.state = RunState.RUNNING
        if self.exp_logger:
            self.exp_logger.section(f"Datensammlung {cfg.kind} S={format_cav_set(cfg.fleet.cav_set)}")

        attempt_seed = seed
        for attempt in range(1, self.MAX_COLLECTION_ATTEMPTS + 1):
            try:
                dataset = collect_offline_data(
                    cfg.fleet, cfg.ovm, cfg.collection, cfg.kind, attempt_seed,
                    imperfections=cfg.imperfections, track=cfg.ring_track, dt=cfg.dt,
                )
                break
            except CollisionError as e:
                self._warning(f"Versuch {attempt}: {e}")
                attempt_seed = derive_seed(seed, SEED_PURPOSE_COLLECT, (attempt,))
        else:
            self.state = RunState.FAILED
            raise CollisionError(f"Datensammlung nach {self.MAX_COLLECTION_ATTEMPTS} Versuchen kollidiert")

        n, m = cfg.fleet.formulation_dims()
        excitation = check_assumption_1(dataset, cfg.controller.dims(n, m))
        dataset.save_csv(path)
        self._info(f"Datensatz gespeichert: {path} (T={dataset.T}, seed={attempt_seed})")
        if excitation.satisfied:
            self._success(excitation.format())
        else:
            self._warning(excitation.format())
        self.state = RunState.COMPLETED
        return CollectResult(dataset=dataset, excitation=excitation, path=path,
                             seed=attempt_seed, attempts=attempt)

    def _dataset_for_run(self, dataset: Optional[TrajectoryDataset]) -> TrajectoryDataset:
        cfg = self.config
        n, m = cfg.fleet.formulation_dims()
        if dataset is None:
            path = self.out_dir / self.DATASET_FILENAME
            if path.exists():
                dataset = TrajectoryDataset.load_csv(path)
            else:
                result = self.collect(path=path)
                if not result.excitation.satisfied:
                    raise ExcitationError(result.excitation.format())
                dataset = result.dataset
        if (dataset.n, dataset.m) != (n, m):
            raise ValueError(f"Datensatz (n={dataset.n}, m={dataset.m}) passt nicht zum Szenario (n={n}, m={m})")
        if dataset.cav_set and tuple(dataset.cav_set) != tuple(cfg.fleet.cav_set):
            raise ValueError(f"Datensatz gehört zu S={dataset.cav_set}, Szenario hat S={cfg.fleet.cav_set}")
        if abs(dataset.dt - cfg.dt) > 1e-12:
            raise ValueError(f"Datensatz-dt {dataset.dt} weicht von dt={cfg.dt} ab")
        return dataset

    # ------------------------------------------------------------------
    # Simulation

    def simulate(self, config: ScenarioConfig, dataset: Optional[TrajectoryDataset]) -> Tuple[SimulationLog, str]:
        """
        Ein Simulationslauf mit dem gemeinsamen Lauf-Seed

        Returns:
            (Log, Zustands-Dump des Reglers)
        """
        ctrl_cfg = config.effective_controller()
        controller = None
        if config.fleet.m > 0:
            n, m = config.fleet.formulation_dims()
            blocks = partition(dataset, dataset.equilibrium, ctrl_cfg.dims(n, m))
            controller = DeepLccController(blocks, ctrl_cfg, config.ovm)

        seed = derive_seed(config.seed, SEED_PURPOSE_RUN)
        if config.kind == "straight":
            log = simulate_straight(config.fleet, config.ovm, ctrl_cfg, config.disturbance,
                                    config.imperfections, config.duration, dt=config.dt,
                                    seed=seed, controller=controller)
        else:
            log = simulate_ring(config.fleet, config.ovm, ctrl_cfg, config.ring_plan,
                                config.imperfections, track=config.ring_track, dt=config.dt,
                                seed=seed, controller=controller)
        return log, controller.state_dump() if controller else ""

    def run(self, dataset: Optional[TrajectoryDataset] = None, with_baseline: bool = True) -> RunResult:
        """
        Simuliert das Szenario und schreibt Log, Diagnosen, Bericht und Regler-Dump

        Returns:
            RunResult (log.failed bei Kollision)

        Raises:
            ValueError: Datensatz passt nicht
            ExcitationError: automatisch gesammelte Daten nicht anregend
            SolverError: QP scheitert dauerhaft
        """
        cfg = self.config
        self.state = RunState.RUNNING
        if self.exp_logger:
            self.exp_logger.section(f"Lauf {cfg.kind} S={format_cav_set(cfg.fleet.cav_set)}")
            self.exp_logger.parameters(cfg.to_dict())

        try:
            if cfg.fleet.m > 0:
                dataset = self._dataset_for_run(dataset)
            log, dump = self.simulate(cfg, dataset)
            baseline = None
            if with_baseline and cfg.fleet.m > 0:
                baseline, _ = self.simulate(cfg.with_cav_set(()), None)
        except Exception:
            self.state = RunState.FAILED
            raise

        report = build_asve_report(log, cfg.prescribed_velocity(), window=self._window(log),
                                   baseline=baseline, t_ini=cfg.controller.T_ini)

        files = {
            "log": self.out_dir / self.LOG_FILENAME,
            "diagnostics": self.out_dir / self.DIAGNOSTICS_FILENAME,
            "report": self.out_dir / self.REPORT_FILENAME,
            "state": self.out_dir / self.STATE_FILENAME,
        }
        log.save_csv(files["log"], files["diagnostics"])
        status = "failed" if log.failed else "ok"
        write_csv_atomic(report_table([report_row(cfg.fleet.cav_set, report, status)]), files["report"])
        _write_text_atomic(files["state"], dump)
        if baseline is not None:
            files["baseline"] = self.out_dir / self.BASELINE_FILENAME
            baseline.save_csv(files["baseline"])
        ScenarioManager(self.out_dir / "scenario.json").save(cfg)

        if log.failed:
            self.state = RunState.FAILED
            self._warning(f"Lauf fehlgeschlagen: {log.failure_reason} bei t={log.failure_time:.2f}s")
        else:
            self.state = RunState.COMPLETED
            self._success(f"ASVE (EE) = {report.asve_estimated:.4f}, ASVE (PE) = {report.asve_prescribed:.4f}")
            if report.reduction_prescribed is not None:
                self._info(f"Reduktion gegenüber S={{}}: EE {report.reduction_estimated:.1%}, "
                           f"PE {report.reduction_prescribed:.1%}")

        return RunResult(log=log, report=report, baseline=baseline, controller_dump=dump, files=files)

    def _window(self, log: SimulationLog) -> Optional[Tuple[float, float]]:
        if self.config.asve_window is None:
            return None
        t0, tf = self.config.asve_window
        return t0, min(tf, log.duration)

    # ------------------------------------------------------------------
    # Vergleich

    def sweep(self, cav_sets: Sequence[Sequence[int]], max_workers: Optional[int] = None,
              parallel: bool = True) -> pd.DataFrame:
        """
        Führt je CAV-Menge Sammlung und Lauf aus und schreibt eine Vergleichstabelle

        Doppelte Mengen werden mit Warnung entfernt. Fehlgeschlagene Fälle
        erscheinen als Zeile mit Status, die anderen laufen weiter.
        """
        self.state = RunState.RUNNING
        cases: List[Tuple[int, ...]] = []
        for S in cav_sets:
            S = tuple(int(i) for i in S)
            if S in cases:
                self._warning(f"Doppelte CAV-Menge {format_cav_set(S)} ignoriert")
                continue
            cases.append(S)

        jobs = list(cases)
        if () not in jobs:
            jobs.append(())
        if self.exp_logger:
            self.exp_logger.section(f"Vergleich: {', '.join(format_cav_set(S) for S in cases)}")

        config_dict = self.config.to_dict()
        results: Dict[Tuple[int, ...], dict] = {}
        if parallel and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=max_workers) as pool:
                futures = {S: pool.submit(run_sweep_case, config_dict, S, str(self.out_dir)) for S in jobs}
                for S, future in futures.items():
                    results[S] = _case_outcome(S, future)
        else:
            for S in jobs:
                results[S] = _safe_case(config_dict, S, str(self.out_dir))

        base = results[()]
        rows = []
        for S in cases:
            res = results[S]
            row = {"cav_set": format_cav_set(S), "asve_ee": res.get("asve_ee", np.nan),
                   "asve_pe": res.get("asve_pe", np.nan), "reduction_ee": np.nan,
                   "reduction_pe": np.nan, "status": res["status"]}
            if S and res["status"] == "ok" and base["status"] == "ok":
                if base["asve_ee"] > 0:
                    row["reduction_ee"] = 1 - res["asve_ee"] / base["asve_ee"]
                if base["asve_pe"] > 0:
                    row["reduction_pe"] = 1 - res["asve_pe"] / base["asve_pe"]
            rows.append(row)
            self._info(f"S={row['cav_set']:<8s} ASVE(EE)={row['asve_ee']:.4f} ASVE(PE)={row['asve_pe']:.4f} "
                       f"Status={row['status']}")

        table = report_table(rows)
        write_csv_atomic(table, self.out_dir / self.SWEEP_FILENAME)
        if self.exp_logger:
            self.exp_logger.table(table)
        self.state = RunState.COMPLETED if all(r["status"] == "ok" for r in rows) else RunState.FAILED
        return table

    def __repr__(self):
        return f"ExperimentRunner(kind={self.config.kind}, out_dir={self.out_dir}, state={self.state.name})"


def case_dirname(cav_set: Sequence[int]) -> str:
    return "case_" + ("_".join(str(i) for i in cav_set) if cav_set else "none")


def run_sweep_case(config_dict: dict, cav_set: Tuple[int, ...], out_dir: str) -> dict:
    """
    Ein Vergleichsfall (läuft in einem eigenen Prozess)

    Returns:
        dict mit asve_ee, asve_pe und status
    """
    config = ScenarioConfig.from_dict(config_dict).with_cav_set(cav_set)
    runner = ExperimentRunner(config, Path(out_dir) / case_dirname(cav_set))
    result = runner.run(with_baseline=False)
    window = runner._window(result.log)
    return {
        "asve_ee": compute_asve(result.log, EquilibriumMode.ESTIMATED, window=window,
                                t_ini=config.controller.T_ini),
        "asve_pe": compute_asve(result.log, EquilibriumMode.PRESCRIBED, v_c=config.prescribed_velocity(),
                                window=window),
        "status": "failed" if result.log.failed else "ok",
    }


def _safe_case(config_dict: dict, cav_set: Tuple[int, ...], out_dir: str) -> dict:
    try:
        return run_sweep_case(config_dict, cav_set, out_dir)
    except Exception as e:
        logger.warning(f"Fall {format_cav_set(cav_set)} fehlgeschlagen: {e}")
        return {"status": f"error: {type(e).__name__}"}


def _case_outcome(cav_set: Tuple[int, ...], future) -> dict:
    try:
        return future.result()
    except Exception as e:
        logger.warning(f"Fall {format_cav_set(cav_set)} fehlgeschlagen: {e}")
        return {"status": f"error: {type(e).__name__}"}


def _write_text_atomic(path: Path, text: str):
    temp_path = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(temp_path, "w", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(temp_path, path)
    except Exception as e:
        if temp_path.exists():
            temp_path.unlink()
        raise IOError(f"Fehler beim Schreiben von {path}: {e}")
