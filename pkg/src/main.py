"""
DeepLccLab - Mischverkehrs-Simulator mit datenbasiertem prädiktivem Regler
Einstiegspunkt der Kommandozeile (collect, run, sweep, check-pe)
"""
import argparse
import logging
import sys
from enum import IntEnum
from pathlib import Path
from typing import List, Optional, Tuple

from core.controller import DeepLccConfig, SolverError
from core.experiment import ExperimentRunner
from core.hankel import ExcitationError, TrajectoryDataset, check_assumption_1
from core.metrics import format_cav_set
from core.scenario import STRAIGHT_CAV_SETS, ScenarioConfig, ScenarioManager
from core.simulator import CollisionError
from utils.logger import ExperimentLogger, LogEntry, LogLevel


class ExitCode(IntEnum):
    """Rückgabewerte der Kommandozeile"""
    SUCCESS = 0
    CONFIG_ERROR = 2
    EXCITATION_FAILED = 3
    COLLISION = 4
    SOLVER_FAILED = 5


def parse_cav_set(text: str) -> Tuple[int, ...]:
    """'2,4' -> (2, 4); '', '{}' oder '-' -> ()"""
    text = text.strip().strip("{}")
    if not text or text == "-":
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"Ungültige CAV-Menge: {text}")


def parse_cav_sets(text: str) -> List[Tuple[int, ...]]:
    """'{};1;2;1,3;2,4' -> [(), (1,), (2,), (1, 3), (2, 4)]"""
    return [parse_cav_set(part) for part in text.split(";")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deeplcc",
        description="Datensammlung, Simulation und Auswertung des DeeP-LCC Reglers",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Ausführliche Ausgabe")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Szenario-Datei (JSON)")
    common.add_argument("--scenario", choices=["straight", "ring"], default="straight",
                        help="Voreinstellung ohne --config")
    common.add_argument("--cav-set", type=parse_cav_set, default=None,
                        help="CAV-Menge, z.B. '2' oder '1,3' (überschreibt die Konfiguration)")
    common.add_argument("--seed", type=int, default=None, help="Master-Seed")
    common.add_argument("--out", default=".", help="Ausgabedatei bzw. -verzeichnis")
    common.add_argument("--disable-noise", action="store_true", help="Messrauschen abschalten")
    common.add_argument("--disable-delay", action="store_true", help="Mess- und Rechenverzögerung abschalten")
    common.add_argument("--tau", type=float, default=None, help="Zeitkonstante der Aktorverzögerung [s]")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="Offline-Daten sammeln")

    run = sub.add_parser("run", parents=[common], help="Einen Lauf simulieren")
    run.add_argument("--dataset", help="Datensatz (CSV); fehlt er, wird gesammelt")
    run.add_argument("--no-baseline", action="store_true", help="Keinen Referenzlauf ohne CAV")

    sweep = sub.add_parser("sweep", parents=[common], help="Mehrere CAV-Mengen vergleichen")
    sweep.add_argument("--cav-sets", type=parse_cav_sets, default=None,
                       help="Durch ';' getrennte Mengen, '{}' für die leere Menge")
    sweep.add_argument("--workers", type=int, default=None, help="Anzahl Prozesse")
    sweep.add_argument("--serial", action="store_true", help="Fälle nacheinander im Hauptprozess")

    check = sub.add_parser("check-pe", parents=[common], help="Anregungsbedingung eines Datensatzes prüfen")
    check.add_argument("--dataset", required=True, help="Datensatz (CSV)")
    return parser


def load_config(args) -> ScenarioConfig:
    """
    Szenario aus Datei oder Voreinstellung, plus Kommandozeilen-Schalter

    Raises:
        IOError, ValueError: Konfiguration ungültig
    """
    if args.config:
        config = ScenarioManager(args.config).load()
    elif args.scenario == "ring":
        config = ScenarioConfig.ring_road()
    else:
        config = ScenarioConfig.straight_road()

    if args.cav_set is not None:
        config = config.with_cav_set(args.cav_set)
    return config.with_overrides(
        disable_noise=args.disable_noise,
        disable_delay=args.disable_delay,
        tau=args.tau,
        seed=args.seed,
    )


def _print(level: LogLevel, message: str):
    print(LogEntry(level, message).format())


def cmd_collect(args, config: ScenarioConfig, exp_logger: ExperimentLogger) -> ExitCode:
    out = Path(args.out)
    if out.suffix.lower() != ".csv":
        out = out / ExperimentRunner.DATASET_FILENAME
    runner = ExperimentRunner(config, out.parent, exp_logger)
    result = runner.collect(path=out)
    _print(LogLevel.INFO, f"Datensatz: {result.path} (T={result.dataset.T}, Versuche={result.attempts})")
    if not result.excitation.satisfied:
        _print(LogLevel.ERROR, result.excitation.format())
        return ExitCode.EXCITATION_FAILED
    _print(LogLevel.SUCCESS, result.excitation.format())
    return ExitCode.SUCCESS


def cmd_run(args, config: ScenarioConfig, exp_logger: ExperimentLogger) -> ExitCode:
    dataset = TrajectoryDataset.load_csv(args.dataset) if args.dataset else None
    runner = ExperimentRunner(config, args.out, exp_logger)
    result = runner.run(dataset=dataset, with_baseline=not args.no_baseline)

    for name, path in result.files.items():
        _print(LogLevel.INFO, f"{name:<12s} {path}")
    if result.log.failed:
        _print(LogLevel.ERROR, f"Kollision: {result.log.failure_reason} (t={result.log.failure_time:.2f}s)")
        return ExitCode.COLLISION
    report = result.report
    _print(LogLevel.SUCCESS, f"ASVE (EE) = {report.asve_estimated:.4f}, ASVE (PE) = {report.asve_prescribed:.4f}")
    if report.reduction_prescribed is not None:
        _print(LogLevel.SUCCESS, f"Reduktion: EE {report.reduction_estimated:.1%}, PE {report.reduction_prescribed:.1%}")
    return ExitCode.SUCCESS


ERROR_EXIT_CODES = {
    ExcitationError.__name__: ExitCode.EXCITATION_FAILED,
    CollisionError.__name__: ExitCode.COLLISION,
    SolverError.__name__: ExitCode.SOLVER_FAILED,
}


def sweep_exit_code(statuses) -> ExitCode:
    """
    Rückgabewert eines Sweeps aus den Statusspalten der Ergebnistabelle

    Maßgeblich ist die erste nicht erfolgreiche Zeile: 'failed' ist eine Kollision,
    'error: <Typ>' wird wie die entsprechende Ausnahme in main() abgebildet,
    unbekannte Typen als Konfigurationsfehler.

    Args:
        statuses: Folge von Statuswerten ('ok', 'failed', 'error: <Typ>')

    Returns:
        ExitCode.SUCCESS, wenn alle Zeilen 'ok' sind
    """
    for status in statuses:
        if status == "ok":
            continue
        if status == "failed":
            return ExitCode.COLLISION
        name = str(status).partition("error:")[2].strip()
        return ERROR_EXIT_CODES.get(name, ExitCode.CONFIG_ERROR)
    return ExitCode.SUCCESS


def cmd_sweep(args, config: ScenarioConfig, exp_logger: ExperimentLogger) -> ExitCode:
    cav_sets = args.cav_sets if args.cav_sets is not None else STRAIGHT_CAV_SETS
    runner = ExperimentRunner(config, args.out, exp_logger)
    table = runner.sweep(cav_sets, max_workers=args.workers, parallel=not args.serial)
    print(table.to_string(index=False))
    return sweep_exit_code(table["status"])


def cmd_check_pe(args, config: ScenarioConfig, exp_logger: ExperimentLogger) -> ExitCode:
    dataset = TrajectoryDataset.load_csv(args.dataset)
    ctrl: DeepLccConfig = config.controller
    report = check_assumption_1(dataset, ctrl.dims(dataset.n, dataset.m))
    _print(LogLevel.INFO, f"Datensatz {args.dataset}: n={dataset.n}, m={dataset.m}, T={dataset.T}, "
                          f"S={format_cav_set(dataset.cav_set)}")
    exp_logger.info(report.format())
    if report.satisfied:
        _print(LogLevel.SUCCESS, report.format())
        return ExitCode.SUCCESS
    _print(LogLevel.ERROR, report.format())
    return ExitCode.EXCITATION_FAILED


COMMANDS = {
    "collect": cmd_collect,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "check-pe": cmd_check_pe,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Hauptfunktion"""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )

    try:
        config = load_config(args)
    except (IOError, ValueError) as e:
        _print(LogLevel.ERROR, f"Konfiguration ungültig: {e}")
        return ExitCode.CONFIG_ERROR

    out_dir = Path(args.out)
    log_dir = out_dir.parent if out_dir.suffix else out_dir
    exp_logger = ExperimentLogger(log_dir, echo=args.verbose)
    exp_logger.info(f"Befehl: {args.command}, Szenario: {config.name}, S={format_cav_set(config.fleet.cav_set)}, "
                    f"Seed: {config.seed}")

    try:
        code = COMMANDS[args.command](args, config, exp_logger)
    except (IOError, ValueError) as e:
        exp_logger.error(str(e))
        _print(LogLevel.ERROR, str(e))
        return ExitCode.CONFIG_ERROR
    except ExcitationError as e:
        exp_logger.error(str(e))
        _print(LogLevel.ERROR, f"Anregungsbedingung verletzt: {e}")
        return ExitCode.EXCITATION_FAILED
    except CollisionError as e:
        exp_logger.error(str(e))
        _print(LogLevel.ERROR, f"Kollision: {e}")
        return ExitCode.COLLISION
    except SolverError as e:
        exp_logger.error(str(e))
        _print(LogLevel.ERROR, f"Regler gescheitert: {e}")
        return ExitCode.SOLVER_FAILED

    exp_logger.info(f"Beendet mit Code {int(code)}")
    return int(code)


if __name__ == "__main__":
    sys.exit(main())
