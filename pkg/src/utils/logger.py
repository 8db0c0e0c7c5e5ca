"""
Experiment-Log für DeepLccLab

Eine Datei pro Aufruf (deeplcc_YYYYMMDD_HHMMSS.log) mit Abschnitten für
Datensammlung, Lauf und Vergleich. Die Zeilen haben dasselbe Format wie die
Konsolenausgabe der CLI.
"""
import os
import sys
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, TextIO

import pandas as pd


class LogLevel(Enum):
    """Log-Levels für verschiedene Nachrichtentypen"""
    INFO = "INFO"
    SUCCESS = "SUCCESS"
    WARNING = "WARNING"
    ERROR = "ERROR"


LEVEL_WIDTH = max(len(level.value) for level in LogLevel)
RULE = "=" * 80


def format_line(level: LogLevel, message: str, timestamp: Optional[datetime] = None,
                include_date: bool = False) -> str:
    """[HH:MM:SS] LEVEL   Nachricht, mit include_date zusätzlich das Datum"""
    timestamp = timestamp or datetime.now()
    time_fmt = "%Y-%m-%d %H:%M:%S" if include_date else "%H:%M:%S"
    return f"[{timestamp.strftime(time_fmt)}] {level.value.ljust(LEVEL_WIDTH)} {message}"


class ExperimentLogger:
    """
    Log-Datei eines CLI-Aufrufs

    Wird vom ExperimentRunner mitgeführt; mit echo=True wird jede Zeile
    zusätzlich auf stderr gespiegelt (CLI-Option --verbose).
    """

    FILE_PREFIX = "deeplcc_"

    def __init__(self, log_dir=None, echo: bool = False, stream: Optional[TextIO] = None):
        self.log_dir = Path(log_dir) if log_dir is not None else Path(os.getcwd())
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.echo = echo
        self._stream = stream

        started = datetime.now()
        self.log_path = self.log_dir / f"{self.FILE_PREFIX}{started.strftime('%Y%m%d_%H%M%S')}.log"
        self._append([RULE, f"DeepLccLab - Log gestartet: {started.strftime('%Y-%m-%d %H:%M:%S')}", RULE, ""],
                     mode="w")

    def _append(self, lines, mode: str = "a"):
        try:
            with open(self.log_path, mode, encoding="utf-8") as f:
                for line in lines:
                    f.write(line + "\n")
        except OSError as e:
            print(f"Fehler beim Schreiben in Log-Datei: {e}", file=sys.stderr)
            return

        if self.echo:
            stream = self._stream or sys.stderr
            for line in lines:
                print(line, file=stream)

    def log(self, level: LogLevel, message: str):
        self._append([format_line(level, message)])

    def info(self, message: str):
        self.log(LogLevel.INFO, message)

    def success(self, message: str):
        self.log(LogLevel.SUCCESS, message)

    def warning(self, message: str):
        self.log(LogLevel.WARNING, message)

    def error(self, message: str):
        self.log(LogLevel.ERROR, message)

    def section(self, title: str):
        """Abschnitts-Header, z.B. 'Lauf straight S={2}'"""
        self._append(["", RULE, f"  {title}", RULE])

    def parameters(self, values: Mapping[str, Any], prefix: str = ""):
        """
        Schreibt verschachtelte Szenario-Parameter als 'schlüssel.pfad = wert'

        Args:
            values: z.B. ScenarioConfig.to_dict()
            prefix: Präfix für die Schlüssel (rekursiv)
        """
        lines = []
        for key, value in values.items():
            name = f"{prefix}{key}"
            if isinstance(value, Mapping):
                self.parameters(value, prefix=name + ".")
            else:
                lines.append(f"    {name} = {value}")
        if lines:
            self._append(lines)

    def table(self, frame: pd.DataFrame, float_format: str = "{:.4f}"):
        """Schreibt eine Ergebnistabelle (ASVE-Bericht, Vergleich) eingerückt ins Log"""
        text = frame.to_string(index=False, float_format=float_format.format, na_rep="-")
        self._append(["    " + line for line in text.splitlines()])

    def get_log_path(self) -> str:
        return str(self.log_path.absolute())

    def __repr__(self):
        return f"ExperimentLogger(log_path={self.log_path})"


class LogEntry:
    """Einzelne Konsolenzeile der CLI im Format der Log-Datei"""

    def __init__(self, level: LogLevel, message: str, timestamp: Optional[datetime] = None):
        self.level = level
        self.message = message
        self.timestamp = timestamp or datetime.now()

    def format(self, include_date: bool = False) -> str:
        return format_line(self.level, self.message, self.timestamp, include_date=include_date)

    def __str__(self):
        return self.format()

    def __repr__(self):
        return f"LogEntry({self.level}, {self.message!r}, {self.timestamp})"
