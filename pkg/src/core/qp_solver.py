"""
QP-Löser für DeepLccLab
Dünne Hülle um OSQP: minimiere 1/2 x'Px + q'x  u.d.N.  l <= Ax <= u

Die KKT-Faktorisierung bleibt zwischen Aufrufen erhalten, solange nur
q, l und u aktualisiert werden.
"""
import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import osqp
from scipy import sparse

logger = logging.getLogger(__name__)


class QpStatus(Enum):
    """Ergebnis-Status eines QP-Aufrufs"""
    CONVERGED = "converged"
    INACCURATE = "inaccurate"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    ERROR = "error"

    @property
    def has_solution(self) -> bool:
        return self in (QpStatus.CONVERGED, QpStatus.INACCURATE, QpStatus.MAX_ITER)


# OSQP-Statustexte (API < 1.0)
_STATUS_MAP = {
    "solved": QpStatus.CONVERGED,
    "solved inaccurate": QpStatus.INACCURATE,
    "maximum iterations reached": QpStatus.MAX_ITER,
    "primal infeasible": QpStatus.INFEASIBLE,
    "primal infeasible inaccurate": QpStatus.INFEASIBLE,
    "dual infeasible": QpStatus.INFEASIBLE,
    "dual infeasible inaccurate": QpStatus.INFEASIBLE,
}


@dataclass
class QpResult:
    """Lösung eines QP-Aufrufs (x/y sind None ohne Lösung)"""
    status: QpStatus
    x: Optional[np.ndarray]
    y: Optional[np.ndarray]
    objective: float
    iterations: int
    solve_time: float
    raw_status: str = ""


@dataclass(frozen=True)
class KktResiduals:
    """Unendlich-Normen der KKT-Residuen"""
    stationarity: float
    primal: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


def kkt_residuals(P, q, A, l, u, x, y) -> KktResiduals:
    """
    KKT-Residuen im OSQP-Vorzeichenkonzept (y > 0: obere Schranke aktiv, y < 0: untere)

    Args:
        P, A: dünn oder dicht
        x, y: primale und duale Lösung
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    Ax = A @ x
    stat = P @ x + q + A.T @ y
    primal = np.maximum(np.maximum(Ax - u, l - Ax), 0.0)

    y_up = np.maximum(y, 0.0)
    y_lo = np.minimum(y, 0.0)
    gap_up = np.where(np.isfinite(u), u - Ax, 0.0)
    gap_lo = np.where(np.isfinite(l), Ax - l, 0.0)
    # Multiplikator auf unendlicher Schranke ist selbst eine Verletzung
    inf_up = np.where(np.isfinite(u), 0.0, y_up)
    inf_lo = np.where(np.isfinite(l), 0.0, -y_lo)
    comp = np.abs(y_up * gap_up) + np.abs(y_lo * gap_lo) + inf_up + inf_lo

    def _norm(v):
        return float(np.max(np.abs(v))) if np.size(v) else 0.0

    return KktResiduals(stationarity=_norm(stat), primal=_norm(primal), complementarity=_norm(comp))


class QpSolver:
    """
    QP-Löser mit gecachtem OSQP-Workspace

    setup() einmal mit P, q, A, l, u; danach update() für q/l/u und
    warm_start() vor solve().
    """

    def __init__(self, eps_abs: float = 1e-6, eps_rel: float = 1e-6, max_iter: int = 20000,
                 polish: bool = True, verbose: bool = False):
        self.settings = dict(
            eps_abs=eps_abs,
            eps_rel=eps_rel,
            max_iter=max_iter,
            polish=polish,
            verbose=verbose,
            warm_start=True,
        )
        self._prob: Optional[osqp.OSQP] = None
        self.P = None
        self.q = None
        self.A = None
        self.l = None
        self.u = None

    @property
    def is_setup(self) -> bool:
        """True nach setup(), solange der Workspace besteht"""
        return self._prob is not None

    def setup(self, P, q, A, l, u):
        """
        Baut den OSQP-Workspace (Faktorisierung)

        P wird als obere Dreiecksmatrix übergeben.
        """
        self.P = sparse.csc_matrix(P)
        self.A = sparse.csc_matrix(A)
        self.q = np.asarray(q, dtype=float)
        self.l = np.asarray(l, dtype=float)
        self.u = np.asarray(u, dtype=float)
        if self.A.shape != (self.l.shape[0], self.P.shape[0]) or self.u.shape != self.l.shape:
            raise ValueError(f"Inkonsistente QP-Dimensionen: P{self.P.shape} A{self.A.shape} "
                             f"l{self.l.shape} u{self.u.shape}")

        self._prob = osqp.OSQP()
        # l > u lehnt OSQP schon im Setup ab; solve() meldet es als INFEASIBLE
        self._prob.setup(P=sparse.triu(self.P, format="csc"), q=self.q, A=self.A,
                         l=self._clip_for_backend(np.minimum(self.l, self.u)),
                         u=self._clip_for_backend(self.u),
                         **self.settings)
        logger.debug(f"OSQP-Setup: {self.P.shape[0]} Variablen, {self.A.shape[0]} Nebenbedingungen")

    def update(self, q=None, l=None, u=None):
        """
        Aktualisiert nur Vektoren, die Faktorisierung bleibt erhalten

        Raises:
            RuntimeError: vor setup() aufgerufen
        """
        if not self.is_setup:
            raise RuntimeError("QpSolver.update() vor setup() aufgerufen")
        kwargs = {}
        if q is not None:
            self.q = np.asarray(q, dtype=float)
            kwargs["q"] = self.q
        if l is not None:
            self.l = np.asarray(l, dtype=float)
        if u is not None:
            self.u = np.asarray(u, dtype=float)
        if l is not None or u is not None:
            if np.any(self.l > self.u):
                return
            kwargs["l"] = self._clip_for_backend(self.l)
            kwargs["u"] = self._clip_for_backend(self.u)
        if kwargs:
            self._prob.update(**kwargs)

    def warm_start(self, x=None, y=None):
        """
        Setzt Start-Primal- und Dualvektor für den nächsten solve()

        Ohne Workspace (vor setup()) passiert nichts; None lässt den jeweiligen
        Vektor unverändert.

        Args:
            x: Primalvektor der Länge n_var
            y: Dualvektor der Länge n_con
        """
        if not self.is_setup:
            return
        kwargs = {}
        if x is not None:
            kwargs["x"] = np.asarray(x, dtype=float)
        if y is not None:
            kwargs["y"] = np.asarray(y, dtype=float)
        if kwargs:
            self._prob.warm_start(**kwargs)

    def solve(self) -> QpResult:
        """Löst das aktuelle QP"""
        if not self.is_setup:
            raise RuntimeError("QpSolver.solve() vor setup() aufgerufen")

        if np.any(self.l > self.u):
            bad = int(np.argmax(self.l > self.u))
            logger.warning(f"Untere Schranke über oberer Schranke (Zeile {bad}), QP unzulässig")
            return QpResult(status=QpStatus.INFEASIBLE, x=None, y=None, objective=float("nan"),
                            iterations=0, solve_time=0.0, raw_status="l > u")

        start = time.perf_counter()
        try:
            res = self._prob.solve()
        except Exception as e:
            logger.error(f"OSQP-Fehler: {e}")
            return QpResult(status=QpStatus.ERROR, x=None, y=None, objective=float("nan"),
                            iterations=0, solve_time=time.perf_counter() - start, raw_status=str(e))
        elapsed = time.perf_counter() - start

        raw_status = res.info.status
        status = _STATUS_MAP.get(raw_status, QpStatus.ERROR)
        if status.has_solution and res.x is not None and np.all(np.isfinite(res.x)):
            return QpResult(status=status, x=np.array(res.x), y=np.array(res.y),
                            objective=float(res.info.obj_val), iterations=int(res.info.iter),
                            solve_time=elapsed, raw_status=raw_status)
        if status.has_solution:
            status = QpStatus.ERROR
        return QpResult(status=status, x=None, y=None, objective=float("nan"),
                        iterations=int(res.info.iter), solve_time=elapsed, raw_status=raw_status)

    def residuals(self, result: QpResult) -> Optional[KktResiduals]:
        """
        KKT-Residuen einer Lösung gegen die zuletzt übergebenen Problemdaten

        Returns:
            None, wenn result keinen Primalvektor trägt
        """
        if result.x is None:
            return None
        return kkt_residuals(self.P, self.q, self.A, self.l, self.u, result.x, result.y)

    @staticmethod
    def _clip_for_backend(v: np.ndarray) -> np.ndarray:
        # OSQP behandelt |v| >= OSQP_INFTY (1e30) als unendlich
        return np.clip(v, -1e30, 1e30)


def solve_dense(P, q, A, l, u, **settings) -> QpResult:
    """Einmal-Lösung eines QPs ohne Workspace-Wiederverwendung"""
    solver = QpSolver(**settings)
    solver.setup(P, q, A, l, u)
    return solver.solve()
