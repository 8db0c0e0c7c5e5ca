"""
DeeP-LCC Regler
Gleichgewichtsschätzung, QP-Aufbau, Lösung und Ausführung mit rollierendem Horizont
"""
import logging
from collections import deque
from dataclasses import dataclass, asdict
from typing import List, Optional

import numpy as np
from scipy import sparse

from .fleet import EquilibriumState, OvmParams, raw_to_error_output
from .hankel import HankelBlocks, HankelDims
from .ovm import equilibrium_spacing_inverse
from .qp_solver import QpSolver, QpStatus, QpResult, KktResiduals
from .sim_log import ControlDiagnostics

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """QP scheitert dauerhaft"""


@dataclass(frozen=True)
class DeepLccConfig:
    """
    Parameter des DeeP-LCC Reglers

    Gewichte w_s und w_u gelten für eine CAV, für m CAVs siehe table_defaults(m).
    """
    T_ini: int = 20
    N: int = 50
    N_c: int = 10
    w_v: float = 5.0
    w_s: float = 40.0
    w_u: float = 2.0
    lambda_g: float = 10.0
    lambda_y: float = 1e5
    s_tilde_min: float = -0.4
    s_tilde_max: float = 1.2
    a_min: float = -0.4
    a_max: float = 0.4
    qp_eps_abs: float = 1e-6
    qp_eps_rel: float = 1e-6
    qp_max_iter: int = 20000
    max_consecutive_failures: int = 10

    def __post_init__(self):
        if self.T_ini < 1 or self.N < 1:
            raise ValueError(f"T_ini und N müssen >= 1 sein: T_ini={self.T_ini}, N={self.N}")
        if not 1 <= self.N_c <= self.N:
            raise ValueError(f"N_c={self.N_c} muss in 1..N={self.N} liegen")
        for name in ("w_v", "w_s", "w_u", "lambda_g", "lambda_y"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} muss positiv sein: {getattr(self, name)}")
        if self.s_tilde_min >= self.s_tilde_max:
            raise ValueError(f"s_tilde_min={self.s_tilde_min} >= s_tilde_max={self.s_tilde_max}")
        if self.a_min >= self.a_max:
            raise ValueError(f"a_min={self.a_min} >= a_max={self.a_max}")

    @classmethod
    def table_defaults(cls, m: int = 1, **overrides) -> "DeepLccConfig":
        """Standardwerte mit Abstands- und Eingangsgewicht geteilt durch die CAV-Anzahl"""
        m = max(int(m), 1)
        values = dict(w_s=40.0 / m, w_u=2.0 / m)
        values.update(overrides)
        return cls(**values)

    def dims(self, n: int, m: int) -> HankelDims:
        return HankelDims(n=n, m=m, T_ini=self.T_ini, N=self.N)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DeepLccConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})


class PastBuffer:
    """
    Ringpuffer der letzten T_ini Abtastwerte von u, v_0 (roh) und y_raw
    """

    def __init__(self, T_ini: int, m: int, p: int):
        self.T_ini = T_ini
        self.m = m
        self.p = p
        self._u = deque(maxlen=T_ini)
        self._v0 = deque(maxlen=T_ini)
        self._y_raw = deque(maxlen=T_ini)

    def push(self, u, v0: float, y_raw):
        """
        Hängt einen Abtastschritt an, der älteste fällt bei vollem Puffer heraus

        Args:
            u: CAV-Eingänge des Schritts (m)
            v0: gemessene Kopf-Geschwindigkeit (roh, nicht um v* verschoben)
            y_raw: Rohausgang (n+m)

        Raises:
            ValueError: u oder y_raw haben die falsche Länge
        """
        u = np.asarray(u, dtype=float).reshape(-1)
        y_raw = np.asarray(y_raw, dtype=float).reshape(-1)
        if u.shape[0] != self.m or y_raw.shape[0] != self.p:
            raise ValueError(f"Puffer erwartet u({self.m}) und y_raw({self.p}), "
                             f"erhalten u({u.shape[0]}) und y_raw({y_raw.shape[0]})")
        self._u.append(u)
        self._v0.append(float(v0))
        self._y_raw.append(y_raw)

    @property
    def is_warm(self) -> bool:
        """True, sobald T_ini Schritte gespeichert sind"""
        return len(self._v0) == self.T_ini

    def __len__(self) -> int:
        return len(self._v0)

    def u_array(self) -> np.ndarray:
        """
        Gespeicherte Eingänge, ältester zuerst

        Returns:
            Matrix (len x m), bei leerem Puffer (0 x m)
        """
        return np.array(self._u).reshape(-1, self.m)

    def v0_array(self) -> np.ndarray:
        """Gespeicherte Kopf-Geschwindigkeiten (len), ältester zuerst"""
        return np.array(self._v0)

    def y_raw_array(self) -> np.ndarray:
        """
        Gespeicherte Rohausgänge, ältester zuerst

        Returns:
            Matrix (len x (n+m)), bei leerem Puffer (0 x (n+m))
        """
        return np.array(self._y_raw).reshape(-1, self.p)

    def clear(self):
        """Leert den Puffer, is_warm ist danach False"""
        self._u.clear()
        self._v0.clear()
        self._y_raw.clear()

    def __repr__(self):
        return f"PastBuffer(T_ini={self.T_ini}, m={self.m}, p={self.p}, filled={len(self)})"


def estimate_equilibrium_velocity(buffer: PastBuffer) -> float:
    """
    Mittelwert der gespeicherten Kopf-Geschwindigkeiten

    Raises:
        ValueError: Puffer noch nicht gefüllt
    """
    if not buffer.is_warm:
        raise ValueError(f"Puffer nicht gefüllt ({len(buffer)}/{buffer.T_ini})")
    return float(np.mean(buffer.v0_array()))


def design_equilibrium_spacing(v_star: float, p: OvmParams) -> float:
    """Gleichgewichtsabstand zu v* über die Umkehrfunktion der Wunschgeschwindigkeit"""
    return equilibrium_spacing_inverse(v_star, p)


class _QpLayout:
    """Indexbereiche im Entscheidungsvektor z = (g, u, y, sigma_y)"""

    def __init__(self, dims: HankelDims, L: int):
        self.L = L
        self.n_u = dims.m * dims.N
        self.n_y = dims.p * dims.N
        self.n_sigma = dims.p * dims.T_ini
        self.g = slice(0, L)
        self.u = slice(L, L + self.n_u)
        self.y = slice(self.u.stop, self.u.stop + self.n_y)
        self.sigma = slice(self.y.stop, self.y.stop + self.n_sigma)
        self.size = self.sigma.stop


def spacing_selector(n: int, m: int, N: int):
    """Wählt aus y (N Schritte à n+m) die CAV-Abstandszeilen aus: I_N kron [0 I_m]"""
    block = sparse.hstack([sparse.csc_matrix((m, n)), sparse.identity(m, format="csc")])
    return sparse.kron(sparse.identity(N, format="csc"), block, format="csc")


@dataclass
class DeepLccProblem:
    """
    QP eines Zeitschritts

    Vergangenheitsvektoren zeitschrittweise: u_ini (T_ini x m), eps_ini (T_ini),
    y_ini (T_ini x (n+m)). eps_future ist der angenommene zukünftige
    externe Eingang (Nullvektor).
    """
    blocks: HankelBlocks
    cfg: DeepLccConfig
    eq: EquilibriumState
    u_ini: np.ndarray
    eps_ini: np.ndarray
    y_ini: np.ndarray
    eps_future: np.ndarray
    u_lower: float
    u_upper: float
    s_lower: float
    s_upper: float

    @property
    def dims(self) -> HankelDims:
        return self.blocks.dims

    @property
    def layout(self) -> _QpLayout:
        return _QpLayout(self.dims, self.blocks.L)

    def Q(self) -> np.ndarray:
        d = self.dims
        return np.diag(np.concatenate([np.full(d.n, self.cfg.w_v), np.full(d.m, self.cfg.w_s)]))

    def R(self) -> np.ndarray:
        return self.cfg.w_u * np.eye(self.dims.m)

    def cost_matrix(self):
        """P = 2 * blockdiag(lambda_g I, I_N kron R, I_N kron Q, lambda_y I)"""
        d, cfg = self.dims, self.cfg
        return 2 * sparse.block_diag([
            cfg.lambda_g * sparse.identity(self.blocks.L),
            sparse.kron(sparse.identity(d.N), sparse.csc_matrix(self.R())),
            sparse.kron(sparse.identity(d.N), sparse.csc_matrix(self.Q())),
            cfg.lambda_y * sparse.identity(d.p * d.T_ini),
        ], format="csc")

    def constraint_matrix(self):
        """Gleichungen für Vergangenheit/Zukunft, danach Boxen für u und CAV-Abstände"""
        b, d = self.blocks, self.dims
        lay = self.layout
        I_u = sparse.identity(lay.n_u, format="csc")
        I_y = sparse.identity(lay.n_y, format="csc")
        I_s = sparse.identity(lay.n_sigma, format="csc")
        S = spacing_selector(d.n, d.m, d.N)
        return sparse.bmat([
            [sparse.csc_matrix(b.Up), None, None, None],
            [sparse.csc_matrix(b.Ep), None, None, None],
            [sparse.csc_matrix(b.Yp), None, None, -I_s],
            [sparse.csc_matrix(b.Uf), -I_u, None, None],
            [sparse.csc_matrix(b.Ef), None, None, None],
            [sparse.csc_matrix(b.Yf), None, -I_y, None],
            [None, I_u, None, None],
            [None, None, S, None],
        ], format="csc", dtype=float)

    def bounds(self):
        """(l, u) passend zu constraint_matrix()"""
        d = self.dims
        lay = self.layout
        rhs = np.concatenate([
            np.asarray(self.u_ini, dtype=float).reshape(-1),
            np.asarray(self.eps_ini, dtype=float).reshape(-1),
            np.asarray(self.y_ini, dtype=float).reshape(-1),
            np.zeros(lay.n_u),
            np.asarray(self.eps_future, dtype=float).reshape(-1),
            np.zeros(lay.n_y),
        ])
        n_box = d.m * d.N
        lower = np.concatenate([rhs, np.full(n_box, self.u_lower), np.full(n_box, self.s_lower)])
        upper = np.concatenate([rhs, np.full(n_box, self.u_upper), np.full(n_box, self.s_upper)])
        return lower, upper

    def to_qp(self):
        """(P, q, A, l, u) für QpSolver"""
        l, u = self.bounds()
        return self.cost_matrix(), np.zeros(self.layout.size), self.constraint_matrix(), l, u


def assemble_problem(blocks: HankelBlocks, buffer: PastBuffer, eq: EquilibriumState,
                     cfg: DeepLccConfig) -> DeepLccProblem:
    """
    Baut das QP aus Hankel-Blöcken, Vergangenheitspuffer und aktuellem Gleichgewicht

    Raises:
        ValueError: Dimensionsfehler oder Puffer nicht gefüllt
    """
    d = blocks.dims
    if (d.T_ini, d.N) != (cfg.T_ini, cfg.N):
        raise ValueError(f"Hankel-Blöcke (T_ini={d.T_ini}, N={d.N}) passen nicht zur "
                         f"Konfiguration (T_ini={cfg.T_ini}, N={cfg.N})")
    if (buffer.T_ini, buffer.m, buffer.p) != (d.T_ini, d.m, d.p):
        raise ValueError(f"Puffer {buffer} passt nicht zu {d}")
    if not buffer.is_warm:
        raise ValueError(f"Puffer nicht gefüllt ({len(buffer)}/{buffer.T_ini})")

    return DeepLccProblem(
        blocks=blocks,
        cfg=cfg,
        eq=eq,
        u_ini=buffer.u_array(),
        eps_ini=buffer.v0_array() - eq.v_star,
        y_ini=raw_to_error_output(buffer.y_raw_array(), eq, d.n, d.m),
        eps_future=np.zeros(d.N),
        u_lower=cfg.a_min,
        u_upper=cfg.a_max,
        s_lower=cfg.s_tilde_min,
        s_upper=cfg.s_tilde_max,
    )


@dataclass
class QpSolution:
    """Aufgeteilte QP-Lösung (Vektoren None ohne Lösung)"""
    status: QpStatus
    u_opt: Optional[np.ndarray]
    y_opt: Optional[np.ndarray]
    g_opt: Optional[np.ndarray]
    sigma_opt: Optional[np.ndarray]
    objective: float
    iterations: int
    solve_time: float
    residuals: Optional[KktResiduals] = None
    z: Optional[np.ndarray] = None
    dual: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.status in (QpStatus.CONVERGED, QpStatus.INACCURATE)

    @property
    def slack_norm(self) -> float:
        return float(np.linalg.norm(self.sigma_opt)) if self.sigma_opt is not None else float("nan")


def _unpack(problem: DeepLccProblem, result: QpResult, residuals: Optional[KktResiduals]) -> QpSolution:
    lay = problem.layout
    if result.x is None:
        return QpSolution(status=result.status, u_opt=None, y_opt=None, g_opt=None, sigma_opt=None,
                          objective=result.objective, iterations=result.iterations,
                          solve_time=result.solve_time)
    z = result.x
    return QpSolution(
        status=result.status,
        u_opt=z[lay.u].copy(),
        y_opt=z[lay.y].copy(),
        g_opt=z[lay.g].copy(),
        sigma_opt=z[lay.sigma].copy(),
        objective=result.objective,
        iterations=result.iterations,
        solve_time=result.solve_time,
        residuals=residuals,
        z=z,
        dual=result.y,
    )


def solve_qp(problem: DeepLccProblem, tol: float = 1e-6, max_iter: int = 20000) -> QpSolution:
    """
    Löst ein einzelnes DeeP-LCC QP mit frischem Workspace

    Unzulässige Boxen (untere über oberer Schranke) liefern INFEASIBLE ohne Lösung.
    """
    solver = QpSolver(eps_abs=tol, eps_rel=tol, max_iter=max_iter)
    solver.setup(*problem.to_qp())
    result = solver.solve()
    return _unpack(problem, result, solver.residuals(result))


@dataclass
class ControlStepResult:
    """
    Ergebnis eines Regler-Aufrufs

    applied_inputs: m x N_c Beschleunigungen, fallback_mask: Spalten, für die
    der Aufrufer die OVM-Beschleunigung einsetzen soll
    """
    applied_inputs: np.ndarray
    fallback_mask: np.ndarray
    equilibrium: EquilibriumState
    diagnostics: ControlDiagnostics
    solution: QpSolution


class DeepLccController:
    """
    Zustandsbehafteter DeeP-LCC Regler

    Der OSQP-Workspace wird beim ersten Aufruf aufgebaut und danach nur noch
    über die Schranken aktualisiert (P und A bleiben fest).
    """

    def __init__(self, blocks: HankelBlocks, cfg: DeepLccConfig, params: OvmParams):
        d = blocks.dims
        if (d.T_ini, d.N) != (cfg.T_ini, cfg.N):
            raise ValueError(f"Hankel-Blöcke {d} passen nicht zu T_ini={cfg.T_ini}, N={cfg.N}")
        self.blocks = blocks
        self.cfg = cfg
        self.params = params
        self.solver = QpSolver(eps_abs=cfg.qp_eps_abs, eps_rel=cfg.qp_eps_rel, max_iter=cfg.qp_max_iter)
        self.history: List[ControlDiagnostics] = []

        self._plan: Optional[np.ndarray] = None   # N x m, letzte erfolgreiche Lösung
        self._plan_offset = 0
        self._last_z: Optional[np.ndarray] = None
        self._failures = 0

    def new_buffer(self) -> PastBuffer:
        """Leerer Vergangenheitspuffer passend zu T_ini, m und n+m des Reglers"""
        d = self.blocks.dims
        return PastBuffer(d.T_ini, d.m, d.p)

    def step(self, buffer: PastBuffer, t: float = 0.0, step_index: int = 0) -> ControlStepResult:
        """
        Ein Regler-Aufruf: v* schätzen, s* entwerfen, QP lösen, erste N_c Eingänge liefern

        Raises:
            ValueError: Puffer nicht gefüllt
            SolverError: zu viele aufeinanderfolgende Fehlschläge
        """
        cfg, d = self.cfg, self.blocks.dims
        v_est = estimate_equilibrium_velocity(buffer)
        v_star = float(np.clip(v_est, 0.0, self.params.v_max))
        eq = EquilibriumState(v_star, design_equilibrium_spacing(v_star, self.params))

        problem = assemble_problem(self.blocks, buffer, eq, cfg)
        l, u = problem.bounds()
        if not self.solver.is_setup:
            self.solver.setup(problem.cost_matrix(), np.zeros(problem.layout.size),
                              problem.constraint_matrix(), l, u)
        else:
            self.solver.update(l=l, u=u)
            if self._last_z is not None:
                self.solver.warm_start(x=self._shifted(self._last_z, problem))

        result = self.solver.solve()
        solution = _unpack(problem, result, None)

        applied = np.zeros((d.m, cfg.N_c))
        mask = np.zeros(cfg.N_c, dtype=bool)
        if solution.ok:
            plan = solution.u_opt.reshape(d.N, d.m)
            applied = np.clip(plan[:cfg.N_c].T, cfg.a_min, cfg.a_max)
            self._plan = plan
            self._plan_offset = cfg.N_c
            self._last_z = solution.z
            self._failures = 0
        else:
            self._failures += 1
            logger.warning(f"QP fehlgeschlagen bei t={t:.2f}s ({result.status.value}, "
                           f"{self._failures}x in Folge)")
            if self._failures > cfg.max_consecutive_failures:
                raise SolverError(f"QP {self._failures}x in Folge fehlgeschlagen "
                                  f"(letzter Status: {result.status.value})")
            mask[:] = True
            if self._plan is not None:
                remaining = self._plan[self._plan_offset:self._plan_offset + cfg.N_c]
                k = remaining.shape[0]
                applied[:, :k] = remaining.T
                mask[:k] = False
                self._plan_offset += cfg.N_c

        diag = ControlDiagnostics(
            step=step_index,
            t=t,
            status=result.status.value,
            objective=solution.objective,
            slack_norm=solution.slack_norm,
            iterations=solution.iterations,
            solve_time=solution.solve_time,
            v_star=eq.v_star,
            s_star=eq.s_star,
            fallback=not solution.ok,
            u_min=float(applied[:, ~mask].min()) if (~mask).any() else float("nan"),
            u_max=float(applied[:, ~mask].max()) if (~mask).any() else float("nan"),
        )
        if solution.ok:
            diag.plan_u_min = float(solution.u_opt.min())
            diag.plan_u_max = float(solution.u_opt.max())
            spacing_rows = solution.y_opt.reshape(d.N, d.p)[:, d.n:]
            diag.spacing_pred_min = float(spacing_rows.min())
            diag.spacing_pred_max = float(spacing_rows.max())
        self.history.append(diag)

        return ControlStepResult(applied_inputs=applied, fallback_mask=mask, equilibrium=eq,
                                 diagnostics=diag, solution=solution)

    def _shifted(self, z: np.ndarray, problem: DeepLccProblem) -> np.ndarray:
        """Vorherige Lösung um N_c Schritte verschoben, Ende mit Nullen aufgefüllt"""
        d, lay, n_c = problem.dims, problem.layout, self.cfg.N_c
        z_new = np.zeros_like(z)
        z_new[lay.g] = z[lay.g]
        u = z[lay.u].reshape(d.N, d.m)
        y = z[lay.y].reshape(d.N, d.p)
        z_new[lay.u] = np.vstack([u[n_c:], np.zeros((n_c, d.m))]).reshape(-1)
        z_new[lay.y] = np.vstack([y[n_c:], np.zeros((n_c, d.p))]).reshape(-1)
        return z_new

    def state_dump(self) -> str:
        """Textueller Zustands-Dump aller bisherigen Aufrufe"""
        lines = ["DeeP-LCC Regler-Zustand",
                 f"T_ini={self.cfg.T_ini} N={self.cfg.N} N_c={self.cfg.N_c} "
                 f"L={self.blocks.L} lambda_g={self.cfg.lambda_g} lambda_y={self.cfg.lambda_y}",
                 "-" * 80]
        lines.extend(diag.format() for diag in self.history)
        return "\n".join(lines) + "\n"


def control_step(blocks: HankelBlocks, buffer: PastBuffer, cfg: DeepLccConfig,
                 p: OvmParams) -> ControlStepResult:
    """Zustandsloser Regler-Aufruf (ohne Warmstart und ohne gespeicherten Plan)"""
    return DeepLccController(blocks, cfg, p).step(buffer)
