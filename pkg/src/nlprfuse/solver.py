"""ADMM for guided nonlocal patch regularized fusion.

Splitting: ``P1 = B X``, ``P2 = X``, ``Q_tk = D_tk X``. Every subproblem is
closed form: the X-update is a Fourier-domain division, P1 uses the
diagonal mask algebra with a precomputed ``(E E^T + rho I)^{-1}``, P2 a
precomputed ``L_s x L_s`` matrix, and Q a weighted shrinkage.

The objective minimized is

    0.5 ||Y_l - S B X E||^2 + 0.5 lam1 ||Y_h - X E R||^2 + lam2 phi(X)

with ``phi`` the weighted patch penalty; the shrinkage threshold
``lam2 w / rho`` is the prox of exactly this weighting.

Arrays inside the solver are cubes ``(p, q, L_s)``; filter-indexed blocks
are stacks ``(F, p, q, L_s)``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import ndimage

from .frequency import FrequencyPlan, plan, solve_cube
from .grid import Grid, MultibandImage
from .linops import LOCAL_WINDOW, FilterBank, FusionOperators, search_window
from .nlpr import PENALTIES, NlprWeights, compute_weights, penalty_value, prox_stack, threshold_map, unit_weights

log = logging.getLogger(__name__)

WEIGHT_MODES = ("guided", "unit")
STRUCTURE_MODES = ("patch", "pixel")
WINDOW_MODES = ("nonlocal", "local")
INIT_MODES = ("upsample", "zero")


# Regularizer ablation: weighting x patch/pixel x nonlocal/local.
ABLATION_CASES = {
    "C1": dict(weight_mode="guided", structure_mode="patch", window_mode="nonlocal"),
    "C2": dict(weight_mode="unit", structure_mode="patch", window_mode="nonlocal"),
    "C3": dict(weight_mode="guided", structure_mode="pixel", window_mode="nonlocal"),
    "C4": dict(weight_mode="unit", structure_mode="pixel", window_mode="nonlocal"),
    "C5": dict(weight_mode="unit", structure_mode="pixel", window_mode="local"),
}


class DivergenceError(ArithmeticError):
    """A non-finite value appeared in an ADMM block."""


@dataclass(frozen=True)
class SolverConfig:
    lam1: float = 0.8
    lam2: float = 2e-4
    rho: float = 1e-3
    h: float = 0.15
    K: int = 1
    S: int = 1
    L_s: int = 4
    max_iters: int = 500
    tol_primal: float = 1e-6
    weight_mode: str = "guided"
    structure_mode: str = "patch"
    window_mode: str = "nonlocal"
    penalty_mode: str = "wl1"
    include_zero_shift: bool = False
    init: str = "upsample"
    seed: int = 0
    deterministic: bool = True
    memory_budget_mb: float = 2048.0
    weight_floor: float = 0.0

    def __post_init__(self):
        if self.lam1 < 0 or self.lam2 < 0:
            raise ValueError("lam1 and lam2 must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.K < 0 or self.S < 0:
            raise ValueError("patch and search radii must be nonnegative")
        if self.L_s < 1:
            raise ValueError("L_s must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.tol_primal > 0:
            raise ValueError("tol_primal must be positive")
        for name, allowed in (
            ("weight_mode", WEIGHT_MODES),
            ("structure_mode", STRUCTURE_MODES),
            ("window_mode", WINDOW_MODES),
            ("penalty_mode", PENALTIES),
            ("init", INIT_MODES),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def shifts(self) -> list[tuple[int, int]]:
        if self.window_mode == "local":
            return list(LOCAL_WINDOW)
        return search_window(self.S, self.include_zero_shift)

    @property
    def reg_K(self) -> int:
        """Patch radius of the regularizer (pixel mode regularizes single pixels)."""
        return self.K if self.structure_mode == "patch" else 0


@dataclass
class AdmmState:
    X: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    Q: np.ndarray
    Lam1: np.ndarray
    Lam2: np.ndarray
    Sig: np.ndarray
    keys: list = field(default_factory=list)
    iter: int = 0

    @classmethod
    def zeros(cls, grid: Grid, L_s: int, bank: FilterBank) -> "AdmmState":
        shape = grid.shape + (L_s,)
        stack = (len(bank),) + shape
        return cls(
            X=np.zeros(shape),
            P1=np.zeros(shape),
            P2=np.zeros(shape),
            Q=np.zeros(stack),
            Lam1=np.zeros(shape),
            Lam2=np.zeros(shape),
            Sig=np.zeros(stack),
            keys=bank.keys(),
        )

    def copy(self) -> "AdmmState":
        return AdmmState(
            self.X.copy(), self.P1.copy(), self.P2.copy(), self.Q.copy(),
            self.Lam1.copy(), self.Lam2.copy(), self.Sig.copy(), list(self.keys), self.iter,
        )

    def q_block(self, tau, k) -> np.ndarray:
        return self.Q[self.keys.index((tuple(tau), tuple(k)))]

    def sigma_block(self, tau, k) -> np.ndarray:
        return self.Sig[self.keys.index((tuple(tau), tuple(k)))]

    def blocks(self):
        yield "X", self.X
        yield "P1", self.P1
        yield "P2", self.P2
        yield "Q", self.Q
        yield "Lam1", self.Lam1
        yield "Lam2", self.Lam2
        yield "Sigma", self.Sig

    def check_finite(self):
        for name, arr in self.blocks():
            if not np.isfinite(arr.sum()) and not np.all(np.isfinite(arr)):
                raise DivergenceError(f"non-finite values in block {name} at iteration {self.iter}")


@dataclass
class IterationLog:
    """Per-iteration objective, relative primal residuals and timings."""

    records: list = field(default_factory=list)

    COLUMNS = ("iter", "objective", "r1", "r2", "r3", "ms")

    def append(self, **rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    @property
    def objective(self) -> np.ndarray:
        return self.column("objective")

    def to_csv(self, path=None, timing: bool = True) -> str:
        """CSV text; ``timing=False`` writes zeros in the wall-clock column so reruns compare byte-equal."""
        lines = [",".join(self.COLUMNS)]
        for r in self.records:
            ms = r["ms"] if timing else 0.0
            lines.append(f"{r['iter']},{r['objective']!r},{r['r1']!r},{r['r2']!r},{r['r3']!r},{ms:.6f}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass
class FusionProblem:
    """Observations, operators, weights and every cached factor the updates need."""

    Y_low: np.ndarray
    Y_high: MultibandImage
    ops: FusionOperators
    weights: NlprWeights
    bank: FilterBank
    cfg: SolverConfig
    fplan: FrequencyPlan = None
    F: np.ndarray = None
    EEt_inv: np.ndarray = None
    mask: np.ndarray = None
    SYEt: np.ndarray = None
    YhRtEt: np.ndarray = None
    thresholds: np.ndarray = None

    def blur(self, cube: np.ndarray, adjoint: bool = False) -> np.ndarray:
        if self.ops.blur.is_identity():
            return cube
        b_hat = self.fplan.b_hat
        f = np.fft.fft2(cube, axes=(0, 1)) * (np.conj(b_hat) if adjoint else b_hat)[:, :, None]
        return np.fft.ifft2(f, axes=(0, 1)).real

    @property
    def grid(self) -> Grid:
        return self.ops.grid

    @property
    def L_s(self) -> int:
        return self.ops.basis.dim


def state_bytes(grid: Grid, L_s: int, n_filters: int) -> int:
    """Memory of the ADMM state: ``2 (2 + F)`` primal/dual blocks plus X."""
    return (2 * (2 + n_filters) + 1) * grid.n * L_s * 8


def precompute(ops: FusionOperators, cfg: SolverConfig, bank: FilterBank | None = None):
    """Frequency plan, ``F = (I + lam1/rho E R R^T E^T)^{-1}`` and ``(E E^T + rho I)^{-1}``."""
    ops.check()
    if bank is None:
        bank = FilterBank(cfg.shifts, cfg.reg_K)
    E, R = ops.basis.E, ops.response.R
    L_s = E.shape[0]
    ER = E @ R
    F = np.linalg.inv(np.eye(L_s) + (cfg.lam1 / cfg.rho) * ER @ ER.T)
    EEt_inv = np.linalg.inv(E @ E.T + cfg.rho * np.eye(L_s))
    fplan = plan(ops.grid, ops.blur, bank.filters)
    return fplan, F, EEt_inv


def build_problem(Y_low, Y_high: MultibandImage, ops: FusionOperators, cfg: SolverConfig,
                  weights: NlprWeights | None = None, guide: MultibandImage | None = None) -> FusionProblem:
    """Validate shapes, build weights (from ``guide`` or ``Y_high``) and cache factors."""
    Y_low = np.asarray(Y_low, dtype=np.float64)
    grid = ops.grid
    if Y_low.shape[0] != ops.sampling.n_low:
        raise ValueError(f"Y_low has {Y_low.shape[0]} rows, mask keeps {ops.sampling.n_low}")
    if Y_high.grid != grid:
        raise ValueError(f"Y_high on {Y_high.grid}, operators on {grid}")
    ops.check(L_low=Y_low.shape[1], L_high=Y_high.bands)
    if ops.basis.dim != cfg.L_s:
        cfg = cfg.replace(L_s=ops.basis.dim)

    shifts = cfg.shifts
    bank = FilterBank(shifts, cfg.reg_K)
    need = state_bytes(grid, cfg.L_s, len(bank))
    if need > cfg.memory_budget_mb * 2**20:
        raise MemoryError(
            f"ADMM state needs {need / 2**20:.1f} MiB, budget is {cfg.memory_budget_mb:.1f} MiB"
        )
    log.info("ADMM state estimate %.1f MiB (%d filters)", need / 2**20, len(bank))

    if weights is None:
        if cfg.weight_mode == "unit":
            weights = unit_weights(grid, shifts, cfg.h)
        else:
            src = guide if guide is not None else Y_high
            weights = compute_weights(src, cfg.S, cfg.K, cfg.h, shifts=shifts)
    if list(weights.shifts) != bank.shifts:
        raise ValueError("weights were computed for a different search window")
    if cfg.weight_floor > 0:
        weights = weights.with_floor(cfg.weight_floor)

    fplan, F, EEt_inv = precompute(ops, cfg, bank)
    E, R = ops.basis.E, ops.response.R
    p, q = grid.shape
    SY = np.zeros((grid.n, Y_low.shape[1]))
    SY[ops.sampling.kept_rows] = Y_low
    SYEt = (SY @ E.T).reshape(p, q, -1)
    YhRtEt = (Y_high.data @ R.T @ E.T).reshape(p, q, -1)
    mask = ops.sampling.mask.reshape(p, q, 1).astype(np.float64)
    thresholds = threshold_map(weights, cfg.lam2, cfg.rho)
    return FusionProblem(Y_low, Y_high, ops, weights, bank, cfg, fplan, F, EEt_inv, mask, SYEt, YhRtEt, thresholds)


# ---------------------------------------------------------------- updates


def x_rhs(state: AdmmState, pb: FusionProblem) -> np.ndarray:
    """``C = B^T (P1 + Lam1) + P2 + Lam2 + sum D^T (Q + Sigma)``."""
    C = pb.blur(state.P1 + state.Lam1, adjoint=True)
    C = C + state.P2 + state.Lam2
    if len(pb.bank):
        C = C + pb.bank.adjoint(state.Q + state.Sig)
    return C


def x_update(state: AdmmState, pb: FusionProblem) -> np.ndarray:
    return solve_cube(pb.fplan, x_rhs(state, pb))


def p1_update(state: AdmmState, pb: FusionProblem, BX: np.ndarray | None = None) -> np.ndarray:
    if BX is None:
        BX = pb.blur(state.X)
    rho = pb.cfg.rho
    base = BX - state.Lam1
    on = (pb.SYEt + rho * base) @ pb.EEt_inv
    return pb.mask * on + (1.0 - pb.mask) * base


def p2_update(state: AdmmState, pb: FusionProblem) -> np.ndarray:
    rho, lam1 = pb.cfg.rho, pb.cfg.lam1
    return (state.X - state.Lam2 + (lam1 / rho) * pb.YhRtEt) @ pb.F


def q_update(state: AdmmState, pb: FusionProblem, DX: np.ndarray | None = None) -> np.ndarray:
    if DX is None:
        DX = pb.bank.forward(state.X)
    cfg = pb.cfg
    return prox_stack(DX - state.Sig, pb.weights, pb.bank, cfg.lam2, cfg.rho, cfg.penalty_mode, pb.thresholds)


def dual_update(state: AdmmState, BX: np.ndarray, DX: np.ndarray):
    """``Lam1 -= BX - P1``, ``Lam2 -= X - P2``, ``Sigma -= DX - Q``."""
    Lam1 = state.Lam1 - (BX - state.P1)
    Lam2 = state.Lam2 - (state.X - state.P2)
    Sig = state.Sig - (DX - state.Q)
    return Lam1, Lam2, Sig


def relative_residuals(state: AdmmState, BX: np.ndarray, DX: np.ndarray) -> tuple[float, float, float]:
    tiny = np.finfo(float).tiny

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), tiny))

    r3 = rel(DX, state.Q) if DX.size else 0.0
    return rel(BX, state.P1), rel(state.X, state.P2), r3


def objective(X: np.ndarray, pb: FusionProblem, DX: np.ndarray | None = None) -> float:
    """Fusion objective at ``X`` (cube), with ``lam2 * phi``."""
    ops, cfg = pb.ops, pb.cfg
    E, R = ops.basis.E, ops.response.R
    n = pb.grid.n
    Xm = X.reshape(n, -1)
    BX = pb.blur(X).reshape(n, -1)
    r_low = pb.Y_low - BX[ops.sampling.kept_rows] @ E
    r_high = pb.Y_high.data - Xm @ E @ R
    val = 0.5 * np.sum(r_low**2) + 0.5 * cfg.lam1 * np.sum(r_high**2)
    if cfg.lam2 > 0 and len(pb.bank):
        if DX is None:
            DX = pb.bank.forward(X)
        val += cfg.lam2 * penalty_value(DX, pb.weights, pb.bank, cfg.penalty_mode)
    return float(val)


def admm_step(state: AdmmState, pb: FusionProblem, timings: dict | None = None):
    """One Gauss-Seidel sweep X -> P1 -> P2 -> Q -> duals. Returns ``(BX, DX)``."""
    t0 = time.perf_counter()
    state.X = x_update(state, pb)
    t1 = time.perf_counter()
    BX = pb.blur(state.X)
    P1 = p1_update(state, pb, BX)
    P2 = p2_update(state, pb)
    DX = pb.bank.forward(state.X)
    Q = q_update(state, pb, DX)
    state.P1, state.P2, state.Q = P1, P2, Q
    t2 = time.perf_counter()
    state.Lam1, state.Lam2, state.Sig = dual_update(state, BX, DX)
    state.iter += 1
    if timings is not None:
        timings["x"] = timings.get("x", 0.0) + (t1 - t0)
        timings["pq"] = timings.get("pq", 0.0) + (t2 - t1)
    return BX, DX


# ---------------------------------------------------------------- driver


def upsample_init(pb: FusionProblem) -> np.ndarray:
    """Bicubic (periodic) upsampling of ``Y_low`` projected on the subspace."""
    ops = pb.ops
    grid = pb.grid
    Ll = pb.Y_low.shape[1]
    S = ops.sampling
    if S.factor is not None:
        d = S.factor
        low = pb.Y_low.reshape(grid.p // d, grid.q // d, Ll)
        rr, cc = np.meshgrid(np.arange(grid.p) / d, np.arange(grid.q) / d, indexing="ij")
        up = np.stack(
            [ndimage.map_coordinates(low[:, :, c], [rr, cc], order=3, mode="grid-wrap") for c in range(Ll)],
            axis=2,
        ).reshape(grid.n, Ll)
    else:
        up = np.tile(pb.Y_low.mean(axis=0), (grid.n, 1))
        up[S.kept_rows] = pb.Y_low
    E = ops.basis.E
    X0 = np.linalg.solve(E @ E.T, E @ up.T).T
    return X0.reshape(grid.p, grid.q, -1)


def initial_state(pb: FusionProblem, X0: np.ndarray | None = None) -> AdmmState:
    state = AdmmState.zeros(pb.grid, pb.L_s, pb.bank)
    if X0 is not None:
        state.X = np.array(X0, dtype=np.float64).reshape(state.X.shape)
    elif pb.cfg.init == "upsample":
        state.X = upsample_init(pb)
    return state


@dataclass
class FusionResult:
    X: MultibandImage
    Z: MultibandImage
    log: IterationLog
    state: AdmmState
    converged: bool


def run(pb: FusionProblem, state: AdmmState | None = None, callback=None) -> FusionResult:
    """Iterate until ``max_iters`` or all relative primal residuals fall below ``tol_primal``."""
    cfg = pb.cfg
    if state is None:
        state = initial_state(pb)
    ilog = IterationLog()
    converged = False
    for _ in range(cfg.max_iters):
        t0 = time.perf_counter()
        BX, DX = admm_step(state, pb)
        ms = 1e3 * (time.perf_counter() - t0)
        state.check_finite()
        r1, r2, r3 = relative_residuals(state, BX, DX)
        obj = objective(state.X, pb, DX)
        ilog.append(iter=state.iter, objective=obj, r1=r1, r2=r2, r3=r3, ms=ms)
        if callback is not None:
            callback(state, ilog)
        if max(r1, r2, r3) < cfg.tol_primal:
            converged = True
            break
    grid = pb.grid
    X = MultibandImage(grid, state.X.reshape(grid.n, -1))
    Z = MultibandImage(grid, X.data @ pb.ops.basis.E)
    return FusionResult(X, Z, ilog, state, converged)


def solve(Y_low, Y_high: MultibandImage, ops: FusionOperators, weights: NlprWeights | None, cfg: SolverConfig,
          X0=None, guide: MultibandImage | None = None, callback=None) -> FusionResult:
    """Build the problem and run ADMM from zero duals."""
    pb = build_problem(Y_low, Y_high, ops, cfg, weights=weights, guide=guide)
    state = initial_state(pb, X0)
    return run(pb, state, callback)


def stacked_operator(X: np.ndarray, pb: FusionProblem) -> np.ndarray:
    """``A(X) = (B X; X; D X)`` flattened; injective because of the identity block."""
    BX = pb.blur(X)
    DX = pb.bank.forward(X)
    return np.concatenate([BX.ravel(), X.ravel(), DX.ravel()])


def recover_from_stacked(v: np.ndarray, grid: Grid, L_s: int) -> np.ndarray:
    """Left inverse of ``stacked_operator`` reading the identity block."""
    n = grid.n * L_s
    return v[n:2 * n].reshape(grid.p, grid.q, L_s).copy()


def augmented_lagrangian(state: AdmmState, pb: FusionProblem) -> float:
    """Value of the augmented Lagrangian (with ``lam2 * g``) at a state."""
    ops, cfg = pb.ops, pb.cfg
    E, R = ops.basis.E, ops.response.R
    n = pb.grid.n
    rho = cfg.rho
    P1 = state.P1.reshape(n, -1)
    P2 = state.P2.reshape(n, -1)
    val = 0.5 * np.sum((pb.Y_low - P1[ops.sampling.kept_rows] @ E) ** 2)
    val += 0.5 * cfg.lam1 * np.sum((pb.Y_high.data - P2 @ E @ R) ** 2)
    if len(pb.bank):
        val += cfg.lam2 * penalty_value(state.Q, pb.weights, pb.bank, cfg.penalty_mode)
    BX = pb.blur(state.X)
    DX = pb.bank.forward(state.X)
    val += 0.5 * rho * np.sum((state.P1 - BX + state.Lam1) ** 2)
    val += 0.5 * rho * np.sum((state.P2 - state.X + state.Lam2) ** 2)
    val += 0.5 * rho * np.sum((state.Q - DX + state.Sig) ** 2)
    return float(val)
