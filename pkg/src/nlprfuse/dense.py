"""Dense reference paths for tiny grids.

Everything here assembles explicit ``n_h x n_h`` matrices, so it is only
usable on small problems. These routines exist to cross-check the FFT and
sparse code in the solver and to time the naive X-update for the benchmark.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .grid import Grid, MultibandImage, PatchSpec
from .linops import BlurFilter, DifferenceFilter, FusionOperators
from .nlpr import NlprWeights, soft_threshold

MAX_DENSE_PIXELS = 400


def _guard(grid: Grid, limit: int = MAX_DENSE_PIXELS):
    if grid.n > limit:
        raise ValueError(f"dense path refuses {grid.p}x{grid.q} ({grid.n} pixels > {limit})")


def _flat(grid: Grid, a, b) -> int:
    return (a % grid.p) * grid.q + (b % grid.q)


def blur_matrix(B: BlurFilter, grid: Grid) -> np.ndarray:
    """Circulant matrix of ``(B x)(i) = sum_j b(j) x(i - j)``."""
    M = np.zeros((grid.n, grid.n))
    ca, cb = B.center
    for a in range(B.taps.shape[0]):
        for b in range(B.taps.shape[1]):
            j1, j2 = a - ca, b - cb
            for i1 in range(grid.p):
                for i2 in range(grid.q):
                    M[_flat(grid, i1, i2), _flat(grid, i1 - j1, i2 - j2)] += B.taps[a, b]
    return M


def difference_matrix(f: DifferenceFilter, grid: Grid) -> np.ndarray:
    """Row ``i`` holds +1 at ``i - k`` and -1 at ``i - tau - k``."""
    M = np.zeros((grid.n, grid.n))
    (t1, t2), (k1, k2) = f.tau, f.k
    for i1 in range(grid.p):
        for i2 in range(grid.q):
            r = _flat(grid, i1, i2)
            M[r, _flat(grid, i1 - k1, i2 - k2)] += 1.0
            M[r, _flat(grid, i1 - t1 - k1, i2 - t2 - k2)] -= 1.0
    return M


def patch_gram(grid: Grid, shifts, K: int) -> np.ndarray:
    """``sum_i sum_tau P_it^T P_it`` for one band, built patch by patch."""
    G = np.zeros((grid.n, grid.n))
    offs = PatchSpec(K).offsets()
    i1, i2 = np.meshgrid(np.arange(grid.p), np.arange(grid.q), indexing="ij")
    i1, i2 = i1.ravel(), i2.ravel()
    for t1, t2 in shifts:
        for k1, k2 in offs:
            a = ((i1 - k1) % grid.p) * grid.q + (i2 - k2) % grid.q
            b = ((i1 - t1 - k1) % grid.p) * grid.q + (i2 - t2 - k2) % grid.q
            np.add.at(G, (a, a), 1.0)
            np.add.at(G, (b, b), 1.0)
            np.add.at(G, (a, b), -1.0)
            np.add.at(G, (b, a), -1.0)
    return G


def x_system_matrix(grid: Grid, B: BlurFilter, shifts, K: int) -> np.ndarray:
    """``I + B^T B + sum P^T P``; shared by every band."""
    Bm = blur_matrix(B, grid)
    return np.eye(grid.n) + Bm.T @ Bm + patch_gram(grid, shifts, K)


def dense_x_solve(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Direct solve of ``A X = C`` with ``C`` a ``(p, q, L)`` cube."""
    p, q, L = C.shape
    return np.linalg.solve(A, C.reshape(p * q, L)).reshape(p, q, L)


def cg_x_solve(A: np.ndarray, C: np.ndarray, rtol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """Band-by-band conjugate gradients with dense matrix-vector products."""
    p, q, L = C.shape
    n = p * q
    op = LinearOperator((n, n), matvec=lambda v: A @ v, dtype=np.float64)
    out = np.empty((n, L))
    rhs = C.reshape(n, L)
    for c in range(L):
        out[:, c], info = cg(op, rhs[:, c], rtol=rtol, atol=0.0, maxiter=maxiter)
        if info < 0:
            raise ArithmeticError("conjugate gradients broke down")
    return out.reshape(p, q, L)


@dataclass
class DenseProblem:
    """Explicit matrices for one fusion instance."""

    grid: Grid
    Bm: np.ndarray
    Sm: np.ndarray
    Dm: list
    keys: list
    A: np.ndarray
    E: np.ndarray
    R: np.ndarray
    Y_low: np.ndarray
    Y_high: np.ndarray
    w: np.ndarray  # (F, n_h): weight of each filter row
    lam1: float
    lam2: float
    rho: float

    def objective(self, X: np.ndarray) -> float:
        """``0.5 ||Y_l - S B X E||^2 + 0.5 lam1 ||Y_h - X E R||^2 + lam2 sum w |D X|``."""
        r1 = self.Y_low - self.Sm @ self.Bm @ X @ self.E
        r2 = self.Y_high - X @ self.E @ self.R
        reg = sum(float(np.sum(self.w[f][:, None] * np.abs(D @ X))) for f, D in enumerate(self.Dm))
        return float(0.5 * np.sum(r1**2) + 0.5 * self.lam1 * np.sum(r2**2) + self.lam2 * reg)


def dense_problem(Y_low, Y_high: MultibandImage, ops: FusionOperators, weights: NlprWeights, K: int,
                  lam1: float, lam2: float, rho: float, limit: int = MAX_DENSE_PIXELS) -> DenseProblem:
    grid = ops.grid
    _guard(grid, limit)
    offs = PatchSpec(K).offsets()
    filters = [DifferenceFilter(t, k) for t in weights.shifts for k in offs]
    Sm = np.eye(grid.n)[ops.sampling.kept_rows]
    wcols = {tau: weights.values[:, j] for j, tau in enumerate(weights.shifts)}
    return DenseProblem(
        grid=grid,
        Bm=blur_matrix(ops.blur, grid),
        Sm=Sm,
        Dm=[difference_matrix(f, grid) for f in filters],
        keys=[(f.tau, f.k) for f in filters],
        A=x_system_matrix(grid, ops.blur, weights.shifts, K),
        E=np.array(ops.basis.E),
        R=np.array(ops.response.R),
        Y_low=np.asarray(Y_low, dtype=np.float64),
        Y_high=np.array(Y_high.data),
        w=np.stack([wcols[f.tau] for f in filters]) if filters else np.zeros((0, grid.n)),
        lam1=float(lam1),
        lam2=float(lam2),
        rho=float(rho),
    )


@dataclass
class DenseState:
    """Matrix-shaped ADMM state: every block is ``n_h x L_s``."""

    X: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    Q: list
    Lam1: np.ndarray
    Lam2: np.ndarray
    Sig: list


def dense_step(st: DenseState, dp: DenseProblem) -> DenseState:
    """One sweep of the same splitting, with every block computed from explicit matrices."""
    rho, E = dp.rho, dp.E
    L_s = E.shape[0]
    C = dp.Bm.T @ (st.P1 + st.Lam1) + st.P2 + st.Lam2
    for D, Q, S in zip(dp.Dm, st.Q, st.Sig):
        C = C + D.T @ (Q + S)
    X = np.linalg.solve(dp.A, C)

    BX = dp.Bm @ X
    P1 = BX - st.Lam1
    lhs = E @ E.T + rho * np.eye(L_s)
    kept = dp.Sm.argmax(axis=1)
    for row, pix in enumerate(kept):
        rhs = dp.Y_low[row] @ E.T + rho * (BX[pix] - st.Lam1[pix])
        P1[pix] = np.linalg.solve(lhs, rhs)

    ER = E @ dp.R
    P2 = np.linalg.solve(
        (dp.lam1 * ER @ ER.T + rho * np.eye(L_s)).T,
        (dp.lam1 * dp.Y_high @ ER.T + rho * (X - st.Lam2)).T,
    ).T

    Q = []
    DX = []
    for f, (D, S) in enumerate(zip(dp.Dm, st.Sig)):
        d = D @ X
        DX.append(d)
        Q.append(soft_threshold(d - S, (dp.lam2 / rho) * dp.w[f][:, None]))

    Lam1 = st.Lam1 - (BX - P1)
    Lam2 = st.Lam2 - (X - P2)
    Sig = [S - (d - q) for S, d, q in zip(st.Sig, DX, Q)]
    return DenseState(X, P1, P2, Q, Lam1, Lam2, Sig)


def dense_oracle_solve(Y_low, Y_high: MultibandImage, ops: FusionOperators, weights: NlprWeights, K: int,
                       lam1: float, lam2: float, rho: float, X0: np.ndarray, iters: int) -> np.ndarray:
    """Run ``iters`` dense ADMM sweeps from ``X0`` (an ``n_h x L_s`` matrix) and zero duals."""
    dp = dense_problem(Y_low, Y_high, ops, weights, K, lam1, lam2, rho)
    n, L_s = dp.grid.n, dp.E.shape[0]
    X0 = np.asarray(X0, dtype=np.float64).reshape(n, L_s)
    z = np.zeros((n, L_s))
    st = DenseState(X0.copy(), z.copy(), z.copy(), [z.copy() for _ in dp.Dm], z.copy(), z.copy(),
                    [z.copy() for _ in dp.Dm])
    for _ in range(iters):
        st = dense_step(st, dp)
    return st.X


def subgradient_oracle(dp: DenseProblem, X0: np.ndarray, iters: int = 100_000, a: float | None = None):
    """Diminishing-step subgradient descent ``X <- X - (a / sqrt(t)) g``.

    Returns ``(best_X, best_objective, history)`` where history samples the
    best objective every 1000 steps.
    """
    n = dp.grid.n
    L_s = dp.E.shape[0]
    # every difference row has one +1 and one -1; read their columns off the dense matrices
    Dall = np.vstack(dp.Dm) if dp.Dm else np.zeros((0, n))
    plus = np.argmax(Dall > 0, axis=1)
    minus = np.argmax(Dall < 0, axis=1)
    wcol = dp.w.reshape(-1, 1)
    lam_w = np.repeat(dp.lam2 * wcol, L_s, axis=1)
    pflat = (plus[:, None] * L_s + np.arange(L_s)).ravel()
    mflat = (minus[:, None] * L_s + np.arange(L_s)).ravel()
    SB = dp.Sm @ dp.Bm
    ER = dp.E @ dp.R
    H_low = SB.T @ SB
    G_low = SB.T @ dp.Y_low @ dp.E.T
    G_high = dp.lam1 * dp.Y_high @ ER.T
    EEt = dp.E @ dp.E.T
    ERRE = dp.lam1 * ER @ ER.T
    if a is None:
        # inverse of a crude Lipschitz bound of the smooth part
        a = 1.0 / (np.linalg.norm(H_low, 2) * np.linalg.norm(EEt, 2) + np.linalg.norm(ERRE, 2))

    def f(X):
        r1 = dp.Y_low - SB @ X @ dp.E
        r2 = dp.Y_high - X @ ER
        return float(0.5 * np.sum(r1**2) + 0.5 * dp.lam1 * np.sum(r2**2)
                     + np.sum(lam_w * np.abs(np.take(X, plus, axis=0) - np.take(X, minus, axis=0))))

    X = np.array(X0, dtype=np.float64).reshape(dp.grid.n, -1)
    best_X, best = X.copy(), f(X)
    history = []
    for t in range(1, iters + 1):
        g = H_low @ X @ EEt - G_low + X @ ERRE - G_high
        if plus.size:
            v = np.copysign(lam_w, np.take(X, plus, axis=0) - np.take(X, minus, axis=0)).ravel()
            g += (np.bincount(pflat, v, n * L_s) - np.bincount(mflat, v, n * L_s)).reshape(n, L_s)
        X = X - (a / np.sqrt(t)) * g
        if t % 50 == 0 or t == iters:
            val = f(X)
            if val < best:
                best, best_X = val, X.copy()
        if t % 1000 == 0:
            history.append(best)
    return best_X, best, history


def least_squares_oracle(Y_low, Y_high: MultibandImage, ops: FusionOperators, lam1: float) -> np.ndarray:
    """Closed-form minimizer of the two data terms (``lam2 = 0``) via Kronecker normal equations."""
    grid = ops.grid
    _guard(grid)
    E, R = np.array(ops.basis.E), np.array(ops.response.R)
    SB = np.eye(grid.n)[ops.sampling.kept_rows] @ blur_matrix(ops.blur, grid)
    # row-major vec(A X C) = kron(A, C^T) vec(X)
    M1 = np.kron(SB, E.T)
    M2 = np.sqrt(lam1) * np.kron(np.eye(grid.n), (E @ R).T)
    lhs = M1.T @ M1 + M2.T @ M2
    rhs = M1.T @ np.asarray(Y_low).ravel() + np.sqrt(lam1) * M2.T @ np.asarray(Y_high.data).ravel()
    return np.linalg.solve(lhs, rhs).reshape(grid.n, E.shape[0])


def time_x_updates(grid: Grid, L_s: int, B: BlurFilter, shifts, K: int, fast_solve, repeats: int = 3,
                   seed: int = 0, cg_rtol: float = 1e-10, limit: int = 64 * 64):
    """Median milliseconds of ``fast_solve(C)`` and CG on the assembled dense system."""
    _guard(grid, limit)
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((grid.p, grid.q, L_s))
    A = x_system_matrix(grid, B, shifts, K)
    fast, slow = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        Xf = fast_solve(C)
        fast.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        Xd = cg_x_solve(A, C, rtol=cg_rtol)
        slow.append(time.perf_counter() - t0)
    err = float(np.linalg.norm(Xf - Xd) / np.linalg.norm(Xd))
    return 1e3 * float(np.median(fast)), 1e3 * float(np.median(slow)), err
