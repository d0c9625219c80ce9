"""Guide weights, the nonlocal patch regularizer, and its proximal maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, MultibandImage, roll
from .linops import DifferenceFilter, FilterBank, search_window

PENALTIES = ("wl1", "wl2", "swl2")


@dataclass(frozen=True, eq=False)
class NlprWeights:
    """``n_h x |W|`` array of guide weights, column order = ``shifts``."""

    grid: Grid
    shifts: tuple
    values: np.ndarray = field(repr=False)
    h: float

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.grid.n, len(self.shifts)):
            raise ValueError(f"weights of shape {values.shape} do not match grid and window")
        if not np.all(np.isfinite(values)):
            raise ValueError("weights must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shifts", tuple(tuple(int(v) for v in t) for t in self.shifts))

    @property
    def stack(self) -> np.ndarray:
        """``(|W|, p, q)`` view: one weight map per shift."""
        return self.values.T.reshape(len(self.shifts), self.grid.p, self.grid.q)

    def column(self, tau) -> np.ndarray:
        return self.stack[self.shifts.index(tuple(tau))]

    def with_floor(self, floor: float = 1e-12) -> "NlprWeights":
        """Zero weights below ``floor``; those pairs then carry no penalty."""
        return NlprWeights(self.grid, self.shifts, np.where(self.values < floor, 0.0, self.values), self.h)


def patch_distance_sq(cube: np.ndarray, tau, K: int) -> np.ndarray:
    """``||P_{i tau}(Y)||_2^2`` for every pixel ``i`` as a ``p x q`` map."""
    sq = ((cube - roll(cube, tau)) ** 2).sum(axis=2)
    out = np.zeros(sq.shape)
    for k1 in range(-K, K + 1):
        for k2 in range(-K, K + 1):
            out += roll(sq, (k1, k2))
    return out


def compute_weights(guide: MultibandImage, S: int, K: int, h: float, include_zero: bool = False, shifts=None) -> NlprWeights:
    """``w(i, tau) = exp(-||P_{i tau}(guide)||^2 / h^2)``."""
    if not h > 0:
        raise ValueError(f"smoothing parameter h must be positive, got {h}")
    taus = search_window(S, include_zero) if shifts is None else [tuple(t) for t in shifts]
    cube = guide.cube
    cols = [np.exp(-patch_distance_sq(cube, tau, K) / h**2).ravel() for tau in taus]
    return NlprWeights(guide.grid, taus, np.stack(cols, axis=1), float(h))


def unit_weights(grid: Grid, shifts, h: float = 1.0) -> NlprWeights:
    return NlprWeights(grid, shifts, np.ones((grid.n, len(shifts))), h)


def as_bank(filters) -> FilterBank:
    if isinstance(filters, FilterBank):
        return filters
    filters = list(filters)
    shifts = list(dict.fromkeys(f.tau for f in filters))
    K = max((max(abs(f.k[0]), abs(f.k[1])) for f in filters), default=0)
    bank = FilterBank(shifts, K)
    if bank.filters != filters:
        raise ValueError("filters must be the full shift-major (tau, k) product")
    return bank


def _check_pairing(w: NlprWeights, bank: FilterBank):
    if list(w.shifts) != bank.shifts:
        raise ValueError("weight shifts and filter shifts differ")


def penalty_value(stack: np.ndarray, w: NlprWeights, bank: FilterBank, penalty: str = "wl1") -> float:
    """Weighted penalty of a ``(F, p, q, L)`` stack of filter responses."""
    _check_pairing(w, bank)
    T, P = bank.n_shifts, bank.n_offsets
    grouped = stack.reshape((T, P) + stack.shape[1:])
    if penalty == "wl1":
        per = np.abs(grouped).sum(axis=(1, 4))
    elif penalty == "wl2":
        per = np.sqrt((grouped**2).sum(axis=(1, 4)))
    elif penalty == "swl2":
        per = (grouped**2).sum(axis=(1, 4))
    else:
        raise ValueError(f"unknown penalty {penalty!r}")
    return float((w.stack * per).sum())


def regularizer_value(X: MultibandImage, w: NlprWeights, filters, penalty: str = "wl1") -> float:
    """``sum_i sum_tau w(i, tau) ||P_{i tau}(X)||_1`` via the filter responses."""
    bank = as_bank(filters)
    if X.grid != w.grid:
        raise ValueError("image and weights live on different grids")
    return penalty_value(bank.forward(X.cube), w, bank, penalty)


def soft_threshold(x, mu):
    """``sign(x) * max(|x| - mu, 0)``, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(mu < 0):
        raise ValueError("threshold must be nonnegative")
    out = np.sign(x) * np.maximum(np.abs(x) - mu, 0.0)
    return float(out) if out.ndim == 0 else out


def q_prox(Q_tilde: MultibandImage, w: NlprWeights, tau, lam2: float, rho: float) -> MultibandImage:
    """Entrywise shrinkage of one filter block with threshold ``lam2 w(i, tau) / rho``."""
    if lam2 < 0 or rho <= 0:
        raise ValueError("need lam2 >= 0 and rho > 0")
    thr = (lam2 / rho) * w.column(tau)
    return MultibandImage.from_cube(soft_threshold(Q_tilde.cube, thr[:, :, None]))


def prox_stack(V: np.ndarray, w: NlprWeights, bank: FilterBank, lam2: float, rho: float, penalty: str = "wl1",
               scale: np.ndarray | None = None) -> np.ndarray:
    """Prox of ``(lam2 / rho) * penalty`` applied to a full ``(F, p, q, L)`` stack.

    ``scale`` may carry a cached ``(lam2 / rho) * w`` of shape ``(T, 1, p, q, 1)``.
    """
    T, P = bank.n_shifts, bank.n_offsets
    if scale is None:
        scale = threshold_map(w, lam2, rho)
    grouped = V.reshape((T, P) + V.shape[1:])
    if penalty == "wl1":
        # v - clip(v, -mu, mu) == sign(v) * max(|v| - mu, 0)
        out = grouped - np.clip(grouped, -scale, scale)
    elif penalty == "wl2":
        norms = np.sqrt((grouped**2).sum(axis=(1, 4), keepdims=True))
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(norms > scale, 1.0 - scale / norms, 0.0)
        out = grouped * factor
    elif penalty == "swl2":
        out = grouped / (1.0 + 2.0 * scale)
    else:
        raise ValueError(f"unknown penalty {penalty!r}")
    return out.reshape(V.shape)


def threshold_map(w: NlprWeights, lam2: float, rho: float) -> np.ndarray:
    if lam2 < 0 or rho <= 0:
        raise ValueError("need lam2 >= 0 and rho > 0")
    return ((lam2 / rho) * w.stack)[:, None, :, :, None]


def filters_for(w: NlprWeights, K: int) -> list[DifferenceFilter]:
    """Difference filters paired with the given weights' shifts."""
    return FilterBank(w.shifts, K).filters
