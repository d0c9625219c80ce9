"""Degradation operators and the two-tap patch-difference filters.

All spatial operators act on periodic grids. Blur is applied through the
DFT; difference filters are applied with two circular shifts, which is
cheaper than any transform for a two-tap kernel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .grid import Grid, MultibandImage, roll

log = logging.getLogger(__name__)

STARCK_MURTAGH_1D = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _check_grid(expected: Grid, img: MultibandImage):
    if img.grid != expected:
        raise ValueError(f"grid mismatch: operator on {expected}, image on {img.grid}")


# ---------------------------------------------------------------- blur


@dataclass(frozen=True, eq=False)
class BlurFilter:
    """Circular convolution kernel.

    ``taps`` is a small array with odd side lengths whose center element is
    the filter value at the origin. Entry ``taps[a, b]`` sits at offset
    ``(a - ca, b - cb)``.
    """

    taps: np.ndarray = field(repr=False)
    normalized: bool = False

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] % 2 == 0 or taps.shape[1] % 2 == 0:
            raise ValueError("blur taps must be a 2-D array with odd side lengths")
        if self.normalized:
            total = taps.sum()
            if total == 0:
                raise ValueError("cannot normalize a zero-sum kernel")
            taps = taps / total
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @classmethod
    def identity(cls) -> "BlurFilter":
        return cls(np.ones((1, 1)), normalized=True)

    @classmethod
    def starck_murtagh(cls) -> "BlurFilter":
        """Separable B3-spline kernel ``[1, 4, 6, 4, 1] / 16`` squared."""
        return cls(np.outer(STARCK_MURTAGH_1D, STARCK_MURTAGH_1D), normalized=True)

    @classmethod
    def gaussian(cls, sigma: float, radius: int | None = None) -> "BlurFilter":
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        if radius is None:
            radius = int(np.ceil(3 * sigma))
        x = np.arange(-radius, radius + 1)
        g = np.exp(-(x**2) / (2 * sigma**2))
        return cls(np.outer(g, g), normalized=True)

    @classmethod
    def from_taps(cls, offsets_values: dict) -> "BlurFilter":
        """Build from ``{(k1, k2): value}``."""
        r = max(max(abs(a), abs(b)) for a, b in offsets_values)
        taps = np.zeros((2 * r + 1, 2 * r + 1))
        for (a, b), v in offsets_values.items():
            taps[a + r, b + r] = v
        return cls(taps)

    @property
    def center(self) -> tuple[int, int]:
        return (self.taps.shape[0] // 2, self.taps.shape[1] // 2)

    def on_grid(self, grid: Grid) -> np.ndarray:
        """The kernel as a ``p x q`` periodic image (taps summed on wraparound)."""
        out = np.zeros(grid.shape)
        ca, cb = self.center
        for a in range(self.taps.shape[0]):
            for b in range(self.taps.shape[1]):
                out[(a - ca) % grid.p, (b - cb) % grid.q] += self.taps[a, b]
        return out

    def flipped(self) -> "BlurFilter":
        """Adjoint kernel ``b(-j)``."""
        return BlurFilter(self.taps[::-1, ::-1].copy())

    def spectrum(self, grid: Grid) -> np.ndarray:
        return np.fft.fft2(self.on_grid(grid))

    def is_identity(self) -> bool:
        return self.taps.shape == (1, 1) and self.taps[0, 0] == 1.0


def _convolve_cube(cube: np.ndarray, spectrum: np.ndarray) -> np.ndarray:
    f = np.fft.fft2(cube, axes=(0, 1))
    return np.fft.ifft2(f * spectrum[:, :, None], axes=(0, 1)).real


def blur_cube(B: BlurFilter, cube: np.ndarray, adjoint: bool = False) -> np.ndarray:
    if B.is_identity():
        return cube
    spec = B.spectrum(Grid(cube.shape[0], cube.shape[1]))
    return _convolve_cube(cube, np.conj(spec) if adjoint else spec)


def apply_blur(B: BlurFilter, img: MultibandImage) -> MultibandImage:
    """Circularly convolve every band with the kernel."""
    return MultibandImage.from_cube(blur_cube(B, img.cube))


def apply_blur_adjoint(B: BlurFilter, img: MultibandImage) -> MultibandImage:
    """Circular correlation with the kernel (convolution with its flip)."""
    return MultibandImage.from_cube(blur_cube(B, img.cube, adjoint=True))


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Pixel-selection operator ``S``; ``S^T S`` is ``diag(mask)``."""

    grid: Grid
    mask: np.ndarray = field(repr=False)
    factor: int | None = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool).ravel().copy()
        if mask.size != self.grid.n:
            raise ValueError(f"mask has {mask.size} entries, grid has {self.grid.n}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def decimation(cls, grid: Grid, d: int) -> "SamplingMask":
        """Keep pixels ``(d a, d b)``; phase anchored at the origin."""
        if d < 1 or grid.p % d or grid.q % d:
            raise ValueError(f"decimation factor {d} must divide grid {grid.p}x{grid.q}")
        m = np.zeros(grid.shape, dtype=bool)
        m[::d, ::d] = True
        return cls(grid, m, factor=d)

    @classmethod
    def random(cls, grid: Grid, fraction: float, rng: np.random.Generator) -> "SamplingMask":
        """Irregular mask keeping ``round(fraction * n_h)`` pixels."""
        if not 0 < fraction <= 1:
            raise ValueError("kept fraction must lie in (0, 1]")
        keep = int(round(fraction * grid.n))
        if keep == 0:
            raise ValueError("mask would be empty")
        m = np.zeros(grid.n, dtype=bool)
        m[rng.choice(grid.n, size=keep, replace=False)] = True
        return cls(grid, m)

    @cached_property
    def kept_rows(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def n_low(self) -> int:
        return int(self.kept_rows.size)

    @property
    def low_shape(self) -> tuple[int, int] | None:
        """Low-resolution grid shape for regular decimation."""
        if self.factor is None:
            return None
        return (self.grid.p // self.factor, self.grid.q // self.factor)

    def diag(self) -> np.ndarray:
        return self.mask.astype(np.float64)


def downsample(S: SamplingMask, img: MultibandImage) -> np.ndarray:
    """``S X``: rows of the kept pixels, in row-major order."""
    _check_grid(S.grid, img)
    return img.data[S.kept_rows].copy()


def upsample_adjoint(S: SamplingMask, obs) -> MultibandImage:
    """``S^T Y``: zero image with the observations written at kept pixels."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[:, None]
    if obs.shape[0] != S.n_low:
        raise ValueError(f"expected {S.n_low} observed rows, got {obs.shape[0]}")
    out = np.zeros((S.grid.n, obs.shape[1]))
    out[S.kept_rows] = obs
    return MultibandImage(S.grid, out)


# ---------------------------------------------------------------- spectral


@dataclass(frozen=True, eq=False)
class SpectralResponse:
    """``L_l x L_h`` matrix mapping fine spectra to guide bands."""

    R: np.ndarray = field(repr=False)

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64)
        if R.ndim != 2:
            raise ValueError("spectral response must be a matrix")
        if not np.all(np.isfinite(R)):
            raise ValueError("spectral response must be finite")
        if np.any(R < 0):
            raise ValueError("spectral response entries must be nonnegative")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @classmethod
    def identity(cls, L: int) -> "SpectralResponse":
        return cls(np.eye(L))

    @classmethod
    def box_average(cls, L_low: int, L_high: int) -> "SpectralResponse":
        """Each guide band averages a contiguous, overlapping-free run of bands."""
        edges = np.linspace(0, L_low, L_high + 1)
        R = np.zeros((L_low, L_high))
        for j in range(L_high):
            a, b = int(np.floor(edges[j])), int(np.ceil(edges[j + 1]))
            R[a:b, j] = 1.0 / (b - a)
        return cls(R)

    @classmethod
    def gaussian_bands(cls, L_low: int, L_high: int, width: float | None = None) -> "SpectralResponse":
        """Smooth overlapping responses, each column summing to one."""
        centers = (np.arange(L_high) + 0.5) * L_low / L_high
        width = width or 0.6 * L_low / L_high
        lam = np.arange(L_low) + 0.5
        R = np.exp(-((lam[:, None] - centers[None, :]) ** 2) / (2 * width**2))
        return cls(R / R.sum(axis=0, keepdims=True))

    @property
    def shape(self):
        return self.R.shape


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """``L_s x L_l`` basis with ``Z = X E``."""

    E: np.ndarray = field(repr=False)
    orthonormal_rows: bool = False
    degenerate: bool = False

    def __post_init__(self):
        E = np.array(self.E, dtype=np.float64)
        if E.ndim != 2 or E.shape[0] > E.shape[1]:
            raise ValueError("subspace basis must be L_s x L_l with L_s <= L_l")
        E.setflags(write=False)
        object.__setattr__(self, "E", E)

    @classmethod
    def identity(cls, L: int) -> "SubspaceBasis":
        return cls(np.eye(L), orthonormal_rows=True)

    @property
    def dim(self) -> int:
        return self.E.shape[0]


def build_subspace(Y_low, L_s: int, rank_tol: float = 1e-10) -> SubspaceBasis:
    """Top ``L_s`` right singular vectors of the low-resolution observation."""
    Y = np.asarray(Y_low, dtype=np.float64)
    n_low, L_l = Y.shape
    if not 1 <= L_s <= min(n_low, L_l):
        raise ValueError(f"L_s={L_s} outside [1, {min(n_low, L_l)}]")
    _, s, Vt = np.linalg.svd(Y, full_matrices=False)
    degenerate = bool(s[L_s - 1] <= rank_tol * max(s[0], np.finfo(float).tiny))
    if degenerate:
        log.warning("observation rank is below L_s=%d; trailing basis vectors are arbitrary", L_s)
    return SubspaceBasis(Vt[:L_s], orthonormal_rows=True, degenerate=degenerate)


# ---------------------------------------------------------------- differences


@dataclass(frozen=True)
class DifferenceFilter:
    """Two-tap filter: +1 at ``k``, -1 at ``tau + k``."""

    tau: tuple[int, int]
    k: tuple[int, int]

    def on_grid(self, grid: Grid) -> np.ndarray:
        out = np.zeros(grid.shape)
        out[self.k[0] % grid.p, self.k[1] % grid.q] += 1.0
        out[(self.tau[0] + self.k[0]) % grid.p, (self.tau[1] + self.k[1]) % grid.q] -= 1.0
        return out

    def flipped_on_grid(self, grid: Grid) -> np.ndarray:
        d = self.on_grid(grid)
        return np.roll(d[::-1, ::-1], (1, 1), axis=(0, 1))


def search_window(S: int, include_zero: bool = False) -> list[tuple[int, int]]:
    """Shifts of ``[-S, S]^2`` in lexicographic order."""
    r = range(-S, S + 1)
    return [(a, b) for a in r for b in r if include_zero or (a, b) != (0, 0)]


LOCAL_WINDOW = [(1, 0), (0, 1)]


def build_difference_filters(S: int, K: int, include_zero: bool = False, shifts=None) -> list[DifferenceFilter]:
    """One filter per ``(tau, k)``, tau outermost.

    ``shifts`` overrides the square window (e.g. ``LOCAL_WINDOW``).
    """
    taus = search_window(S, include_zero) if shifts is None else [tuple(t) for t in shifts]
    r = range(-K, K + 1)
    return [DifferenceFilter(tau, (k1, k2)) for tau in taus for k1 in r for k2 in r]


def apply_difference(f: DifferenceFilter, img: MultibandImage) -> MultibandImage:
    """``out(i, c) = img(i - k, c) - img(i - tau - k, c)``."""
    cube = img.cube
    tk = (f.tau[0] + f.k[0], f.tau[1] + f.k[1])
    return MultibandImage.from_cube(roll(cube, f.k) - roll(cube, tk))


def apply_difference_adjoint(f: DifferenceFilter, img: MultibandImage) -> MultibandImage:
    """``out(i, c) = img(i + k, c) - img(i + tau + k, c)``."""
    cube = img.cube
    tk = (-f.tau[0] - f.k[0], -f.tau[1] - f.k[1])
    return MultibandImage.from_cube(roll(cube, (-f.k[0], -f.k[1])) - roll(cube, tk))


class FilterBank:
    """All difference filters grouped by shift, applied as stacked arrays.

    Stacks have shape ``(F, p, q, L)`` with filter index ``t * |P| + j`` for
    shift ``t`` and patch offset ``j``, matching ``build_difference_filters``.
    The stacked operator is cached as a sparse matrix per grid shape.
    """

    def __init__(self, shifts, K: int):
        self.shifts = [tuple(int(v) for v in t) for t in shifts]
        self.K = int(K)
        r = range(-self.K, self.K + 1)
        self.offsets = [(k1, k2) for k1 in r for k2 in r]
        self.filters = [DifferenceFilter(t, k) for t in self.shifts for k in self.offsets]
        self._tables: dict = {}

    @classmethod
    def from_window(cls, S: int, K: int, include_zero: bool = False) -> "FilterBank":
        return cls(search_window(S, include_zero), K)

    def __len__(self):
        return len(self.filters)

    @property
    def n_shifts(self) -> int:
        return len(self.shifts)

    @property
    def n_offsets(self) -> int:
        return len(self.offsets)

    def keys(self):
        return [(f.tau, f.k) for f in self.filters]

    def matrix(self, p: int, q: int):
        """Sparse ``(F n_h) x n_h`` stack of all filters on a ``p x q`` grid, and its transpose."""
        key = (p, q)
        if key not in self._tables:
            i1, i2 = np.meshgrid(np.arange(p), np.arange(q), indexing="ij")
            F, n = len(self.filters), p * q
            plus = np.empty((F, n), dtype=np.intp)
            minus = np.empty((F, n), dtype=np.intp)
            for f, d in enumerate(self.filters):
                (t1, t2), (k1, k2) = d.tau, d.k
                plus[f] = (((i1 - k1) % p) * q + (i2 - k2) % q).ravel()
                minus[f] = (((i1 - t1 - k1) % p) * q + (i2 - t2 - k2) % q).ravel()
            rows = np.tile(np.arange(F * n), 2)
            cols = np.concatenate([plus.ravel(), minus.ravel()])
            vals = np.concatenate([np.ones(F * n), -np.ones(F * n)])
            D = sparse.csr_matrix((vals, (rows, cols)), shape=(F * n, n))
            D.sum_duplicates()
            self._tables[key] = (D, D.T.tocsr())
        return self._tables[key]

    def forward(self, cube: np.ndarray) -> np.ndarray:
        """Stack of ``D_tk X`` for every filter."""
        p, q = cube.shape[:2]
        D, _ = self.matrix(p, q)
        return (D @ cube.reshape(p * q, -1)).reshape((len(self), p, q, -1))

    def adjoint(self, stack: np.ndarray) -> np.ndarray:
        """``sum_tk D_tk^T stack[tk]``."""
        F, p, q = stack.shape[:3]
        _, Dt = self.matrix(p, q)
        return (Dt @ stack.reshape(F * p * q, -1)).reshape((p, q, -1))

    def gram(self, cube: np.ndarray) -> np.ndarray:
        """``sum_tk D_tk^T D_tk X``; each shift contributes ``|P|`` equal terms."""
        total = np.zeros(cube.shape)
        for tau in self.shifts:
            delta = cube - roll(cube, tau)
            total += delta - roll(delta, (-tau[0], -tau[1]))
        return self.n_offsets * total


@dataclass(frozen=True, eq=False)
class FusionOperators:
    """The known degradation quadruple ``(B, S, R, E)``."""

    blur: BlurFilter
    sampling: SamplingMask
    response: SpectralResponse
    basis: SubspaceBasis

    @property
    def grid(self) -> Grid:
        return self.sampling.grid

    def check(self, L_low: int | None = None, L_high: int | None = None):
        R, E = self.response.R, self.basis.E
        if E.shape[1] != R.shape[0]:
            raise ValueError(f"basis has {E.shape[1]} bands, response expects {R.shape[0]}")
        if L_low is not None and L_low != E.shape[1]:
            raise ValueError(f"low-resolution image has {L_low} bands, basis expects {E.shape[1]}")
        if L_high is not None and L_high != R.shape[1]:
            raise ValueError(f"guide image has {L_high} bands, response produces {R.shape[1]}")
