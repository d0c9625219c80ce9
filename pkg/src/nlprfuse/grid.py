"""Periodic pixel grid, multiband images, circular shifts and patches.

Pixels are linearized row-major: pixel ``(i1, i2)`` is row ``i1 * q + i2``
of the ``n_h x L`` data matrix, so ``data.reshape(p, q, L)`` is the cube
view used by every other module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    """A ``p x q`` periodic image domain."""

    p: int
    q: int

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.p}x{self.q}")

    @property
    def n(self) -> int:
        return self.p * self.q

    @property
    def shape(self) -> tuple[int, int]:
        return (self.p, self.q)

    def index(self, pixel) -> int:
        """Row index of a (possibly out-of-range) pixel, wrapping both axes."""
        i1, i2 = pixel
        return (i1 % self.p) * self.q + (i2 % self.q)

    def pixel(self, index: int) -> tuple[int, int]:
        return divmod(int(index), self.q)


@dataclass(frozen=True, eq=False)
class MultibandImage:
    """``n_h x L`` band matrix bound to a grid.

    The array is copied on construction and marked read-only, so instances
    can be shared freely.
    """

    grid: Grid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] != self.grid.n:
            raise ValueError(
                f"data of shape {data.shape} does not match grid "
                f"{self.grid.p}x{self.grid.q} ({self.grid.n} rows)"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("image data must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_cube(cls, cube) -> "MultibandImage":
        """Build from a ``p x q`` or ``p x q x L`` array."""
        cube = np.asarray(cube, dtype=np.float64)
        if cube.ndim == 2:
            cube = cube[:, :, None]
        p, q, L = cube.shape
        return cls(Grid(p, q), cube.reshape(p * q, L))

    @property
    def bands(self) -> int:
        return self.data.shape[1]

    @property
    def cube(self) -> np.ndarray:
        """Read-only ``p x q x L`` view."""
        return self.data.reshape(self.grid.p, self.grid.q, self.bands)

    def band(self, c: int) -> np.ndarray:
        return self.cube[:, :, c]

    def with_data(self, data) -> "MultibandImage":
        return MultibandImage(self.grid, data)

    def __repr__(self):
        return f"MultibandImage({self.grid.p}x{self.grid.q}, L={self.bands})"


@dataclass(frozen=True)
class PatchSpec:
    """Patch of radius ``K``; vector entries ordered by band, then k1, then k2."""

    K: int

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("patch radius must be nonnegative")

    @property
    def side(self) -> int:
        return 2 * self.K + 1

    def offsets(self) -> list[tuple[int, int]]:
        r = range(-self.K, self.K + 1)
        return [(k1, k2) for k1 in r for k2 in r]

    def length(self, bands: int) -> int:
        return self.side**2 * bands


def roll(cube: np.ndarray, tau) -> np.ndarray:
    """``out[i] = cube[i - tau]`` on the first two (periodic) axes."""
    t1, t2 = int(tau[0]), int(tau[1])
    if t1 == 0 and t2 == 0:
        return cube
    return np.roll(cube, (t1, t2), axis=(0, 1))


def shift(img: MultibandImage, tau) -> MultibandImage:
    """Circular shift: ``out(i, c) = img(i - tau, c)``."""
    return MultibandImage.from_cube(roll(img.cube, tau))


def extract_patch(img: MultibandImage, i, spec: PatchSpec) -> np.ndarray:
    """Vector of ``X_c(i - k)`` over ``(k, c)``, band outermost."""
    p, q = img.grid.shape
    r = np.arange(-spec.K, spec.K + 1)
    rows = (i[0] - r) % p
    cols = (i[1] - r) % q
    block = img.cube[np.ix_(rows, cols)]  # (side, side, L) indexed by k1, k2
    return np.ascontiguousarray(block.transpose(2, 0, 1)).ravel()


def patch_difference(img: MultibandImage, i, tau, spec: PatchSpec) -> np.ndarray:
    """Patch at ``i`` minus patch at ``i - tau``."""
    j = (i[0] - tau[0], i[1] - tau[1])
    return extract_patch(img, i, spec) - extract_patch(img, j, spec)
