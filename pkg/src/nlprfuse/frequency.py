"""DFT plans and the Fourier-domain solve of the X-update system.

Convention: forward transform unnormalized, inverse divides by ``n_h``
(numpy's default ``norm="backward"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, MultibandImage
from .linops import BlurFilter, DifferenceFilter

IMAG_TOL = 1e-10


def fft2(band) -> np.ndarray:
    return np.fft.fft2(np.asarray(band), axes=(0, 1))


def ifft2(spectrum, real: bool = True) -> np.ndarray:
    out = np.fft.ifft2(spectrum, axes=(0, 1))
    return out.real if real else out


@dataclass(frozen=True, eq=False)
class FrequencyPlan:
    """Cached spectra for the X-update.

    ``denom = 1 + |b_hat|^2 + |P| * sum_tau |d_hat_{tau,0}|^2``; only its
    reciprocal is used at solve time.
    """

    grid: Grid
    b_hat: np.ndarray = field(repr=False)
    d0_power: np.ndarray = field(repr=False)
    n_offsets: int
    denom: np.ndarray = field(repr=False)
    inv_denom: np.ndarray = field(repr=False)


def plan(grid: Grid, B: BlurFilter, filters: list[DifferenceFilter]) -> FrequencyPlan:
    """Assemble the denominator from one representative filter per shift."""
    taus = []
    offsets = set()
    for f in filters:
        if f.tau not in taus:
            taus.append(f.tau)
        offsets.add(f.k)
    n_offsets = len(offsets) if filters else 0
    if filters and len(filters) != len(taus) * n_offsets:
        raise ValueError("filters must cover every (shift, offset) pair exactly once")

    b_hat = B.spectrum(grid)
    d0_power = np.zeros(grid.shape)
    for tau in taus:
        d0_power += np.abs(fft2(DifferenceFilter(tau, (0, 0)).on_grid(grid))) ** 2
    denom = 1.0 + np.abs(b_hat) ** 2 + n_offsets * d0_power
    if not np.all(denom >= 1.0 - 1e-12):
        raise ArithmeticError("X-update denominator fell below one")
    inv = 1.0 / denom
    for a in (b_hat, d0_power, denom, inv):
        a.setflags(write=False)
    return FrequencyPlan(grid, b_hat, d0_power, n_offsets, denom, inv)


def solve_cube(fplan: FrequencyPlan, cube: np.ndarray) -> np.ndarray:
    """Per band: ``X_c = IDFT(DFT(C_c) / denom)``."""
    spec = fft2(cube) * fplan.inv_denom[:, :, None]
    out = ifft2(spec, real=False)
    imag = np.max(np.abs(out.imag)) if out.size else 0.0
    scale = max(1.0, float(np.max(np.abs(out.real)))) if out.size else 1.0
    if imag > IMAG_TOL * scale:
        raise ArithmeticError(f"non-negligible imaginary residue {imag:.3e} in X-update")
    return out.real


def solve_x_system(fplan: FrequencyPlan, C: MultibandImage) -> MultibandImage:
    """Solve ``(I + B^T B + sum D^T D) X = C``."""
    if C.grid != fplan.grid:
        raise ValueError(f"grid mismatch: plan on {fplan.grid}, right-hand side on {C.grid}")
    return MultibandImage.from_cube(solve_cube(fplan, C.cube))
