"""Synthetic ground truth and Wald-style degradation.

Noise power is set against the clean signal's mean square:
``sigma^2 = ||clean||^2 / (count * 10^(snr/10))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, MultibandImage
from .linops import (
    BlurFilter,
    FusionOperators,
    SamplingMask,
    SpectralResponse,
    SubspaceBasis,
    apply_blur,
    downsample,
)

PHANTOMS = ("texture", "mondrian", "ramp")


@dataclass(frozen=True, eq=False)
class DegradationSpec:
    blur: BlurFilter = field(default_factory=BlurFilter.starck_murtagh)
    factor: int = 4
    R: SpectralResponse | None = None
    snr_l: float = np.inf
    snr_h: float = np.inf
    seed: int = 0

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError("decimation factor must be at least 1")
        if np.isnan(self.snr_l) or np.isnan(self.snr_h):
            raise ValueError("SNR targets must not be NaN")


def _signatures(rng, n: int, L: int) -> np.ndarray:
    """Smooth nonnegative spectra, one row per source."""
    lam = np.linspace(0.0, 1.0, L)
    rows = []
    for _ in range(n):
        c = rng.uniform(0.0, 1.0, size=3)
        w = rng.uniform(0.15, 0.5, size=3)
        a = rng.uniform(0.3, 1.0, size=3)
        s = sum(a[j] * np.exp(-((lam - c[j]) ** 2) / (2 * w[j] ** 2)) for j in range(3))
        rows.append(0.1 + s)
    return np.array(rows)


def _texture_maps(rng, p: int, q: int, n: int) -> np.ndarray:
    """Periodic abundance maps: tiled blocky motifs, oblique gratings and smooth waves."""
    i1, i2 = np.meshgrid(np.arange(p), np.arange(q), indexing="ij")
    maps = []
    for j in range(n):
        kind = j % 3
        if kind == 0:
            cell = int(rng.integers(6, 9))
            motif = (rng.uniform(size=(3, 3)) > 0.5).astype(float)
            m = motif[(i1 // cell) % 3, (i2 // cell) % 3]
        elif kind == 1:
            # oblique grating: periodic on the grid, finer than the low-resolution sampling
            f1 = int(rng.integers(3, 6)) * p // 32 or 1
            f2 = int(rng.choice([-1, 1])) * (int(rng.integers(3, 6)) * q // 32 or 1)
            phase = rng.uniform(0, 2 * np.pi)
            m = 0.5 + 0.5 * np.sin(2 * np.pi * (f1 * i1 / p + f2 * i2 / q) + phase)
        else:
            f1 = max(1, int(rng.integers(1, 3)) * p // 16)
            f2 = max(1, int(rng.integers(1, 3)) * q // 16)
            m = 0.5 + 0.5 * np.cos(2 * np.pi * f1 * i1 / p) * np.cos(2 * np.pi * f2 * i2 / q)
        maps.append(m)
    return np.stack(maps)


def _mondrian_maps(rng, p: int, q: int, n: int) -> np.ndarray:
    maps = np.zeros((n, p, q))
    labels = np.zeros((p, q), dtype=int)
    for _ in range(3 * n):
        a, b = sorted(rng.integers(0, p, size=2))
        c, d = sorted(rng.integers(0, q, size=2))
        labels[a:b + 1, c:d + 1] = rng.integers(0, n)
    for j in range(n):
        maps[j] = labels == j
    return maps


def make_phantom(kind: str, p: int, q: int, L: int, seed: int = 0) -> MultibandImage:
    """Deterministic multiband phantom in ``[0, 1]`` with band rank at most ``min(L, 6)``."""
    if kind not in PHANTOMS:
        raise ValueError(f"unknown phantom {kind!r}; choose from {PHANTOMS}")
    if p < 8 or q < 8 or L < 1:
        raise ValueError("phantom needs p, q >= 8 and at least one band")
    rng = np.random.default_rng(seed)
    i1, i2 = np.meshgrid(np.arange(p) / p, np.arange(q) / q, indexing="ij")
    if kind == "ramp":
        coef = rng.uniform(-1.0, 1.0, size=(3, L))
        coef[0] = rng.uniform(0.5, 1.5, size=L)
        basis = np.stack([np.ones_like(i1), i1, i2], axis=-1)  # (p, q, 3)
        cube = basis @ coef
    else:
        n = min(L, 6 if kind == "texture" else 5)
        maps = _texture_maps(rng, p, q, n) if kind == "texture" else _mondrian_maps(rng, p, q, n)
        cube = np.tensordot(maps, _signatures(rng, n, L), axes=(0, 0))
    lo, hi = cube.min(), cube.max()
    cube = (cube - lo) / (hi - lo) if hi > lo else np.full_like(cube, 0.5)
    return MultibandImage.from_cube(cube)


def noise_sigma(clean: np.ndarray, snr_db: float) -> float:
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    power = np.sum(clean**2) / clean.size
    return float(np.sqrt(power / 10 ** (snr_db / 10)))


def add_noise(clean: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    sigma = noise_sigma(clean, snr_db)
    if sigma == 0.0:
        return clean.copy()
    return clean + sigma * rng.standard_normal(clean.shape)


def empirical_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    return float(10 * np.log10(np.sum(clean**2) / np.sum((noisy - clean) ** 2)))


def sampling_for(spec: DegradationSpec, grid: Grid) -> SamplingMask:
    return SamplingMask.decimation(grid, spec.factor)


def degrade(Z: MultibandImage, spec: DegradationSpec):
    """``(Y_l, Y_h) = (S B Z + N_l, Z R + N_h)``; noise streams independent per seed."""
    R = spec.R if spec.R is not None else SpectralResponse.identity(Z.bands)
    if R.shape[0] != Z.bands:
        raise ValueError(f"spectral response expects {R.shape[0]} bands, image has {Z.bands}")
    S = sampling_for(spec, Z.grid)
    rng_l, rng_h = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))
    Y_low = add_noise(downsample(S, apply_blur(spec.blur, Z)), spec.snr_l, rng_l)
    Y_high = MultibandImage(Z.grid, add_noise(Z.data @ R.R, spec.snr_h, rng_h))
    return Y_low, Y_high


def fusion_operators(spec: DegradationSpec, grid: Grid, basis: SubspaceBasis, L: int) -> FusionOperators:
    R = spec.R if spec.R is not None else SpectralResponse.identity(L)
    return FusionOperators(spec.blur, sampling_for(spec, grid), R, basis)


@dataclass
class InpaintingInstance:
    Y_low: np.ndarray
    Y_high: MultibandImage
    ops: FusionOperators
    guide: MultibandImage
    mask: SamplingMask


def make_inpainting_instance(Z: MultibandImage, mask_fraction: float, seed: int = 0,
                             snr_db: float = np.inf) -> InpaintingInstance:
    """Irregular pixel mask keeping ``round(mask_fraction * n_h)`` pixels.

    Operators are identities (``B = I``, ``R = I``, ``E = I``). The guide is
    the band average of ``Z``; ``Y_high`` is all zeros and should be paired
    with ``lam1 = 0`` so that it only fixes shapes.
    """
    if not 0 < mask_fraction <= 1:
        raise ValueError("mask_fraction must lie in (0, 1]")
    rng_mask, rng_noise = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    mask = SamplingMask.random(Z.grid, mask_fraction, rng_mask)
    L = Z.bands
    ops = FusionOperators(BlurFilter.identity(), mask, SpectralResponse.identity(L), SubspaceBasis.identity(L))
    Y_low = add_noise(downsample(mask, Z), snr_db, rng_noise)
    guide = MultibandImage(Z.grid, Z.data.mean(axis=1, keepdims=True))
    return InpaintingInstance(Y_low, MultibandImage(Z.grid, np.zeros_like(Z.data)), ops, guide, mask)
