"""Full-reference fusion quality metrics.

All windowed statistics treat the image as periodic (windows wrap around the
border), which keeps every metric defined on tiny grids and matches the
periodic model used by the solver.
"""

from __future__ import annotations

import io
import logging
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .grid import MultibandImage

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
UIQI_WINDOW = 8
SSIM_SIGMA = 1.5
SSIM_TAPS = 11
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    ergas: float
    sam_degrees: float
    uiqi: float
    psnr_db: float
    ssim: float

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list[float]:
        return [getattr(self, k) for k in self.header()]

    def to_csv(self, label: str | None = None) -> str:
        head = self.header()
        row = [repr(float(v)) for v in self.values()]
        if label is not None:
            head, row = ["case"] + head, [label] + row
        return ",".join(head) + "\n" + ",".join(row) + "\n"

    def to_text(self) -> str:
        width = max(len(k) for k in self.header())
        return "\n".join(f"{k:<{width}}  {v:.6g}" for k, v in asdict(self).items()) + "\n"


def _pair(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(reference, MultibandImage):
        reference = reference.cube
    if isinstance(estimate, MultibandImage):
        estimate = estimate.cube
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.ndim == 2:
        ref = ref[:, :, None]
    if est.ndim == 2:
        est = est[:, :, None]
    if ref.shape != est.shape or ref.ndim != 3:
        raise ValueError(f"shape mismatch: reference {ref.shape}, estimate {est.shape}")
    return ref, est


def rmse(reference, estimate) -> float:
    ref, est = _pair(reference, estimate)
    return float(np.sqrt(np.mean((ref - est) ** 2)))


def ergas(reference, estimate, d: float) -> float:
    """``100 / d * sqrt(mean_c (RMSE_c / mu_c)^2)``; bands with zero reference mean are skipped."""
    ref, est = _pair(reference, estimate)
    if d <= 0:
        raise ValueError("resolution ratio must be positive")
    mu = ref.mean(axis=(0, 1))
    band_rmse = np.sqrt(np.mean((ref - est) ** 2, axis=(0, 1)))
    ok = mu != 0
    if not np.all(ok):
        warnings.warn(f"ERGAS skips zero-mean reference bands {np.flatnonzero(~ok).tolist()}", RuntimeWarning)
    if not np.any(ok):
        return float("nan")
    return float(100.0 / d * np.sqrt(np.mean((band_rmse[ok] / mu[ok]) ** 2)))


def sam(reference, estimate) -> float:
    """Mean spectral angle in degrees; pixels where either spectrum is zero count as angle 0."""
    ref, est = _pair(reference, estimate)
    a = ref.reshape(-1, ref.shape[2])
    b = est.reshape(-1, est.shape[2])
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    valid = (na[:, 0] > 0) & (nb[:, 0] > 0)
    ua = np.where(na > 0, a / np.where(na > 0, na, 1.0), 0.0)
    ub = np.where(nb > 0, b / np.where(nb > 0, nb, 1.0), 0.0)
    # 2 atan2(|u - v|, |u + v|) stays accurate for nearly parallel vectors
    ang = 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=1), np.linalg.norm(ua + ub, axis=1))
    ang = np.where(valid, ang, 0.0)
    return float(np.degrees(ang.mean()))


def _local_moments(x, y, smooth):
    mx, my = smooth(x), smooth(y)
    vx = smooth(x * x) - mx * mx
    vy = smooth(y * y) - my * my
    cxy = smooth(x * y) - mx * my
    return mx, my, vx, vy, cxy


def _uiqi_band(x, y, win: int) -> float:
    smooth = lambda a: ndimage.uniform_filter(a, size=win, mode="wrap")  # noqa: E731
    mx, my, vx, vy, cxy = _local_moments(x, y, smooth)
    # clamp the cancellation noise of E[x^2] - E[x]^2
    scale = max(float(np.max(np.abs(x))), float(np.max(np.abs(y))), 1.0) ** 2
    tiny = 1e-12 * scale
    vx = np.where(np.abs(vx) < tiny, 0.0, vx)
    vy = np.where(np.abs(vy) < tiny, 0.0, vy)
    cxy = np.where(np.abs(cxy) < tiny, 0.0, cxy)
    s_var = vx + vy
    s_mu = mx * mx + my * my
    with np.errstate(divide="ignore", invalid="ignore"):
        full = 4.0 * cxy * mx * my / (s_var * s_mu)
        lum = 2.0 * mx * my / s_mu
        con = 2.0 * cxy / s_var
    q = np.where(
        (s_var == 0) & (s_mu == 0), 1.0,
        np.where(s_var == 0, lum, np.where(s_mu == 0, con, full)),
    )
    return float(q.mean())


def uiqi(reference, estimate, window: int = UIQI_WINDOW) -> float:
    """Universal quality index averaged over all (wrapped) ``window x window`` windows and bands."""
    ref, est = _pair(reference, estimate)
    return float(np.mean([_uiqi_band(ref[:, :, c], est[:, :, c], window) for c in range(ref.shape[2])]))


def psnr(reference, estimate, cap: float = PSNR_CAP) -> float:
    """Band-averaged PSNR with ``peak = max(reference)``; each band capped at ``cap`` dB."""
    ref, est = _pair(reference, estimate)
    peak = float(ref.max())
    if peak <= 0:
        raise ValueError("PSNR needs a positive reference peak")
    mse = np.mean((ref - est) ** 2, axis=(0, 1))
    with np.errstate(divide="ignore"):
        per = np.where(mse > 0, 10.0 * np.log10(peak**2 / np.where(mse > 0, mse, 1.0)), cap)
    return float(np.minimum(per, cap).mean())


def gaussian_window(taps: int = SSIM_TAPS, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = taps // 2
    g = np.exp(-(np.arange(-r, r + 1) ** 2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(reference, estimate, data_range: float | None = None) -> float:
    """Mean SSIM over pixels and bands with an 11-tap Gaussian window (sigma 1.5).

    ``data_range`` defaults to the reference peak, the same peak PSNR uses.
    """
    ref, est = _pair(reference, estimate)
    L = float(ref.max()) if data_range is None else float(data_range)
    if L <= 0:
        raise ValueError("SSIM needs a positive data range")
    c1, c2 = (SSIM_K1 * L) ** 2, (SSIM_K2 * L) ** 2
    w = gaussian_window()
    smooth = lambda a: ndimage.correlate(a, w, mode="wrap")  # noqa: E731
    vals = []
    for c in range(ref.shape[2]):
        mx, my, vx, vy, cxy = _local_moments(ref[:, :, c], est[:, :, c], smooth)
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def evaluate(reference, estimate, d: float = 1.0) -> MetricReport:
    ref, est = _pair(reference, estimate)
    return MetricReport(
        rmse=rmse(ref, est),
        ergas=ergas(ref, est, d),
        sam_degrees=sam(ref, est),
        uiqi=uiqi(ref, est),
        psnr_db=psnr(ref, est),
        ssim=ssim(ref, est),
    )


def reports_to_csv(rows: dict[str, MetricReport]) -> str:
    buf = io.StringIO()
    buf.write(",".join(["case"] + MetricReport.header()) + "\n")
    for label, rep in rows.items():
        buf.write(",".join([label] + [repr(float(v)) for v in rep.values()]) + "\n")
    return buf.getvalue()
