"""PSNR and SSIM.

Images produced in the normalised range [-1, 1] are mapped to [0, 1]
with :func:`denormalize` before scoring, so the default peak value and
dynamic range are both 1.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

K1 = 0.01
K2 = 0.03
PSNR_CSV_CAP = 100.0


def denormalize(x):
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def _pair(x, xhat):
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {xhat.shape}")
    return x, xhat


def psnr(x, xhat, max_i: float = 1.0) -> float:
    """``20 log10(max_i / sqrt(MSE))`` in dB; ``inf`` for identical images."""
    if max_i <= 0:
        raise ValueError("max_i must be positive")
    x, xhat = _pair(x, xhat)
    mse = float(np.mean((x - xhat) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(max_i / math.sqrt(mse))


def _ssim_terms(mx, my, vx, vy, cxy, L):
    c1 = (K1 * L) ** 2
    c2 = (K2 * L) ** 2
    return ((2 * mx * my + c1) / (mx ** 2 + my ** 2 + c1)) * ((2 * cxy + c2) / (vx + vy + c2))


def ssim(x, xhat, window: int | None = 7, L: float = 1.0) -> float:
    """Mean SSIM over all ``window x window`` positions (uniform weights).

    Works on the last two axes; leading axes (channels) are averaged too.
    Statistics inside a window are population moments. ``window=None``
    evaluates the formula once on whole-image statistics.
    """
    x, xhat = _pair(x, xhat)
    if x.ndim < 2:
        raise ValueError("ssim needs at least 2-D images")
    if window is None:
        x2 = x.reshape(-1, *x.shape[-2:])
        y2 = xhat.reshape(-1, *x.shape[-2:])
        vals = []
        for a, b in zip(x2, y2):
            mx, my = a.mean(), b.mean()
            vals.append(_ssim_terms(mx, my, a.var(), b.var(), ((a - mx) * (b - my)).mean(), L))
        return float(np.mean(vals))
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd, got {window}")
    if window > min(x.shape[-2:]):
        raise ValueError(f"window {window} larger than image extent {x.shape[-2:]}")
    wx = sliding_window_view(x, (window, window), axis=(-2, -1))
    wy = sliding_window_view(xhat, (window, window), axis=(-2, -1))
    ax = (-2, -1)
    mx, my = wx.mean(axis=ax), wy.mean(axis=ax)
    vx = (wx ** 2).mean(axis=ax) - mx ** 2
    vy = (wy ** 2).mean(axis=ax) - my ** 2
    cxy = (wx * wy).mean(axis=ax) - mx * my
    return float(np.mean(_ssim_terms(mx, my, vx, vy, cxy, L)))


@dataclass
class MetricReport:
    ids: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, id_, x, xhat, window: int | None = 7):
        """Score one pair of images given in the normalised [-1, 1] range."""
        a, b = denormalize(x), denormalize(xhat)
        self.ids.append(str(id_))
        self.psnr.append(psnr(a, b, 1.0))
        self.ssim.append(ssim(a, b, window, 1.0))

    def _capped(self):
        return np.minimum(np.asarray(self.psnr, dtype=np.float64), PSNR_CSV_CAP)

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self._capped()))

    @property
    def psnr_std(self) -> float:
        return float(np.std(self._capped()))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim))

    @property
    def ssim_std(self) -> float:
        return float(np.std(self.ssim))

    def to_csv(self, header: str | None = None) -> str:
        """Rows ``id, psnr_db, ssim`` then ``mean`` and ``std`` summary rows."""
        buf = io.StringIO()
        if header:
            buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "psnr_db", "ssim"])
        for id_, p, s in zip(self.ids, self._capped(), self.ssim):
            w.writerow([id_, f"{p:.6f}", f"{s:.6f}"])
        w.writerow(["mean", f"{self.psnr_mean:.6f}", f"{self.ssim_mean:.6f}"])
        w.writerow(["std", f"{self.psnr_std:.6f}", f"{self.ssim_std:.6f}"])
        return buf.getvalue()
