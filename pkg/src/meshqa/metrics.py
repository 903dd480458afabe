"""SRCC / PLCC with a four-parameter logistic fit, and a projection PSNR baseline."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import rankdata

PSNR_SENTINEL = 100.0  # reported for identical projections (MSE = 0)


def pearson(x, y) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xc, yc = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    return float(xc @ yc / denom) if denom > 0 else 0.0


def srcc(pred, mos) -> float:
    """Spearman correlation with average ranks for ties."""
    pred, mos = np.asarray(pred, float), np.asarray(mos, float)
    if pred.shape != mos.shape or pred.size < 3:
        raise ValueError("SRCC needs two equal-length sequences of at least 3 items")
    return pearson(rankdata(pred), rankdata(mos))


def logistic4(x, b1, b2, b3, b4):
    """Monotone logistic rising from ``b2`` to ``b1`` around ``b3`` with scale ``|b4|``."""
    z = np.clip(-(np.asarray(x, float) - b3) / abs(b4), -500, 500)
    return (b1 - b2) / (1.0 + np.exp(z)) + b2


def fit_logistic(pred, mos) -> np.ndarray:
    """Levenberg-Marquardt least squares from a data-range initialisation."""
    pred, mos = np.asarray(pred, float), np.asarray(mos, float)
    spread = float(np.std(pred)) or 1.0
    b0 = np.array([mos.max(), mos.min(), float(np.mean(pred)), spread])
    if pearson(pred, mos) < 0:
        b0[:2] = b0[1], b0[0]

    def residual(b):
        return logistic4(pred, *b) - mos

    try:
        res = least_squares(residual, b0, method="lm", max_nfev=2000)
        b = res.x
        if not np.all(np.isfinite(b)) or abs(b[3]) < 1e-12:
            b = b0
    except (ValueError, np.linalg.LinAlgError):
        b = b0
    return b


def plcc(pred, mos, return_params: bool = False):
    """Pearson correlation between the logistic-mapped predictions and MOS."""
    pred, mos = np.asarray(pred, float), np.asarray(mos, float)
    if pred.shape != mos.shape or pred.size < 3:
        raise ValueError("PLCC needs two equal-length sequences of at least 3 items")
    b = fit_logistic(pred, mos)
    value = pearson(logistic4(pred, *b), mos)
    return (value, b) if return_params else value


def psnr_baseline(ref_projs, dis_projs, peak: float = 1.0) -> float:
    """PSNR over pixels covered in either projection, averaged across views."""
    values = []
    for r, d in zip(ref_projs, dis_projs, strict=True):
        ri, di = np.asarray(r.image, float), np.asarray(d.image, float)
        if ri.shape != di.shape:
            raise ValueError(f"projection shapes differ: {ri.shape} vs {di.shape}")
        covered = np.asarray(r.mask) | np.asarray(d.mask)
        if not covered.any():
            continue
        mse = float(np.mean((ri[:, covered] - di[:, covered]) ** 2))
        values.append(PSNR_SENTINEL if mse == 0 else min(PSNR_SENTINEL, 10 * math.log10(peak ** 2 / mse)))
    if not values:
        raise ValueError("no covered pixels in any view")
    return float(np.mean(values))
