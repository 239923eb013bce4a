"""Error measures for channel estimates and predictions."""

from __future__ import annotations

import numpy as np


def nmse(h_hat, h) -> float:
    """Normalized squared error ``|h_hat - h|^2 / |h|^2``.

    Raises
    ------
    ValueError
        If the shapes differ or the reference is all zero.
    """
    h_hat = np.asarray(h_hat, dtype=float)
    h = np.asarray(h, dtype=float)
    if h_hat.shape != h.shape:
        raise ValueError(f"shape mismatch: {h_hat.shape} vs {h.shape}")
    ref = float(np.sum(h * h))
    if ref == 0:
        raise ValueError("nmse is undefined for a zero reference")
    return float(np.sum((h_hat - h) ** 2)) / ref


def delta_h(h_hat, h):
    """Relative prediction error ``|h - h_hat| / h``; scalar or elementwise."""
    h_hat = np.asarray(h_hat, dtype=float)
    h = np.asarray(h, dtype=float)
    if np.any(h == 0):
        raise ValueError("delta_h is undefined where the true channel is zero")
    out = np.abs(h - h_hat) / h
    return float(out) if out.ndim == 0 else out
