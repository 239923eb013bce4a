"""Autocorrelation, normalized correlation coefficient and coherence time."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

OUTAGE_POLICIES = ("zero_if_any_outage", "ignore_outage")
ESTIMATORS = ("biased", "pairs")


class DegenerateSequenceError(ValueError):
    """Raised when a sequence has zero variance and its correlation is undefined."""


@dataclass(frozen=True)
class CoherenceConfig:
    eta_th: float = 0.99
    max_lag: int = 1000
    outage_policy: str = "zero_if_any_outage"
    estimator: str = "biased"

    def __post_init__(self):
        if not 0 < self.eta_th < 1:
            raise ValueError("eta_th must lie in (0, 1)")
        if self.max_lag < 1:
            raise ValueError("max_lag must be >= 1")
        if self.outage_policy not in OUTAGE_POLICIES:
            raise ValueError(f"outage_policy must be one of {OUTAGE_POLICIES}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")


@dataclass(frozen=True)
class CoherenceResult:
    """Outcome of a coherence-time evaluation.

    ``rho`` holds the coefficients for lags ``0..max_lag`` (empty for an
    outage).  ``censored`` is set when the coefficient never reached the
    threshold, in which case ``n_c`` is the largest lag examined.
    """

    rho: np.ndarray
    n_c: int
    T_c: float
    outage: bool = False
    censored: bool = False


def _as_series(h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim != 1 or h.size == 0:
        raise ValueError("expected a nonempty 1-D gain sequence")
    return h


def autocorrelation(h, L: int, estimator: str = "biased") -> float:
    """Sample autocovariance at lag ``L`` around the full-sequence mean.

    ``estimator="biased"`` divides the lag products by the sequence length,
    ``"pairs"`` by the number of overlapping pairs ``len(h) - L``.
    """
    h = _as_series(h)
    if not 0 <= L < h.size:
        raise IndexError(f"lag {L} out of range for a sequence of length {h.size}")
    dev = h - h.mean()
    total = float(np.dot(dev[: h.size - L], dev[L:]))
    return total / (h.size if estimator == "biased" else h.size - L)


def autocorrelation_sequence(h, max_lag: int, estimator: str = "biased") -> np.ndarray:
    """Autocovariances for lags ``0..max_lag`` computed with a zero-padded FFT."""
    h = _as_series(h)
    if not 0 <= max_lag < h.size:
        raise IndexError(f"max_lag {max_lag} out of range for a sequence of length {h.size}")
    dev = h - h.mean()
    nfft = 1 << int(2 * h.size - 1).bit_length()
    spec = np.fft.rfft(dev, nfft)
    acov = np.fft.irfft(spec.real**2 + spec.imag**2, nfft)[: max_lag + 1]
    if estimator == "biased":
        return acov / h.size
    return acov / (h.size - np.arange(max_lag + 1))


def _check_variance(h: np.ndarray, c0: float):
    scale = float(np.max(np.abs(h)))
    if c0 <= (1e-12 * scale) ** 2 or c0 == 0:
        raise DegenerateSequenceError("gain sequence has zero variance")


def rho(h, L: int, estimator: str = "biased") -> float:
    h = _as_series(h)
    c0 = autocorrelation(h, 0, estimator)
    _check_variance(h, c0)
    return autocorrelation(h, L, estimator) / c0


def rho_sequence(h, max_lag: int, estimator: str = "biased") -> np.ndarray:
    h = _as_series(h)
    acov = autocorrelation_sequence(h, max_lag, estimator)
    _check_variance(h, float(acov[0]))
    out = acov / acov[0]
    out[0] = 1.0
    return out


def coherence_time(h, f_s: float, cfg: CoherenceConfig = CoherenceConfig()) -> CoherenceResult:
    """Coherence time as the first lag where the coefficient falls to ``eta_th``.

    Under ``zero_if_any_outage`` a sequence containing an exact zero gain is
    reported with ``T_c = 0``.

    Raises
    ------
    DegenerateSequenceError
        If the sequence has no outage and zero variance.
    """
    h = _as_series(h)
    if not f_s > 0:
        raise ValueError("f_s must be positive")
    if cfg.outage_policy == "zero_if_any_outage" and np.any(h == 0):
        return CoherenceResult(np.empty(0), 0, 0.0, outage=True)
    if h.size < 2:
        raise DegenerateSequenceError("need at least two samples")
    max_lag = min(cfg.max_lag, h.size - 1)
    r = rho_sequence(h, max_lag, cfg.estimator)
    below = np.flatnonzero(r[1:] <= cfg.eta_th)
    if below.size:
        n_c = int(below[0]) + 1
        return CoherenceResult(r, n_c, n_c / f_s)
    return CoherenceResult(r, max_lag, max_lag / f_s, censored=True)


def empirical_cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Right-continuous empirical CDF as ``(value, probability)`` steps."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empirical_cdf needs at least one value")
    uniq, counts = np.unique(v, return_counts=True)
    probs = np.cumsum(counts) / v.size
    probs[-1] = 1.0
    return [(float(x), float(p)) for x, p in zip(uniq, probs)]


def cdf_at(steps: Sequence[tuple[float, float]], x: float) -> float:
    """Evaluate CDF steps from :func:`empirical_cdf` at ``x``."""
    p = 0.0
    for value, prob in steps:
        if value > x:
            break
        p = prob
    return p
