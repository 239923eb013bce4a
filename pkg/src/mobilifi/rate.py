"""Achievable M-PAM rates for SISO, SIMO, MISO and MIMO links.

Every topology collapses to a scalar effective gain ``g`` (``h``,
``omega^T h``, ``q^T h`` or ``q^T H omega``).  The rate is ``2B`` times the
mutual information between the PAM symbol and ``y = g s + sqrt(B) z`` with
``z ~ N(0, sigma2)``, estimated by Monte Carlo over ``z``.

Two estimators are available.  ``"plain"`` averages the log-sum-exp
expression literally.  ``"reduced"`` (default) integrates the
``-z^2 / (2 sigma2)`` part of every exponent in closed form, which removes
a zero-mean term from each sample and makes the zero-gain rate exactly 0.
Both share one draw of ``z`` across symbols and gains (common random
numbers).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .channel import ChannelTrace

LN2 = math.log(2.0)
TOPOLOGIES = ("siso", "simo", "miso", "mimo")
POLICIES = ("mrc", "dominant_singular", "uniform")


class ConstellationError(ValueError):
    """A constellation violates one of its power constraints."""


@dataclass(frozen=True)
class Constellation:
    points: tuple[float, ...]
    probs: tuple[float, ...]
    A_hat: float
    Phi: float
    eps_hat: float

    def __post_init__(self):
        s = np.asarray(self.points, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "points", tuple(float(x) for x in s))
        object.__setattr__(self, "probs", tuple(float(x) for x in p))
        if s.ndim != 1 or s.size < 2 or p.shape != s.shape:
            raise ConstellationError("need M >= 2 points with one probability each")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            raise ConstellationError(f"probabilities must be non-negative and sum to 1 (sum={p.sum()!r})")
        tol = 1e-12
        if s.min() < 0 or s.max() > self.A_hat * (1 + tol):
            raise ConstellationError(f"points must lie in [0, A_hat={self.A_hat}]")
        mean = float(p @ s)
        if mean > self.Phi * (1 + tol):
            raise ConstellationError(f"average optical power {mean} exceeds Phi={self.Phi}")
        power = float(p @ s**2)
        if power > self.eps_hat * (1 + tol):
            raise ConstellationError(f"electrical power {power} exceeds eps_hat={self.eps_hat}")

    @property
    def M(self) -> int:
        return len(self.points)

    @property
    def entropy_bits(self) -> float:
        p = np.asarray(self.probs)
        p = p[p > 0]
        return float(-(p * np.log2(p)).sum())


def pam_uniform(M: int, A_hat: float, Phi: float, eps_hat: float) -> Constellation:
    """Equiprobable levels ``0, A_hat/(M-1), ..., A_hat``."""
    if M < 2:
        raise ConstellationError("M-PAM needs M >= 2")
    points = np.arange(M) * (A_hat / (M - 1))
    return Constellation(tuple(points), tuple(np.full(M, 1.0 / M)), A_hat, Phi, eps_hat)


@dataclass(frozen=True)
class RateConfig:
    B: float = 20e6
    sigma2: float = 1.4e-19
    mc_samples: int = 100_000
    seed: int = 0
    estimator: str = "reduced"

    def __post_init__(self):
        if not self.B > 0 or not self.sigma2 > 0:
            raise ValueError("B and sigma2 must be positive")
        if self.mc_samples < 1000:
            raise ValueError("mc_samples must be >= 1000")
        if self.estimator not in ("reduced", "plain"):
            raise ValueError("estimator must be 'reduced' or 'plain'")


@dataclass(frozen=True)
class RateEstimate:
    """Monte Carlo rate in bits/s; ``rate`` is the raw (possibly negative) mean."""

    rate: float
    stderr: float

    @property
    def clamped(self) -> float:
        return max(self.rate, 0.0)


def _draws(rc: RateConfig) -> np.ndarray:
    return np.random.default_rng(rc.seed).standard_normal(rc.mc_samples)


def _rate_from_gain(g: float, c: Constellation, rc: RateConfig, u: np.ndarray) -> RateEstimate:
    s = np.asarray(c.points)
    p = np.asarray(c.probs)
    a = abs(g) / math.sqrt(rc.B * rc.sigma2)
    acc = np.zeros_like(u)
    for k in range(c.M):
        delta = a * (s[k] - s)
        if rc.estimator == "plain":
            lam = -0.5 * (delta[None, :] + u[:, None]) ** 2
        else:
            lam = -(0.5 * delta[None, :] ** 2 + delta[None, :] * u[:, None])
        acc += p[k] * logsumexp(lam, axis=1, b=p)
    samples = -2 * rc.B / LN2 * acc
    if rc.estimator == "plain":
        samples -= rc.B / LN2
    return RateEstimate(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(u.size)))


def rate_siso(h: float, c: Constellation, rc: RateConfig) -> RateEstimate:
    if not math.isfinite(h) or h < 0:
        raise ValueError("SISO gain must be finite and non-negative")
    return _rate_from_gain(h, c, rc, _draws(rc))


def _vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or not np.isfinite(v).all():
        raise ValueError(f"{name} must be a finite vector")
    return v


def rate_simo(h, omega, c: Constellation, rc: RateConfig) -> RateEstimate:
    h, omega = _vector(h, "h"), _vector(omega, "omega")
    if h.shape != omega.shape:
        raise ValueError(f"dimension mismatch: h has {h.size} entries, omega {omega.size}")
    return _rate_from_gain(float(omega @ h), c, rc, _draws(rc))


def rate_miso(h, q, c: Constellation, rc: RateConfig) -> RateEstimate:
    h, q = _vector(h, "h"), _vector(q, "q")
    if h.shape != q.shape:
        raise ValueError(f"dimension mismatch: h has {h.size} entries, q {q.size}")
    return _rate_from_gain(float(q @ h), c, rc, _draws(rc))


def rate_mimo(H, q, omega, c: Constellation, rc: RateConfig) -> RateEstimate:
    H = np.asarray(H, dtype=float)
    q, omega = _vector(q, "q"), _vector(omega, "omega")
    if H.ndim != 2 or H.shape != (q.size, omega.size):
        raise ValueError(f"dimension mismatch: H {H.shape}, q {q.size}, omega {omega.size}")
    return _rate_from_gain(float(q @ H @ omega), c, rc, _draws(rc))


@dataclass(frozen=True)
class Beamformers:
    omega: np.ndarray
    q: np.ndarray
    policy: str

    def effective_gain(self, H) -> float:
        return float(self.q @ np.asarray(H, dtype=float) @ self.omega)


def _uniform(K: int, N: int) -> Beamformers:
    return Beamformers(np.full(N, 1 / math.sqrt(N)), np.full(K, 1 / math.sqrt(K)), "uniform")


def choose_beamformers(H, policy: str = "mrc") -> Beamformers:
    """Pick transmit ``q`` and receive ``omega`` vectors for a K x N gain matrix.

    ``mrc`` matches ``omega`` to the LED-summed gains and ``q`` to the
    resulting combined column; with one LED (or one PD) this is ``h/|h|``.
    ``dominant_singular`` uses the leading singular pair from power
    iteration.  ``uniform`` spreads unit norm evenly.  A zero matrix falls
    back to ``uniform`` with a warning.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or not np.isfinite(H).all():
        raise ValueError("H must be a finite 2-D matrix")
    if (H < 0).any():
        raise ValueError("H must be entrywise non-negative")
    if policy not in POLICIES:
        raise ValueError(f"unknown beamforming policy {policy!r}")
    K, N = H.shape
    if policy == "uniform":
        return _uniform(K, N)
    if not H.any():
        warnings.warn("zero channel matrix: uniform beamformers give zero effective gain", RuntimeWarning)
        return _uniform(K, N)

    if policy == "mrc":
        col = H.sum(axis=0)
        omega = col / np.linalg.norm(col)
    else:
        omega = np.full(N, 1 / math.sqrt(N))
        gram = H.T @ H
        for _ in range(200):
            v = gram @ omega
            nv = np.linalg.norm(v)
            if nv == 0:
                break
            v /= nv
            residual = np.linalg.norm(v - omega)
            omega = v
            if residual < 1e-12:
                break
    t = H @ omega
    q = t / np.linalg.norm(t)
    if q @ H @ omega < 0:
        q = -q
    return Beamformers(omega, q, policy)


@dataclass(frozen=True)
class RateSeries:
    t: np.ndarray
    rate: np.ndarray
    stderr: np.ndarray

    @property
    def clamped(self) -> np.ndarray:
        return np.maximum(self.rate, 0.0)


def _selection(topology: str, K: int, N: int, leds, pds) -> tuple[list[int], list[int]]:
    single_led = topology in ("siso", "simo")
    single_pd = topology in ("siso", "miso")
    if leds is None:
        leds = [0] if single_led else list(range(K))
    if pds is None:
        pds = [0] if single_pd else list(range(N))
    leds, pds = [int(i) for i in leds], [int(i) for i in pds]
    if not leds or not pds:
        raise ValueError("empty LED or PD selection")
    for i in leds:
        if not 0 <= i < K:
            raise IndexError(f"LED index {i} out of range (K={K})")
    for i in pds:
        if not 0 <= i < N:
            raise IndexError(f"PD index {i} out of range (N={N})")
    if single_led and len(leds) != 1:
        raise ValueError(f"{topology} uses exactly one LED")
    if single_pd and len(pds) != 1:
        raise ValueError(f"{topology} uses exactly one PD")
    return leds, pds


def rate_along_trace(
    trace: ChannelTrace,
    topology: str,
    c: Constellation,
    rc: RateConfig,
    leds: Sequence[int] | None = None,
    pds: Sequence[int] | None = None,
    policy: str = "mrc",
) -> RateSeries:
    """Per-slot rate with per-slot beamformers.

    Index lists default to every LED/PD the topology allows (the first one
    for single-ended sides).  All slots share one noise draw, so a constant
    trace yields a constant series.
    """
    if topology not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology!r}")
    K, N = trace.shape
    leds, pds = _selection(topology, K, N, leds, pds)
    u = _draws(rc)
    sub = trace.gains[:, leds][:, :, pds]
    rates = np.empty(len(trace))
    errs = np.empty(len(trace))
    cache: dict[float, RateEstimate] = {}
    for i, H in enumerate(sub):
        g = choose_beamformers(H, policy).effective_gain(H) if H.any() else 0.0
        est = cache.get(g)
        if est is None:
            est = cache[g] = _rate_from_gain(g, c, rc, u)
        rates[i], errs[i] = est.rate, est.stderr
    return RateSeries(np.asarray(trace.t).copy(), rates, errs)
