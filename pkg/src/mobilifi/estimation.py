"""Pilot-based scalar channel estimation under optical power limits.

A pilot ``a`` of length ``L`` is sent over a channel that stays constant for
the pilot duration, ``y[n] = h a[n] + z[n]``.  A linear decoder ``w`` with
``w . a = 1`` (zero forcing) gives an unbiased estimate with noise variance
``sigma2 * |w|^2``, minimised by ``w = a / |a|^2``.  The remaining design
problem is to maximise ``|a|^2`` subject to ``0 <= a[n] <= rho_hat`` and
``mean(a) = Phi_hat``; a convex function over a polytope peaks at a vertex,
so the optimum puts as many slots as possible at the peak power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SCHEMES = ("ls", "zf_coding", "zf_uniform")


class InfeasiblePilotError(ValueError):
    """Pilot constraints admit no solution (or no grid point)."""


@dataclass(frozen=True)
class PilotConstraints:
    rho_hat: float
    Phi_hat: float
    L: int

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError("pilot length L must be a positive integer")
        if not self.Phi_hat > 0 or not self.rho_hat > 0:
            raise ValueError("rho_hat and Phi_hat must be positive")
        if self.Phi_hat > self.rho_hat:
            raise InfeasiblePilotError(
                f"average power Phi_hat={self.Phi_hat} exceeds peak power rho_hat={self.rho_hat}"
            )


@dataclass(frozen=True)
class PilotDesign:
    a: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if a.ndim != 1 or a.shape != w.shape:
            raise ValueError("pilot and decoder must be vectors of equal length")
        a.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "w", w)

    @property
    def L(self) -> int:
        return self.a.size

    @property
    def energy(self) -> float:
        return float(self.a @ self.a)

    @property
    def noise_var_factor(self) -> float:
        return 1.0 / self.energy


def _design_from_pilot(a: np.ndarray) -> PilotDesign:
    energy = float(a @ a)
    return PilotDesign(a, a / energy)


def ls_estimate(y, s) -> float:
    """Least-squares fit of ``y = h s``."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    if y.shape != s.shape:
        raise ValueError("y and s must have the same shape")
    energy = float(s @ s)
    if energy == 0:
        raise ValueError("pilot sequence is all zero")
    return float(s @ y) / energy


def design_pilot(c: PilotConstraints) -> PilotDesign:
    """Optimal pilot: ``floor(L Phi/rho)`` slots at ``rho``, one remainder slot, rest off.

    High-power slots come first.
    """
    L, rho, phi = int(c.L), c.rho_hat, c.Phi_hat
    total = L * phi
    full = min(L, int(math.floor(total / rho + 1e-12)))
    a = np.zeros(L)
    a[:full] = rho
    if full < L:
        a[full] = max(total - full * rho, 0.0)
    return _design_from_pilot(a)


def uniform_pilot(c: PilotConstraints) -> PilotDesign:
    """Constant pilot at the average power, the naive baseline."""
    return _design_from_pilot(np.full(int(c.L), c.Phi_hat))


def zf_estimate(y, design: PilotDesign) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != design.a.shape:
        raise ValueError("received block length does not match the pilot")
    return float(design.w @ y)


def pilot_grid_oracle(
    c: PilotConstraints, grid_step: float = 0.05, max_candidates: int = 5_000_000
) -> tuple[float, np.ndarray]:
    """Brute-force the pilot energy over a grid; a verifier for :func:`design_pilot`.

    The first ``L - 1`` amplitudes range over ``0, step, 2 step, ... <= rho``
    (plus ``rho`` itself) and the last is fixed by the mean constraint, so every candidate is
    exactly feasible.  Returns the best energy and its pilot.

    Raises
    ------
    ValueError
        If a partial enumeration would exceed ``max_candidates`` rows.
    """
    L = int(c.L)
    if L > 6:
        raise ValueError("grid oracle is limited to L <= 6")
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    rho, total = c.rho_hat, L * c.Phi_hat
    grid = np.arange(int(math.floor(rho / grid_step + 1e-9)) + 1) * grid_step
    if rho - grid[-1] > 1e-9 * rho:
        # keep the peak-power vertex even when rho is off the grid
        grid = np.append(grid, rho)
    tol = 1e-12 * max(1.0, total)
    idx = np.zeros((1, 0), dtype=np.int32)
    sums = np.zeros(1)
    for step in range(1, L):
        if sums.size * grid.size > max_candidates:
            raise ValueError(f"grid too fine: more than {max_candidates} candidates; increase grid_step")
        cand = sums[:, None] + grid[None, :]
        # drop prefixes that overshoot or can no longer reach the mean
        keep = (cand <= total + tol) & (cand + (L - step) * rho >= total - tol)
        rows, cols = np.nonzero(keep)
        idx = np.column_stack([idx[rows], cols.astype(np.int32)])
        sums = cand[rows, cols]
    last = total - sums
    ok = (last >= -tol) & (last <= rho + tol)
    if not ok.any():
        raise InfeasiblePilotError("no grid point satisfies the average-power constraint")
    pilots = np.column_stack([grid[idx[ok]], np.clip(last[ok], 0.0, rho)]) if L > 1 else np.array([[total]])
    energy = (pilots**2).sum(axis=1)
    best = int(np.argmax(energy))
    return float(energy[best]), pilots[best]


def transmit_pilot(h: float, a, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Received pilot block ``h a + z`` with ``z ~ N(0, sigma2)`` per slot."""
    a = np.asarray(a, dtype=float)
    return h * a + math.sqrt(sigma2) * rng.standard_normal(a.shape)


def noise_variance_for_snr(h_rms: float, Phi_hat: float, snr_db: float) -> float:
    """Noise variance giving ``(h_rms Phi_hat)^2 / sigma2 = 10^(snr_db/10)``."""
    return (h_rms * Phi_hat) ** 2 / 10 ** (snr_db / 10)


@dataclass(frozen=True)
class EstimatorReport:
    scheme: str
    h_true: np.ndarray
    h_hat: np.ndarray

    @property
    def delta_h(self) -> np.ndarray:
        return np.abs(self.h_true - self.h_hat) / self.h_true

    @property
    def nmse(self) -> float:
        return float(np.sum((self.h_hat - self.h_true) ** 2) / np.sum(self.h_true**2))


def pilot_for_scheme(scheme: str, c: PilotConstraints) -> PilotDesign:
    if scheme == "zf_coding":
        return design_pilot(c)
    if scheme in ("ls", "zf_uniform"):
        return uniform_pilot(c)
    raise ValueError(f"unknown estimation scheme {scheme!r}; expected one of {SCHEMES}")


def run_estimator(h_true, scheme: str, c: PilotConstraints, sigma2: float, seed: int = 0) -> EstimatorReport:
    """Estimate each entry of ``h_true`` from its own noisy pilot block.

    ``ls`` fits the constant average-power pilot by least squares;
    ``zf_coding`` uses the optimal pilot with its zero-forcing decoder.
    """
    h_true = np.atleast_1d(np.asarray(h_true, dtype=float))
    if (h_true <= 0).any():
        raise ValueError("true channel values must be positive")
    design = pilot_for_scheme(scheme, c)
    rng = np.random.default_rng(seed)
    est = np.empty_like(h_true)
    for i, h in enumerate(h_true):
        y = transmit_pilot(h, design.a, sigma2, rng)
        est[i] = ls_estimate(y, design.a) if scheme == "ls" else zf_estimate(y, design)
    return EstimatorReport(scheme, h_true, est)
