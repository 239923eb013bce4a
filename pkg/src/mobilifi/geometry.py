"""Device orientation and PD placement over time.

Angles follow the handset convention used throughout the package: ``alpha``
rotates about Z, ``beta`` about X and ``gamma`` about Y.  The composite
rotation is the literal product ``R_alpha @ R_beta @ R_gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPACING_TOL = 1e-9


@dataclass(frozen=True)
class EulerAngles:
    alpha: float
    beta: float
    gamma: float
    t: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.alpha, self.beta, self.gamma)):
            raise ValueError("rotation angles must be finite")
        if not math.isfinite(self.t) or self.t < 0:
            raise ValueError(f"time must be finite and non-negative, got {self.t}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


@dataclass(frozen=True)
class ImuSample:
    """One gyroscope reading; ``omega`` holds rates about X, Y, Z in rad/s."""

    t: float
    omega: tuple[float, float, float]

    def __post_init__(self):
        if len(self.omega) != 3:
            raise ValueError("omega must have three components")
        if not all(math.isfinite(v) for v in (self.t, *self.omega)):
            raise ValueError("IMU sample fields must be finite")


@dataclass(frozen=True)
class PoseTrace:
    """Uniformly sampled orientation and UE position.

    Attributes
    ----------
    t : (n,) array
        Sample times in seconds.
    angles : (n, 3) array
        Columns ``alpha, beta, gamma`` in radians.
    ue_position : (n, 3) array
        UE centroid in metres.
    f_s : float
        Sampling rate in Hz.
    """

    t: np.ndarray
    angles: np.ndarray
    ue_position: np.ndarray
    f_s: float

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        angles = np.asarray(self.angles, dtype=float)
        pos = np.asarray(self.ue_position, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("pose trace must be nonempty")
        if angles.shape != (t.size, 3) or pos.shape != (t.size, 3):
            raise ValueError("angles and ue_position must have shape (n, 3)")
        if not self.f_s > 0:
            raise ValueError("f_s must be positive")
        if not (np.isfinite(angles).all() and np.isfinite(pos).all() and np.isfinite(t).all()):
            raise ValueError("pose trace contains non-finite values")
        if t.size > 1 and np.max(np.abs(np.diff(t) - 1.0 / self.f_s)) > SPACING_TOL:
            raise ValueError("pose trace is not uniformly spaced at 1/f_s")
        for name, arr in (("t", t), ("angles", angles), ("ue_position", pos)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.t.size

    def sample(self, i: int) -> tuple[EulerAngles, np.ndarray]:
        a, b, g = self.angles[i]
        return EulerAngles(a, b, g, float(self.t[i])), self.ue_position[i].copy()


def _rotation_stack(alpha, beta, gamma) -> np.ndarray:
    # Written out element by element so single-slot and batched calls agree bit for bit.
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    r = np.empty(np.shape(alpha) + (3, 3))
    # R_alpha @ R_beta
    m00, m01, m02 = ca, -sa * cb, sa * sb
    m10, m11, m12 = sa, ca * cb, -ca * sb
    m20, m21, m22 = 0.0, sb, cb
    # (R_alpha @ R_beta) @ R_gamma
    r[..., 0, 0] = m00 * cg - m02 * sg
    r[..., 0, 1] = m01
    r[..., 0, 2] = m00 * sg + m02 * cg
    r[..., 1, 0] = m10 * cg - m12 * sg
    r[..., 1, 1] = m11
    r[..., 1, 2] = m10 * sg + m12 * cg
    r[..., 2, 0] = m20 * cg - m22 * sg
    r[..., 2, 1] = m21
    r[..., 2, 2] = m20 * sg + m22 * cg
    return r


def rotation_matrices(angles: np.ndarray) -> np.ndarray:
    """Batched rotation matrices for an ``(n, 3)`` array of ``alpha, beta, gamma``."""
    angles = np.asarray(angles, dtype=float)
    return _rotation_stack(angles[..., 0], angles[..., 1], angles[..., 2])


def rotation_matrix(angles: EulerAngles) -> np.ndarray:
    return _rotation_stack(angles.alpha, angles.beta, angles.gamma)


def apply_rotation(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``r @ v`` for stacks of matrices and vectors with a fixed summation order."""
    v = np.asarray(v, dtype=float)
    return r[..., 0] * v[..., None, 0] + r[..., 1] * v[..., None, 1] + r[..., 2] * v[..., None, 2]


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError(f"{name} must be a unit 3-vector, got {v}")
    return v


def pd_normal(angles: EulerAngles, n_p0) -> np.ndarray:
    """Rotate the initial PD normal by the device orientation."""
    n_p0 = _unit(n_p0, "n_p0")
    return apply_rotation(rotation_matrix(angles), n_p0)


def pd_position(angles: EulerAngles, u_u, u_p0) -> np.ndarray:
    """PD position after rotating its offset from the UE centroid."""
    u_u = np.asarray(u_u, dtype=float)
    u_p0 = np.asarray(u_p0, dtype=float)
    return u_u + apply_rotation(rotation_matrix(angles), u_p0 - u_u)


def integrate_imu(
    samples: Sequence[ImuSample],
    initial: EulerAngles,
    f_s: float,
    ue_position: Sequence[float] = (0.0, 0.0, 0.0),
) -> PoseTrace:
    """Accumulate gyroscope rates into angles and resample to a uniform grid.

    Rates map as ``omega_z -> alpha``, ``omega_x -> beta`` and
    ``omega_y -> gamma``.  Each rate is held constant until the next sample
    (forward Euler), then the angle path is linearly interpolated onto
    ``t0 + k / f_s``.

    Raises
    ------
    ValueError
        If fewer than two samples are given or timestamps are not strictly
        increasing.
    """
    if len(samples) < 2:
        raise ValueError("integrate_imu needs at least two samples")
    if not f_s > 0:
        raise ValueError("f_s must be positive")
    t = np.array([s.t for s in samples], dtype=float)
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise ValueError(f"IMU timestamps must be strictly increasing (sample {i}: t={t[i]!r})")
    omega = np.array([s.omega for s in samples], dtype=float)
    rates = omega[:, [2, 0, 1]]  # (alpha, beta, gamma) <- (z, x, y)
    steps = rates[:-1] * np.diff(t)[:, None]
    path = np.empty((t.size, 3))
    path[0] = initial.as_array()
    path[1:] = path[0] + np.cumsum(steps, axis=0)

    n = int(math.floor((t[-1] - t[0]) * f_s + 1e-9)) + 1
    grid = t[0] + np.arange(n) / f_s
    angles = np.column_stack([np.interp(grid, t, path[:, j]) for j in range(3)])
    pos = np.broadcast_to(np.asarray(ue_position, dtype=float), (n, 3)).copy()
    return PoseTrace(grid, angles, pos, f_s)


@dataclass(frozen=True)
class AngleModel:
    """Mean-reverting random walk for handset angles.

    ``std`` is the stationary standard deviation of each angle, ``bound``
    clips excursions at ``bound * std`` around the mean.
    """

    mean: tuple[float, float, float] = (0.0, math.radians(40.0), 0.0)
    std: float = math.radians(5.0)
    reversion_time: float = 1.0
    bound: float = 3.0

    def __post_init__(self):
        if self.std < 0 or self.reversion_time <= 0 or self.bound < 0:
            raise ValueError("angle model needs std >= 0, reversion_time > 0, bound >= 0")


def _angle_walk(model: AngleModel, n: int, f_s: float, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(model.mean, dtype=float)
    noise = rng.standard_normal((n, 3))
    if model.std == 0:
        return np.tile(mean, (n, 1))
    a = math.exp(-1.0 / (f_s * model.reversion_time))
    kick = model.std * math.sqrt(1.0 - a * a)
    lim = model.bound * model.std
    out = np.empty((n, 3))
    x = np.clip(model.std * noise[0], -lim, lim)
    out[0] = mean + x
    for i in range(1, n):
        x = np.clip(a * x + kick * noise[i], -lim, lim)
        out[i] = mean + x
    return out


def make_trajectory(
    kind: str,
    duration: float,
    f_s: float,
    speed: float = 0.6,
    start: Sequence[float] = (0.0, 0.0, 1.0),
    end: Sequence[float] | None = None,
    angle_model: AngleModel | None = None,
    seed: int = 0,
) -> PoseTrace:
    """Synthetic sitting or walking pose trace.

    The trace has ``round(duration * f_s)`` samples at ``k / f_s``.  A
    sitting user stays at ``start``; a walking user heads from ``start``
    towards ``end`` at ``speed`` and stops on arrival.
    """
    if kind not in ("sitting", "walking"):
        raise ValueError(f"unknown trajectory kind {kind!r}")
    if not duration > 0 or not f_s > 0:
        raise ValueError("duration and f_s must be positive")
    model = angle_model or AngleModel()
    n = int(round(duration * f_s))
    if n < 1:
        raise ValueError("duration * f_s must give at least one sample")
    t = np.arange(n) / f_s
    rng = np.random.default_rng(seed)
    angles = _angle_walk(model, n, f_s, rng)
    start = np.asarray(start, dtype=float)
    if kind == "sitting":
        pos = np.tile(start, (n, 1))
    else:
        if not speed > 0:
            raise ValueError("walking requires speed > 0")
        if end is None:
            raise ValueError("walking requires an end point")
        delta = np.asarray(end, dtype=float) - start
        dist = float(np.linalg.norm(delta))
        if dist == 0:
            raise ValueError("walking start and end coincide")
        travelled = np.minimum(speed * t, dist)
        pos = start + travelled[:, None] * (delta / dist)
    return PoseTrace(t, angles, pos, f_s)
