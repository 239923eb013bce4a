"""LED-to-PD optical channel gains along a pose trace.

The LOS path is a Lambertian emitter with a hard receiver FOV.  The first
diffuse reflection is available as an impulse response (:func:`nlos_gain`)
and, for per-slot gain matrices, as its time integral (:func:`nlos_dc_gain`).

Note that the default indoor-surface area ``A_r = 1e-4 m^2`` is taken as
tabulated; with it the integrated diffuse gain dwarfs the LOS gain, which is
why the diffuse term is disabled unless explicitly enabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import EulerAngles, PoseTrace, apply_rotation, rotation_matrices


def _vec3(v, name: str) -> tuple[float, float, float]:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,) or not np.isfinite(arr).all():
        raise ValueError(f"{name} must be a finite 3-vector")
    return tuple(float(x) for x in arr)


def _check_unit(v, name: str):
    if abs(math.sqrt(sum(x * x for x in v)) - 1.0) > 1e-9:
        raise ValueError(f"{name} must have unit norm")


@dataclass(frozen=True)
class PdConfig:
    id: str
    u_p0: tuple[float, float, float]
    n_p0: tuple[float, float, float] = (0.0, 0.0, 1.0)
    A_PD: float = 1e-4
    g_f: float = 1.0
    fov: float = math.radians(60.0)

    def __post_init__(self):
        object.__setattr__(self, "u_p0", _vec3(self.u_p0, "u_p0"))
        object.__setattr__(self, "n_p0", _vec3(self.n_p0, "n_p0"))
        _check_unit(self.n_p0, f"PD {self.id} n_p0")
        if not self.A_PD > 0 or not self.g_f > 0:
            raise ValueError(f"PD {self.id}: A_PD and g_f must be positive")
        if not 0 < self.fov <= math.pi / 2:
            raise ValueError(f"PD {self.id}: fov must lie in (0, pi/2]")


@dataclass(frozen=True)
class LedConfig:
    id: str
    u_l: tuple[float, float, float]
    n_l: tuple[float, float, float] = (0.0, 0.0, -1.0)
    m_order: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "u_l", _vec3(self.u_l, "u_l"))
        object.__setattr__(self, "n_l", _vec3(self.n_l, "n_l"))
        _check_unit(self.n_l, f"LED {self.id} n_l")
        if self.m_order < 0:
            raise ValueError(f"LED {self.id}: Lambertian order must be >= 0")


@dataclass(frozen=True)
class NlosParams:
    rho_nlos: float = 0.7
    A_r: float = 1e-4
    f_c: float = 1e7
    delta_t_nlos: float = 1e-8
    enabled: bool = False

    def __post_init__(self):
        if not 0 <= self.rho_nlos < 1:
            raise ValueError("rho_nlos must lie in [0, 1)")
        if not self.A_r > 0 or not self.f_c > 0 or self.delta_t_nlos < 0:
            raise ValueError("NLOS parameters need A_r > 0, f_c > 0, delta_t_nlos >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    """Room, emitters and receivers.

    ``room`` holds the room dimensions ``(Lx, Ly, Lz)``; x and y are centred
    on the origin and z runs from the floor (0) to the ceiling.  PD initial
    positions ``u_p0`` are given with the UE centroid at ``ue_origin``.
    """

    leds: tuple[LedConfig, ...]
    pds: tuple[PdConfig, ...]
    nlos: NlosParams = field(default_factory=NlosParams)
    room: tuple[float, float, float] = (4.0, 4.0, 3.0)
    ue_origin: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "leds", tuple(self.leds))
        object.__setattr__(self, "pds", tuple(self.pds))
        object.__setattr__(self, "room", _vec3(self.room, "room"))
        object.__setattr__(self, "ue_origin", _vec3(self.ue_origin, "ue_origin"))
        if not self.leds or not self.pds:
            raise ValueError("scenario needs at least one LED and one PD")
        if min(self.room) <= 0:
            raise ValueError("room dimensions must be positive")
        for led in self.leds:
            if not self.contains(led.u_l):
                raise ValueError(f"LED {led.id} at {led.u_l} lies outside the room")
        for pd in self.pds:
            if not self.contains(pd.u_p0):
                raise ValueError(f"PD {pd.id} at {pd.u_p0} lies outside the room")

    def contains(self, p) -> bool:
        lx, ly, lz = self.room
        x, y, z = p
        tol = 1e-12
        return abs(x) <= lx / 2 + tol and abs(y) <= ly / 2 + tol and -tol <= z <= lz + tol

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.leds), len(self.pds)


def default_scenario(n_leds: int = 1, led_spacing: float = 1.41, walking: bool = False) -> ScenarioConfig:
    """One ceiling LED at ``[0, 0, 3]`` and a handset with two PDs.

    PD1 sits on the screen face (normal +Z), PD2 on the top edge (normal +Y).
    With ``n_leds > 1`` the LEDs form a line along +Y centred on the origin,
    and ``walking=True`` switches the room to a 2 m x 100 m corridor.
    """
    room = (2.0, 100.0, 3.0) if walking else (4.0, 4.0, 3.0)
    offsets = (np.arange(n_leds) - (n_leds - 1) / 2) * led_spacing
    leds = tuple(LedConfig(f"LED{i + 1}", (0.0, float(y), 3.0)) for i, y in enumerate(offsets))
    pds = (
        PdConfig("PD1", (0.0, 0.06, 1.00425), (0.0, 0.0, 1.0)),
        PdConfig("PD2", (0.0, 0.0765, 1.0), (0.0, 1.0, 0.0)),
    )
    return ScenarioConfig(leds, pds, NlosParams(), room, (0.0, 0.0, 1.0))


def _los_batch(led: LedConfig, pos: np.ndarray, normal: np.ndarray, pd: PdConfig) -> np.ndarray:
    """Angle-form Lambertian gain for ``(T, 3)`` PD positions and normals."""
    dx = np.asarray(led.u_l) - pos
    d2 = dx[..., 0] * dx[..., 0] + dx[..., 1] * dx[..., 1] + dx[..., 2] * dx[..., 2]
    if np.any(d2 == 0):
        raise ValueError(f"LED {led.id} and PD {pd.id} positions coincide")
    d = np.sqrt(d2)
    n_l = led.n_l
    cos_phi = -(dx[..., 0] * n_l[0] + dx[..., 1] * n_l[1] + dx[..., 2] * n_l[2]) / d
    nn = np.sqrt(normal[..., 0] ** 2 + normal[..., 1] ** 2 + normal[..., 2] ** 2)
    cos_psi = (dx[..., 0] * normal[..., 0] + dx[..., 1] * normal[..., 1] + dx[..., 2] * normal[..., 2]) / (d * nn)
    psi = np.arccos(np.clip(cos_psi, -1.0, 1.0))
    visible = (cos_phi >= 0) & (psi <= pd.fov)
    m = led.m_order
    scale = (m + 1) * pd.A_PD * pd.g_f / (2 * np.pi)
    with np.errstate(invalid="ignore"):
        gain = scale / d2 * np.power(np.maximum(cos_phi, 0.0), m) * cos_psi
    return np.where(visible, gain, 0.0)


def los_gain(led: LedConfig, pd_pos, pd_normal, pd: PdConfig) -> float:
    """Lambertian LOS gain from exit angle, incidence angle and distance.

    Returns exactly 0 when the incidence angle exceeds the PD field of view
    or the PD lies behind the LED (negative exit-angle cosine).

    Raises
    ------
    ValueError
        If LED and PD positions coincide.
    """
    pos = np.asarray(pd_pos, dtype=float).reshape(1, 3)
    normal = np.asarray(pd_normal, dtype=float).reshape(1, 3)
    return float(_los_batch(led, pos, normal, pd)[0])


def los_gain_vector(led: LedConfig, pd_pos, pd_normal, pd: PdConfig) -> float:
    """Same gain written purely with position and normal vectors.

    Uses ``((u_p - u_l) . n_l)^m ((u_l - u_p) . n_p) / (d^(m+3) |n_p|)``;
    with a downward LED the first factor is ``(z_l - z_p)^m``.
    """
    u_l = np.asarray(led.u_l)
    n_p = np.asarray(pd_normal, dtype=float)
    diff = u_l - np.asarray(pd_pos, dtype=float)
    d = float(np.linalg.norm(diff))
    if d == 0:
        raise ValueError(f"LED {led.id} and PD {pd.id} positions coincide")
    n_norm = float(np.linalg.norm(n_p))
    axial = float(-diff @ np.asarray(led.n_l))
    incident = float(diff @ n_p)
    psi = math.acos(max(-1.0, min(1.0, incident / (d * n_norm))))
    if axial < 0 or psi > pd.fov:
        return 0.0
    m = led.m_order
    num = (m + 1) * pd.A_PD * pd.g_f * axial**m * incident
    return num / (2 * math.pi * d ** (m + 3) * n_norm)


def nlos_gain(nlos: NlosParams, pd: PdConfig, t):
    """First-reflection impulse response at delay ``t`` (seconds, scalar or array).

    Zero before the diffuse onset ``delta_t_nlos``; the result is a gain
    density in 1/s whose time integral is :func:`nlos_dc_gain`.
    """
    t = np.asarray(t, dtype=float)
    if not np.isfinite(t).all():
        raise ValueError("t must be finite")
    if nlos.rho_nlos >= 1:
        raise ValueError("rho_nlos = 1 makes the diffuse gain unbounded")
    amp = 2 * np.pi * nlos.f_c * nlos_dc_gain(nlos, pd)
    tau = t - nlos.delta_t_nlos
    out = np.where(tau >= 0, amp * np.exp(-2 * np.pi * nlos.f_c * np.maximum(tau, 0.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def nlos_dc_gain(nlos: NlosParams, pd: PdConfig) -> float:
    if nlos.rho_nlos >= 1:
        raise ValueError("rho_nlos = 1 makes the diffuse gain unbounded")
    return pd.A_PD * nlos.rho_nlos / (nlos.A_r * (1 - nlos.rho_nlos))


def _gain_tensor(scenario: ScenarioConfig, angles: np.ndarray, ue: np.ndarray) -> np.ndarray:
    angles = np.asarray(angles, dtype=float).reshape(-1, 3)
    ue = np.asarray(ue, dtype=float).reshape(-1, 3)
    rot = rotation_matrices(angles)
    k_count, n_count = scenario.shape
    out = np.zeros((angles.shape[0], k_count, n_count))
    origin = np.asarray(scenario.ue_origin)
    for n, pd in enumerate(scenario.pds):
        pos = ue + apply_rotation(rot, np.asarray(pd.u_p0) - origin)
        normal = apply_rotation(rot, np.asarray(pd.n_p0))
        for k, led in enumerate(scenario.leds):
            out[:, k, n] = _los_batch(led, pos, normal, pd)
        if scenario.nlos.enabled:
            out[:, :, n] += nlos_dc_gain(scenario.nlos, pd)
    return out


def channel_gain_matrix(scenario: ScenarioConfig, angles: EulerAngles, ue_position) -> np.ndarray:
    """K x N gain matrix for one pose sample."""
    a = np.array([[angles.alpha, angles.beta, angles.gamma]])
    return _gain_tensor(scenario, a, np.asarray(ue_position, dtype=float).reshape(1, 3))[0]


@dataclass(frozen=True)
class ChannelTrace:
    """Per-slot K x N gain matrices sampled at ``f_s``."""

    gains: np.ndarray
    f_s: float
    t: np.ndarray | None = None
    provenance: str = "simulated"
    led_ids: tuple[str, ...] | None = None
    pd_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=float)
        if g.ndim != 3 or g.shape[0] == 0:
            raise ValueError("gains must have shape (T, K, N) with T >= 1")
        if not np.isfinite(g).all() or (g < 0).any():
            raise ValueError("channel gains must be finite and non-negative")
        if not self.f_s > 0:
            raise ValueError("f_s must be positive")
        if self.provenance not in ("simulated", "ingested"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        t = np.arange(g.shape[0]) / self.f_s if self.t is None else np.asarray(self.t, dtype=float)
        if t.shape != (g.shape[0],):
            raise ValueError("t must have one entry per slot")
        led_ids = self.led_ids or tuple(f"LED{k + 1}" for k in range(g.shape[1]))
        pd_ids = self.pd_ids or tuple(f"PD{n + 1}" for n in range(g.shape[2]))
        if len(led_ids) != g.shape[1] or len(pd_ids) != g.shape[2]:
            raise ValueError("id lists must match the gain matrix shape")
        g.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "led_ids", tuple(led_ids))
        object.__setattr__(self, "pd_ids", tuple(pd_ids))

    def __len__(self) -> int:
        return self.gains.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.gains.shape[1], self.gains.shape[2]

    def series(self, k: int = 0, n: int = 0) -> np.ndarray:
        return self.gains[:, k, n]


def sample_channel_trace(scenario: ScenarioConfig, trace: PoseTrace) -> ChannelTrace:
    gains = _gain_tensor(scenario, trace.angles, trace.ue_position)
    return ChannelTrace(
        gains,
        trace.f_s,
        trace.t,
        "simulated",
        tuple(led.id for led in scenario.leds),
        tuple(pd.id for pd in scenario.pds),
    )
