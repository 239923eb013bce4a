"""CSV and JSON exchange formats.

Floats are written with ``repr`` so every value reads back bit for bit.
All writers go through a temporary file and ``os.replace``, so a reader
never sees a half-written file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .channel import ChannelTrace, LedConfig, NlosParams, PdConfig, ScenarioConfig
from .geometry import ImuSample

IMU_HEADER = ("t_s", "wx_rad_s", "wy_rad_s", "wz_rad_s")
_GAIN_COLUMN = re.compile(r"h_k(\d+)_n(\d+)$")


class InputFormatError(ValueError):
    """An input file does not follow its documented format."""


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _read_rows(path) -> list[tuple[int, list[str]]]:
    """Non-blank CSV rows with 1-based line numbers; CRLF and a BOM are accepted."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        rows = []
        for row in reader:
            if row and any(cell.strip() for cell in row):
                rows.append((reader.line_num, [cell.strip() for cell in row]))
    if not rows:
        raise InputFormatError(f"{path}: file is empty")
    return rows


def _floats(path, line: int, cells: list[str], width: int) -> list[float]:
    if len(cells) != width:
        raise InputFormatError(f"{path}:{line}: expected {width} fields, found {len(cells)}")
    try:
        values = [float(c) for c in cells]
    except ValueError:
        raise InputFormatError(f"{path}:{line}: non-numeric field in {cells!r}") from None
    if not all(math.isfinite(v) for v in values):
        raise InputFormatError(f"{path}:{line}: non-finite value")
    return values


def ingest_imu_csv(path) -> list[ImuSample]:
    """Read gyroscope samples with header ``t_s,wx_rad_s,wy_rad_s,wz_rad_s``.

    Raises
    ------
    InputFormatError
        On a wrong header, a malformed row or a timestamp that does not
        increase; the message carries ``path:line``.
    """
    rows = _read_rows(path)
    line, header = rows[0]
    if tuple(header) != IMU_HEADER:
        raise InputFormatError(f"{path}:{line}: header must be {','.join(IMU_HEADER)}, got {','.join(header)}")
    samples: list[ImuSample] = []
    for line, cells in rows[1:]:
        t, wx, wy, wz = _floats(path, line, cells, 4)
        if samples and t <= samples[-1].t:
            raise InputFormatError(f"{path}:{line}: time {t!r} does not increase (previous {samples[-1].t!r})")
        samples.append(ImuSample(t, (wx, wy, wz)))
    return samples


def write_imu_csv(samples: Sequence[ImuSample], path) -> Path:
    lines = [",".join(IMU_HEADER)]
    lines += [",".join(format_value(v) for v in (s.t, *s.omega)) for s in samples]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def emit_plot_data(series: Mapping[str, Sequence], path) -> Path:
    """Write equal-length columns as a CSV with a header row.

    Column order follows the mapping order.
    """
    if not series:
        raise ValueError("no columns to write")
    cols = {k: list(v) for k, v in series.items()}
    lengths = {len(v) for v in cols.values()}
    if len(lengths) != 1:
        raise ValueError(f"columns have different lengths: { {k: len(v) for k, v in cols.items()} }")
    if lengths == {0}:
        raise ValueError("series is empty")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in zip(*cols.values()):
        writer.writerow([format_value(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_plot_data(path) -> dict[str, np.ndarray]:
    """Read a CSV written by :func:`emit_plot_data` into float columns."""
    rows = _read_rows(path)
    header = rows[0][1]
    data = [_floats(path, line, cells, len(header)) for line, cells in rows[1:]]
    arr = np.array(data, dtype=float).reshape(len(data), len(header))
    return {name: arr[:, j] for j, name in enumerate(header)}


def trace_header(K: int, N: int) -> list[str]:
    return ["t_s"] + [f"h_k{k + 1}_n{n + 1}" for k in range(K) for n in range(N)]


def write_channel_trace_csv(trace: ChannelTrace, path) -> Path:
    T, K, N = trace.gains.shape
    cols = {"t_s": trace.t}
    flat = trace.gains.reshape(T, K * N)
    for j, name in enumerate(trace_header(K, N)[1:]):
        cols[name] = flat[:, j]
    return emit_plot_data(cols, path)


def read_channel_trace_csv(path, f_s: float | None = None) -> ChannelTrace:
    """Load a trace with columns ``t_s,h_k1_n1,...`` in row-major ``(k, n)`` order.

    ``f_s`` defaults to the rate implied by the first and last timestamps.
    """
    rows = _read_rows(path)
    line, header = rows[0]
    if not header or header[0] != "t_s":
        raise InputFormatError(f"{path}:{line}: first column must be t_s")
    idx = []
    for name in header[1:]:
        m = _GAIN_COLUMN.match(name)
        if not m:
            raise InputFormatError(f"{path}:{line}: unexpected column {name!r}")
        idx.append((int(m.group(1)), int(m.group(2))))
    if not idx:
        raise InputFormatError(f"{path}:{line}: no gain columns")
    K, N = max(k for k, _ in idx), max(n for _, n in idx)
    if header != trace_header(K, N):
        raise InputFormatError(f"{path}:{line}: gain columns must be h_k1_n1..h_k{K}_n{N} in row-major order")
    data = np.array([_floats(path, ln, cells, len(header)) for ln, cells in rows[1:]], dtype=float)
    if data.size == 0:
        raise InputFormatError(f"{path}: no data rows")
    t = data[:, 0]
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        raise InputFormatError(f"{path}:{rows[int(bad[0]) + 2][0]}: time does not increase")
    if (data[:, 1:] < 0).any():
        raise InputFormatError(f"{path}: negative channel gain")
    if f_s is None:
        if t.size < 2:
            raise InputFormatError(f"{path}: a single-row trace needs an explicit sampling rate")
        f_s = (t.size - 1) / (t[-1] - t[0])
    return ChannelTrace(data[:, 1:].reshape(t.size, K, N), f_s, t, "ingested")


_LED_KEYS = {"id", "u_l", "n_l", "m_order"}
_PD_KEYS = {"id", "u_p0", "n_p0", "A_PD", "g_f", "fov_deg"}
_NLOS_KEYS = {"rho_nlos", "A_r", "f_c", "delta_t_nlos", "enabled"}
_TOP_KEYS = {"room", "ue_origin", "leds", "pds", "nlos"}


def scenario_to_dict(s: ScenarioConfig) -> dict:
    return {
        "room": list(s.room),
        "ue_origin": list(s.ue_origin),
        "leds": [{"id": l.id, "u_l": list(l.u_l), "n_l": list(l.n_l), "m_order": l.m_order} for l in s.leds],
        "pds": [
            {
                "id": p.id,
                "u_p0": list(p.u_p0),
                "n_p0": list(p.n_p0),
                "A_PD": p.A_PD,
                "g_f": p.g_f,
                "fov_deg": math.degrees(p.fov),
            }
            for p in s.pds
        ],
        "nlos": {
            "rho_nlos": s.nlos.rho_nlos,
            "A_r": s.nlos.A_r,
            "f_c": s.nlos.f_c,
            "delta_t_nlos": s.nlos.delta_t_nlos,
            "enabled": s.nlos.enabled,
        },
    }


def _check_keys(obj, allowed: set[str], required: set[str], where: str):
    if not isinstance(obj, dict):
        raise InputFormatError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise InputFormatError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise InputFormatError(f"{where}: missing keys {sorted(missing)}")


def scenario_from_dict(d: dict) -> ScenarioConfig:
    """Build a scenario from the JSON structure; unknown keys are rejected."""
    _check_keys(d, _TOP_KEYS, {"leds", "pds"}, "scenario")
    try:
        leds = []
        for i, led in enumerate(d["leds"]):
            _check_keys(led, _LED_KEYS, {"id", "u_l"}, f"leds[{i}]")
            leds.append(LedConfig(**led))
        pds = []
        for i, pd in enumerate(d["pds"]):
            _check_keys(pd, _PD_KEYS, {"id", "u_p0"}, f"pds[{i}]")
            kw = {k: v for k, v in pd.items() if k != "fov_deg"}
            if "fov_deg" in pd:
                kw["fov"] = math.radians(pd["fov_deg"])
            pds.append(PdConfig(**kw))
        nlos = d.get("nlos", {})
        _check_keys(nlos, _NLOS_KEYS, set(), "nlos")
        extra = {k: d[k] for k in ("room", "ue_origin") if k in d}
        return ScenarioConfig(tuple(leds), tuple(pds), NlosParams(**nlos), **extra)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputFormatError):
            raise
        raise InputFormatError(f"scenario: {exc}") from exc


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return scenario_from_dict(d)


def save_scenario(s: ScenarioConfig, path) -> Path:
    return atomic_write_text(path, json.dumps(scenario_to_dict(s), indent=2) + "\n")
