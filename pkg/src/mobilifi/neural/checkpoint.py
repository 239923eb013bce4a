"""Portable model checkpoints.

A checkpoint is a zip archive readable by ``numpy.load``: one ``.npy``
member per array named ``<layer>.<array>`` plus ``__meta__.json`` with the
format version, model kind, configuration and the ordered layer list
(type and array shapes).  Entries carry a fixed timestamp, so saving the
same model twice gives identical bytes.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cdrn import Cdrn, CdrnConfig
from .recurrent import LstmRegressor, RnnRegressor

FORMAT_VERSION = 1
_STAMP = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    """A checkpoint file is malformed or of an unknown kind."""


def _layers(model) -> list[tuple[str, str, dict[str, np.ndarray]]]:
    if isinstance(model, Cdrn):
        return [(name, type(layer).__name__, layer.state()) for name, layer in model.layers()]
    if isinstance(model, (LstmRegressor, RnnRegressor)):
        return [("cell", type(model).__name__, dict(model.params))]
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _meta(model, extra: dict | None) -> dict:
    layers = [
        {"name": name, "type": kind, "arrays": {k: list(v.shape) for k, v in arrays.items()}}
        for name, kind, arrays in _layers(model)
    ]
    meta = {"format": FORMAT_VERSION, "layers": layers, "extra": extra or {}}
    if isinstance(model, Cdrn):
        meta.update(kind="cdrn", config=asdict(model.config), scale=model.scale)
    else:
        meta.update(
            kind=model.kind,
            hidden_size=model.hidden_size,
            input_size=int(model.params["W_f" if model.kind == "lstm" else "W"].shape[0]),
            shared=bool(getattr(model, "shared", False)),
        )
    return meta


def save_checkpoint(path, model, extra: dict | None = None) -> Path:
    """Write ``model`` to ``path`` atomically; ``extra`` is stored in the metadata."""
    path = Path(path)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, _, arrays in _layers(model):
            for key, arr in arrays.items():
                member = io.BytesIO()
                np.lib.format.write_array(member, np.ascontiguousarray(arr, dtype=float), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.{key}.npy", _STAMP), member.getvalue())
        meta = json.dumps(_meta(model, extra), sort_keys=True, indent=1)
        zf.writestr(zipfile.ZipInfo("__meta__.json", _STAMP), meta)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    """Rebuild a model saved by :func:`save_checkpoint`.

    Returns ``(model, extra)``.
    """
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("__meta__.json"))
            arrays = {
                n[: -len(".npy")]: np.lib.format.read_array(io.BytesIO(zf.read(n)), allow_pickle=False)
                for n in zf.namelist()
                if n.endswith(".npy")
            }
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc})") from exc
    if meta.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    kind = meta.get("kind")
    if kind == "cdrn":
        model = Cdrn.init(CdrnConfig(**meta["config"]))
        model.scale = float(meta["scale"])
        named = dict(model.layers())
    elif kind in ("lstm", "rnn"):
        rng = np.random.default_rng(0)
        if kind == "lstm":
            model = LstmRegressor(meta["input_size"], meta["hidden_size"], rng, meta["shared"])
        else:
            model = RnnRegressor(meta["input_size"], meta["hidden_size"], rng)
        named = {"cell": model}
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    for entry in meta["layers"]:
        target = named.get(entry["name"])
        if target is None:
            raise CheckpointError(f"{path}: unexpected layer {entry['name']!r}")
        for key, shape in entry["arrays"].items():
            arr = arrays.get(f"{entry['name']}.{key}")
            if arr is None or list(arr.shape) != shape:
                raise CheckpointError(f"{path}: array {entry['name']}.{key} missing or misshapen")
            if key in target.params:
                target.params[key] = arr.astype(float)
            else:
                setattr(target, key, arr.astype(float))
    return model, meta["extra"]
