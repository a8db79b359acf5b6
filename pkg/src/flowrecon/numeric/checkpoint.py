"""Binary checkpoint format.

Layout::

    b"FGCK" | uint32 version | uint32 header_len | header (UTF-8 JSON)
    | parameter arrays (little-endian, header order)
    | Adam first/second moments (little-endian, header order)

Parameter names are ``<group>/<name>`` where the group is one of the
networks (``phi``, ``psi``, ``theta``, ``disc``).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .params import ParamStore

MAGIC = b"FGCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    meta: dict
    step: int
    arrays: dict[str, np.ndarray]
    adam: dict[str, np.ndarray] = field(default_factory=dict)
    adam_steps: dict[str, int] = field(default_factory=dict)

    def groups(self) -> set[str]:
        return {name.split("/", 1)[0] for name in self.arrays}

    def has_group(self, group: str) -> bool:
        return group in self.groups()

    def load_into(self, group: str, store: ParamStore, with_adam: bool = True) -> None:
        prefix = group + "/"
        names = [n[len(prefix):] for n in self.arrays if n.startswith(prefix)]
        if set(names) != set(store):
            diff = sorted(set(names) ^ set(store))
            raise CheckpointError(f"group {group!r} does not match model parameters: {diff[:5]}")
        for n in names:
            arr = self.arrays[prefix + n]
            if arr.shape != store[n].shape:
                raise CheckpointError(f"{prefix + n}: shape {arr.shape} != {store[n].shape}")
            store[n].data = arr.astype(store.dtype, copy=True)
            if with_adam and (prefix + n + ":m") in self.adam:
                store.m[n] = self.adam[prefix + n + ":m"].astype(store.dtype, copy=True)
                store.v[n] = self.adam[prefix + n + ":v"].astype(store.dtype, copy=True)
        if with_adam:
            store.step = self.adam_steps.get(group, 0)


def _entry(name: str, arr: np.ndarray) -> dict:
    return {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str}


def save_checkpoint(path, stores: Mapping[str, ParamStore], step: int = 0, meta: dict | None = None,
                    with_adam: bool = True) -> None:
    arrays, adam = [], []
    for group, store in stores.items():
        for n, t in store.items():
            arrays.append((f"{group}/{n}", t.data))
        if with_adam:
            for n in store:
                adam.append((f"{group}/{n}:m", store.m[n]))
                adam.append((f"{group}/{n}:v", store.v[n]))
    header = {
        "version": VERSION,
        "step": int(step),
        "meta": meta or {},
        "params": [_entry(n, a) for n, a in arrays],
        "adam": [_entry(n, a) for n, a in adam],
        "adam_steps": {g: int(s.step) for g, s in stores.items()} if with_adam else {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays + adam:
            fh.write(np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes())
    tmp.replace(path)


def load_checkpoint(path, with_adam: bool = True) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen

    def read(entries):
        nonlocal offset
        out = {}
        for e in entries:
            dt = np.dtype(e["dtype"])
            count = int(np.prod(e["shape"], dtype=np.int64))
            nbytes = count * dt.itemsize
            if offset + nbytes > len(raw):
                raise CheckpointError(f"{path}: truncated at {e['name']}")
            out[e["name"]] = np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(e["shape"]).copy()
            offset += nbytes
        return out

    arrays = read(header["params"])
    adam = read(header["adam"]) if with_adam else {}
    return Checkpoint(meta=header["meta"], step=header["step"], arrays=arrays, adam=adam,
                      adam_steps=header.get("adam_steps", {}))


def strip_groups(src, dst, drop=("disc",), with_adam: bool = False) -> None:
    """Copy a checkpoint without the named groups (e.g. an inference-only export)."""
    ck = load_checkpoint(src, with_adam=with_adam)
    stores: dict[str, ParamStore] = {}
    for name, arr in ck.arrays.items():
        group, pname = name.split("/", 1)
        if group in drop:
            continue
        store = stores.setdefault(group, ParamStore(arr.dtype))
        store.add(pname, arr)
        if with_adam:
            store.m[pname] = ck.adam[name + ":m"]
            store.v[pname] = ck.adam[name + ":v"]
    if with_adam:
        for g, s in stores.items():
            s.step = ck.adam_steps.get(g, 0)
    save_checkpoint(dst, stores, step=ck.step, meta=ck.meta, with_adam=with_adam)
