"""Artifact lineage: content hashes in headers, stale-cache detection.

Every persisted intermediate starts with two comment lines naming its
kind and the hash of everything it was computed from. A stage reuses an
artifact on disk only when the recorded hash equals the hash of the
stage's current inputs, so mixed or stale artifacts are never silently
combined.
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from .errors import DataError

MAGIC = "slgcn"
VERSION = "v1"


def hash_text(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def hash_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def header_lines(kind: str, inputs_hash: str) -> list[str]:
    return [f"{MAGIC} {kind} {VERSION}", f"inputs {inputs_hash}"]


def read_header(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                body = line[1:].strip()
                if body.startswith(f"{MAGIC} "):
                    _, kind, version = body.split()
                    out["kind"] = kind
                    out["version"] = version
                elif body.startswith("inputs "):
                    out["inputs"] = body.split(" ", 1)[1]
    except OSError as exc:
        raise DataError(f"cannot read artifact {path}: {exc}") from exc
    return out


def artifact_fresh(path: str, kind: str, inputs_hash: str) -> bool:
    if not os.path.exists(path):
        return False
    try:
        head = read_header(path)
    except DataError:
        return False
    return head.get("kind") == kind and head.get("inputs") == inputs_hash


# -- numpy bundle artifacts (binary) ---------------------------------------


def save_arrays(path: str, kind: str, inputs_hash: str, arrays: dict[str, np.ndarray]) -> None:
    meta = np.array([kind, VERSION, inputs_hash])
    np.savez_compressed(path, __meta__=meta, **arrays)


def load_arrays(path: str, kind: str, inputs_hash: str | None = None) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as data:
        meta = data["__meta__"]
        if str(meta[0]) != kind or str(meta[1]) != VERSION:
            raise DataError(f"{path}: expected a {kind} artifact")
        if inputs_hash is not None and str(meta[2]) != inputs_hash:
            raise DataError(f"{path}: artifact is stale (input hash mismatch)")
        return {k: data[k] for k in data.files if k != "__meta__"}


def arrays_fresh(path: str, kind: str, inputs_hash: str) -> bool:
    if not os.path.exists(path):
        return False
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = data["__meta__"]
            return (
                str(meta[0]) == kind
                and str(meta[1]) == VERSION
                and str(meta[2]) == inputs_hash
            )
    except Exception:
        return False


# -- checkpoint container ----------------------------------------------------


def save_checkpoint(
    path: str,
    inputs_hash: str,
    config_text: str,
    params: dict[str, np.ndarray],
    adam_m: dict[str, np.ndarray],
    adam_v: dict[str, np.ndarray],
    step: int,
) -> None:
    """Text header plus little-endian float64 payload."""
    arrays: list[tuple[str, np.ndarray]] = []
    for prefix, group in (("param", params), ("adam_m", adam_m), ("adam_v", adam_v)):
        for key in sorted(group):
            arrays.append((f"{prefix}.{key}", np.asarray(group[key], dtype="<f8")))

    head = [f"{MAGIC}-checkpoint {VERSION}", f"inputs {inputs_hash}", f"step {step}", "config-begin"]
    head += [f"  {line}" for line in config_text.rstrip("\n").splitlines()]
    head.append("config-end")
    for name, arr in arrays:
        dims = ",".join(str(d) for d in arr.shape) if arr.shape else "scalar"
        head.append(f"array {name} {dims}")
    head.append("payload")

    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("utf-8"))
        for _, arr in arrays:
            fh.write(struct.pack("<Q", arr.size))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path: str):
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"payload\n"
    cut = blob.find(marker)
    if cut < 0:
        raise DataError(f"{path}: not a checkpoint file")
    head_lines = blob[:cut].decode("utf-8").splitlines()
    if not head_lines or not head_lines[0].startswith(f"{MAGIC}-checkpoint"):
        raise DataError(f"{path}: not a checkpoint file")
    inputs_hash = ""
    step = 0
    config_lines: list[str] = []
    specs: list[tuple[str, tuple[int, ...]]] = []
    in_config = False
    for line in head_lines[1:]:
        if line == "config-begin":
            in_config = True
        elif line == "config-end":
            in_config = False
        elif in_config:
            config_lines.append(line[2:] if line.startswith("  ") else line)
        elif line.startswith("inputs "):
            inputs_hash = line.split(" ", 1)[1]
        elif line.startswith("step "):
            step = int(line.split(" ", 1)[1])
        elif line.startswith("array "):
            _, name, dims = line.split(" ", 2)
            shape = () if dims == "scalar" else tuple(int(d) for d in dims.split(","))
            specs.append((name, shape))

    offset = cut + len(marker)
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for name, shape in specs:
        (size,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += size * 8
        prefix, key = name.split(".", 1)
        groups[prefix][key] = arr.copy()
    return {
        "inputs": inputs_hash,
        "step": step,
        "config_text": "\n".join(config_lines) + "\n",
        "params": groups["param"],
        "adam_m": groups["adam_m"],
        "adam_v": groups["adam_v"],
    }
