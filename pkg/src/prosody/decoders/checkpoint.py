#!env python3
# See the NOTICE file distributed with this work for additional information
# regarding copyright ownership.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Bit-exact checkpoint directories.

Layout of a checkpoint directory:
    manifest.json  {"version": 1, "dtype": "f64le", "params": [{"name", "shape"}...],
                    "t": <adam step, if saved>, "metadata": {...}}
    weights.bin    every parameter, in manifest order, as little-endian binary64
    adam_m.bin     first moments, same layout (optional)
    adam_v.bin     second moments, same layout (optional)
"""

__all__ = [
    "CheckpointError",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "load_into",
]

import json
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .nn import AdamState, ParameterStore
from .tensor import ContractError

FORMAT_VERSION = 1
DTYPE = "f64le"
MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"
ADAM_M = "adam_m.bin"
ADAM_V = "adam_v.bin"

StrPath = Union[str, PathLike]


class CheckpointError(ContractError):
    """Raised when a checkpoint file cannot be parsed."""

    def __init__(self, path: Path, offset: int, added_message: str = "") -> None:
        message = f"Malformed checkpoint file {path} at byte {offset}"
        if added_message:
            message += f": {added_message}"
        super().__init__(message)
        self.offset = offset


@dataclass
class Checkpoint:
    """Parameters loaded from disk, with optional optimizer state and metadata."""

    params: ParameterStore
    adam: Optional[AdamState] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


def _pack(arrays: List[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(array, dtype="<f8").tobytes() for array in arrays)


def _unpack(path: Path, shapes: List[Tuple[int, ...]]) -> List[np.ndarray]:
    blob = path.read_bytes()
    arrays = []
    offset = 0
    for shape in shapes:
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + n_bytes > len(blob):
            raise CheckpointError(path, len(blob), f"expected {offset + n_bytes} bytes")
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n_bytes // 8, offset=offset).reshape(shape))
        offset += n_bytes
    if offset != len(blob):
        raise CheckpointError(path, offset, f"{len(blob) - offset} trailing bytes")
    return arrays


def save_checkpoint(
    params: ParameterStore,
    path: StrPath,
    adam: Optional[AdamState] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Writes a checkpoint directory (created if needed) and returns its path."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    names = params.names()
    manifest: Dict[str, Any] = {
        "version": FORMAT_VERSION,
        "dtype": DTYPE,
        "params": [{"name": name, "shape": list(params[name].shape)} for name in names],
    }
    (directory / WEIGHTS).write_bytes(_pack([params[name].data for name in names]))
    if adam is not None:
        manifest["t"] = adam.t
        manifest["adam"] = {"lr": adam.lr, "b1": adam.b1, "b2": adam.b2, "eps": adam.eps}
        (directory / ADAM_M).write_bytes(_pack([adam.m[name] for name in names]))
        (directory / ADAM_V).write_bytes(_pack([adam.v[name] for name in names]))
    if metadata is not None:
        manifest["metadata"] = metadata
    with (directory / MANIFEST).open("w", encoding="utf-8") as manifest_file:
        json.dump(manifest, manifest_file, indent=2)
        manifest_file.write("\n")
    return directory


def _read_manifest(path: Path) -> Dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as ex:
        raise CheckpointError(path, len(text[: ex.pos].encode("utf-8")), ex.msg) from ex
    if not isinstance(manifest, dict):
        raise CheckpointError(path, 0, "manifest is not a JSON object")
    if manifest.get("version") != FORMAT_VERSION or manifest.get("dtype") != DTYPE:
        found = f"{manifest.get('version')}/{manifest.get('dtype')}"
        raise CheckpointError(path, 0, f"unsupported version/dtype {found}")
    entries = manifest.get("params")
    if not isinstance(entries, list):
        raise CheckpointError(path, 0, "missing params list")
    for entry in entries:
        if not isinstance(entry, dict) or "name" not in entry or "shape" not in entry:
            raise CheckpointError(path, 0, f"invalid params entry {entry!r}")
        if any(not isinstance(d, int) or d < 1 for d in entry["shape"]):
            raise CheckpointError(path, 0, f"invalid shape for {entry['name']}")
    return manifest


def load_checkpoint(path: StrPath) -> Checkpoint:
    """Reads a checkpoint directory written by save_checkpoint."""
    directory = Path(path)
    manifest = _read_manifest(directory / MANIFEST)
    names = [entry["name"] for entry in manifest["params"]]
    shapes = [tuple(entry["shape"]) for entry in manifest["params"]]

    params = ParameterStore()
    for name, array in zip(names, _unpack(directory / WEIGHTS, shapes)):
        params.add(name, array)

    adam = None
    if "t" in manifest and (directory / ADAM_M).exists():
        adam = AdamState(t=int(manifest["t"]), **manifest.get("adam", {}))
        for name, array in zip(names, _unpack(directory / ADAM_M, shapes)):
            adam.m[name] = np.array(array)
        for name, array in zip(names, _unpack(directory / ADAM_V, shapes)):
            adam.v[name] = np.array(array)
    return Checkpoint(params=params, adam=adam, metadata=manifest.get("metadata", {}))


def load_into(store: ParameterStore, path: StrPath) -> Checkpoint:
    """Loads a checkpoint into an existing model store, checking names and shapes."""
    checkpoint = load_checkpoint(path)
    expected = store.names()
    found = checkpoint.params.names()
    missing = [name for name in expected if name not in checkpoint.params]
    extra = [name for name in found if name not in store]
    if missing or extra:
        raise ContractError(
            "Checkpoint parameters do not match the model: "
            f"missing {missing or 'none'}, extra {extra or 'none'}"
        )
    for name in expected:
        loaded = checkpoint.params[name]
        if loaded.shape != store[name].shape:
            raise ContractError(
                f"Shape mismatch for '{name}': model {store[name].shape}, checkpoint {loaded.shape}"
            )
        store.replace(name, loaded)
    return checkpoint
