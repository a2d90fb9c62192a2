"""Flat tensor archive: the on-disk weight format shared by all modules.

A ``.weights`` file is a zip holding one raw little-endian binary blob per
tensor plus ``manifest.json`` listing (name, dtype, shape) in order. The
format is self-describing and independent of any framework's pickle.
"""

import io
import json
import zipfile
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"


class WeightArchiveError(RuntimeError):
    """Raised on malformed archives or name/dtype/shape mismatches."""


def save_archive(tensors: dict[str, np.ndarray], path) -> None:
    """Write a name -> array mapping to ``path`` (created/overwritten)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = []
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for i, (name, arr) in enumerate(tensors.items()):
            arr = np.ascontiguousarray(arr)
            blob = f"tensor_{i:05d}.bin"
            manifest.append(
                {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "blob": blob}
            )
            zf.writestr(blob, arr.tobytes())
        zf.writestr(MANIFEST_NAME, json.dumps(manifest, indent=1))


def load_archive(path) -> dict[str, np.ndarray]:
    """Read an archive back into a name -> array mapping (insertion-ordered)."""
    path = Path(path)
    if not path.is_file():
        raise WeightArchiveError(f"weight archive not found: {path}")
    out: dict[str, np.ndarray] = {}
    with zipfile.ZipFile(path) as zf:
        try:
            manifest = json.loads(zf.read(MANIFEST_NAME))
        except KeyError:
            raise WeightArchiveError(f"{path} has no {MANIFEST_NAME}") from None
        for entry in manifest:
            raw = zf.read(entry["blob"])
            arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
            out[entry["name"]] = arr.copy()
    return out


def load_into_module(module, archive: dict[str, np.ndarray], strict: bool = False) -> dict:
    """Copy archive tensors into a torch module's parameters/buffers by name.

    Returns ``{"loaded": [...], "missing": [...], "unexpected": [...]}`` where
    ``missing`` are module tensors absent from the archive (left at their
    current values) and ``unexpected`` are archive tensors with no home.
    With ``strict=True`` any unexpected name or shape/dtype mismatch raises,
    naming the first offending tensor.
    """
    import torch

    state = module.state_dict()
    loaded, unexpected = [], []
    for name, arr in archive.items():
        if name not in state:
            unexpected.append(name)
            if strict:
                raise WeightArchiveError(f"archive tensor {name!r} not present in module")
            continue
        target = state[name]
        if tuple(target.shape) != tuple(arr.shape):
            raise WeightArchiveError(
                f"shape mismatch for tensor {name!r}: module {tuple(target.shape)}, "
                f"archive {tuple(arr.shape)}"
            )
        with torch.no_grad():
            target.copy_(torch.from_numpy(np.ascontiguousarray(arr)).to(target.dtype))
        loaded.append(name)
    missing = [name for name in state if name not in archive]
    if strict and missing:
        raise WeightArchiveError(f"archive is missing module tensor {missing[0]!r}")
    return {"loaded": loaded, "missing": missing, "unexpected": unexpected}


def module_to_archive(module) -> dict[str, np.ndarray]:
    """Snapshot a torch module's state as plain numpy arrays."""
    return {name: t.detach().cpu().numpy().copy() for name, t in module.state_dict().items()}
