"""Single-file checkpoint container.

Layout: a text header (format/version line, `key=value` config lines, one
`array <name> <d0,d1,...>` line per tensor, `end-header`), followed by the
raw little-endian float32 payloads in directory order.
"""

from __future__ import annotations

import numpy as np
import torch

MAGIC = "SEKD-CKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    header = [f"{MAGIC} format_version={FORMAT_VERSION}"]
    for key in sorted(config):
        header.append(f"{key}={config[key]}")
    names = list(arrays)
    for name in names:
        dims = ",".join(str(d) for d in arrays[name].shape) or "scalar"
        header.append(f"array {name} {dims}")
    header.append("end-header\n")
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode())
        for name in names:
            fh.write(
                np.ascontiguousarray(arrays[name], dtype="<f4").tobytes()
            )


def load_checkpoint(path):
    """Returns (config dict, arrays dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.index(b"end-header\n")
    header = raw[:end].decode().splitlines()
    payload = raw[end + len(b"end-header\n"):]
    first = header[0].split()
    if first[0] != MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    config: dict[str, str] = {}
    directory: list[tuple[str, tuple[int, ...]]] = []
    for line in header[1:]:
        if line.startswith("array "):
            _, name, dims = line.split(" ", 2)
            shape = () if dims == "scalar" else tuple(int(d) for d in dims.split(","))
            directory.append((name, shape))
        elif line:
            key, _, value = line.partition("=")
            config[key] = value
    arrays = {}
    offset = 0
    for name, shape in directory:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arrays[name] = arr.reshape(shape).copy()
        offset += count * 4
    return config, arrays


def state_dict_to_arrays(module: torch.nn.Module, prefix: str = "") -> dict:
    return {
        prefix + k: v.detach().cpu().numpy().astype(np.float32)
        for k, v in module.state_dict().items()
    }


def load_arrays_into(module: torch.nn.Module, arrays: dict, prefix: str = "") -> None:
    """Load arrays into a module, validating every expected name and shape."""
    state = module.state_dict()
    tensors = {}
    for name, ref in state.items():
        key = prefix + name
        if key not in arrays:
            raise ValueError(f"checkpoint is missing array {key!r}")
        arr = arrays[key]
        if tuple(arr.shape) != tuple(ref.shape):
            raise ValueError(
                f"checkpoint array {key!r} has shape {tuple(arr.shape)}, "
                f"expected {tuple(ref.shape)}"
            )
        tensors[name] = torch.as_tensor(arr, dtype=ref.dtype)
    module.load_state_dict(tensors)
