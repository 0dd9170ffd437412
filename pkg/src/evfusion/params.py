"""Named parameter store with flat-binary checkpointing.

Checkpoint format: a flat file of little-endian float64 values plus a
JSON sidecar manifest mapping each parameter name to its shape and
element offset into the flat file. Save/load is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


class ParamStore:
    """Ordered name -> Tensor map with frozen-group bookkeeping."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.frozen_prefixes: set[str] = set()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def freeze(self, prefix: str) -> None:
        self.frozen_prefixes.add(prefix)

    def is_frozen(self, name: str) -> bool:
        return any(name.startswith(p) for p in self.frozen_prefixes)

    def trainable_items(self):
        return [(n, t) for n, t in self._params.items() if not self.is_frozen(n)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    # -- checkpointing --------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        manifest = {}
        offset = 0
        chunks = []
        for name, t in self._params.items():
            manifest[name] = {"shape": list(t.data.shape), "offset": offset}
            chunks.append(np.ascontiguousarray(t.data, dtype="<f8").reshape(-1))
            offset += t.data.size
        flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
        path.write_bytes(flat.tobytes())
        sidecar = {
            "dtype": "<f8",
            "n_values": offset,
            "frozen_prefixes": sorted(self.frozen_prefixes),
            "params": manifest,
        }
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    def load(self, path: str | Path) -> None:
        path = Path(path)
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        flat = np.frombuffer(path.read_bytes(), dtype="<f8")
        if flat.size != sidecar["n_values"]:
            raise ContractError(
                f"checkpoint {path}: expected {sidecar['n_values']} values, found {flat.size}")
        for name, meta in sidecar["params"].items():
            shape = tuple(meta["shape"])
            size = int(np.prod(shape)) if shape else 1
            block = flat[meta["offset"]:meta["offset"] + size].reshape(shape)
            if name in self._params:
                if self._params[name].data.shape != shape:
                    raise ContractError(
                        f"checkpoint {path}: shape mismatch for {name!r}")
                self._params[name].data = block.astype(np.float64).copy()
            else:
                self.add(name, block.astype(np.float64).copy())
        self.frozen_prefixes = set(sidecar.get("frozen_prefixes", []))
