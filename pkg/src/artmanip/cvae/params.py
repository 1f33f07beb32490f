"""Flat parameter vector with named layer ranges and checkpointing."""

from __future__ import annotations

import json

import numpy as np

from ..errors import InvalidArgumentError
from .config import FORMAT, VERSION, NetworkConfig


class ParamStore:
    """All model parameters in one float64 vector.

    Layers own named contiguous ranges; `view` returns a writable
    reshaped window into the flat vector (or into any same-length
    vector, which is how gradient buffers reuse the layout).
    """

    def __init__(self):
        self._ranges: dict[str, tuple[int, tuple[int, ...]]] = {}
        self._size = 0
        self.values: np.ndarray = np.zeros(0)

    def declare(self, name: str, shape: tuple[int, ...]) -> None:
        if self.values.size:
            raise InvalidArgumentError("cannot declare after allocation")
        if name in self._ranges:
            raise InvalidArgumentError(f"duplicate parameter name {name!r}")
        self._ranges[name] = (self._size, tuple(shape))
        self._size += int(np.prod(shape))

    def allocate(self) -> None:
        self.values = np.zeros(self._size)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._ranges)

    def __len__(self) -> int:
        return self._size

    def shape(self, name: str) -> tuple[int, ...]:
        return self._ranges[name][1]

    def view(self, name: str, flat: np.ndarray | None = None) -> np.ndarray:
        offset, shape = self._ranges[name]
        arr = self.values if flat is None else flat
        return arr[offset:offset + int(np.prod(shape))].reshape(shape)

    def zeros_like(self) -> np.ndarray:
        return np.zeros(self._size)

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            bad = [n for n in self._ranges
                   if not np.all(np.isfinite(self.view(n)))]
            raise FloatingPointError(f"non-finite parameters in layers {bad}")

    def clone(self) -> "ParamStore":
        other = ParamStore()
        other._ranges = dict(self._ranges)
        other._size = self._size
        other.values = self.values.copy()
        return other


def init_params(store: ParamStore, seed: int) -> None:
    """Xavier-uniform weights, zero biases; `head` layers start at zero
    so the untrained posterior is exactly the standard normal."""
    rng = np.random.default_rng(seed)
    for name in store.names:
        arr = store.view(name)
        if name.endswith("/W") and "head" not in name:
            fan_in, fan_out = arr.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arr[...] = rng.uniform(-bound, bound, arr.shape)
        else:
            arr[...] = 0.0


def save_params(store: ParamStore, config: NetworkConfig, prefix: str) -> None:
    """Write `<prefix>.bin` (raw float64) and `<prefix>.json` (manifest)."""
    store.values.astype("<f8").tofile(prefix + ".bin")
    manifest = {"format": FORMAT, "version": VERSION,
                "config": config.to_json(),
                "size": len(store),
                "layers": {n: {"offset": store._ranges[n][0],
                               "shape": list(store._ranges[n][1])}
                           for n in store.names}}
    with open(prefix + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_params(prefix: str) -> tuple[ParamStore, NetworkConfig]:
    with open(prefix + ".json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise InvalidArgumentError("unrecognized checkpoint format")
    config = NetworkConfig.from_json(manifest["config"])
    store = ParamStore()
    for name, info in manifest["layers"].items():
        store.declare(name, tuple(info["shape"]))
    store.allocate()
    values = np.fromfile(prefix + ".bin", dtype="<f8")
    if values.size != len(store) or manifest["size"] != len(store):
        raise InvalidArgumentError("checkpoint size does not match its manifest")
    store.values[...] = values
    return store, config
