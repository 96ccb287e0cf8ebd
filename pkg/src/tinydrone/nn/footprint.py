"""Flash and peak-RAM accounting for a model under its sequential schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import DType
from .graph import INPUT_ID, ModelGraph, Op
from .serialize import serialize


@dataclass(frozen=True)
class MemoryFootprint:
    flash_bytes: int
    ram_peak_bytes: int


def buffer_bytes(model: ModelGraph) -> dict[int, int]:
    """Activation buffer size per tensor id. Softmax output is always real32."""
    sizes = {}
    for tid, shape in model.tensor_shapes().items():
        sizes[tid] = int(np.prod(shape)) * model.dtype.itemsize
    for layer in model.layers:
        if layer.op is Op.SOFTMAX:
            sizes[layer.output] = int(np.prod(layer.out_shape)) * DType.REAL32.itemsize
    return sizes


def arena_profile(model: ModelGraph) -> list[int]:
    """Live activation bytes while each layer executes.

    A buffer is allocated when its producer runs and released after its last
    consumer (a buffer nobody reads lives only during its producing step).
    The model input is live from the start.
    """
    sizes = buffer_bytes(model)
    last_use = {INPUT_ID: 0}
    for i, layer in enumerate(model.layers):
        last_use[layer.output] = i
        for t in layer.inputs:
            last_use[t] = i
    releases: dict[int, list[int]] = {}
    for t, i in last_use.items():
        releases.setdefault(i, []).append(t)

    live = sizes[INPUT_ID]
    profile = []
    for i, layer in enumerate(model.layers):
        live += sizes[layer.output]
        profile.append(live)
        for t in releases.get(i, ()):
            live -= sizes[t]
    return profile


def ram_peak(model: ModelGraph) -> int:
    profile = arena_profile(model)
    return max(profile) if profile else 0


def memory_footprint(model: ModelGraph) -> MemoryFootprint:
    return MemoryFootprint(len(serialize(model)), ram_peak(model))
