"""Versioned binary container for trained models (magic "SHM3").

Layout, all little-endian:

    magic "SHM3" | u32 version | u32 flags (bit 0: suprasegmental section)
    acoustic chain block
    [suprasegmental section: u32 n_groups, per group u32 size + u32 indices,
     then the prosodic chain block]

chain block:
    u32 order | u32 n_states | u32 dim | u32 n_mix
    mask (n_states^2 u8, row-major)
    psi1 (n_states f64)
    startup2 (n_states^2 f64, order >= 2)
    startup3 (n_states^3 f64, order >= 3)
    transitions (n_states^(order+1) f64)
    weights (n_states*n_mix f64) | means | variances (n_states*n_mix*dim f64)

Round-trips are bit-exact: parameters are stored as raw f64.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .hmm import EmissionModel, HmmModel, InitialLaws, TopologyMask, TransitionTensor
from .suprasegmental import SuprasegmentalModel, SuprasegmentalTopology

MODEL_MAGIC = b"SHM3"
FORMAT_VERSION = 1


def _pack_array(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def _chain_bytes(model: HmmModel) -> bytes:
    n = model.n_states
    parts = [
        struct.pack(
            "<IIII", model.order, n, model.feature_dim, model.emissions.n_mixtures
        ),
        model.topology.allowed.astype(np.uint8).tobytes(order="C"),
        _pack_array(model.initials.psi1),
    ]
    if model.order >= 2:
        parts.append(_pack_array(model.initials.startup2))
    if model.order >= 3:
        parts.append(_pack_array(model.initials.startup3))
    parts.append(_pack_array(model.transitions.values))
    parts.append(_pack_array(model.emissions.weights))
    parts.append(_pack_array(model.emissions.means))
    parts.append(_pack_array(model.emissions.variances))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise InvalidInputError("model file truncated")
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def _read_chain(reader: _Reader) -> HmmModel:
    order = reader.u32()
    n = reader.u32()
    dim = reader.u32()
    n_mix = reader.u32()
    mask = TopologyMask(
        np.frombuffer(reader.take(n * n), dtype=np.uint8).reshape(n, n).astype(bool)
    )
    psi = reader.f64(n)
    startup2 = reader.f64(n * n).reshape(n, n) if order >= 2 else None
    startup3 = reader.f64(n ** 3).reshape(n, n, n) if order >= 3 else None
    transitions = reader.f64(n ** (order + 1)).reshape((n,) * (order + 1))
    weights = reader.f64(n * n_mix).reshape(n, n_mix)
    means = reader.f64(n * n_mix * dim).reshape(n, n_mix, dim)
    variances = reader.f64(n * n_mix * dim).reshape(n, n_mix, dim)
    return HmmModel(
        order,
        mask,
        InitialLaws(psi, startup2, startup3),
        TransitionTensor(order, transitions),
        EmissionModel(weights, means, variances),
    )


def save_model(
    path: str | Path, model: HmmModel, supra: SuprasegmentalModel | None = None
) -> None:
    flags = 1 if supra is not None else 0
    parts = [MODEL_MAGIC, struct.pack("<II", FORMAT_VERSION, flags), _chain_bytes(model)]
    if supra is not None:
        groups = supra.topology.groups
        parts.append(struct.pack("<I", len(groups)))
        for group in groups:
            parts.append(struct.pack("<I", len(group)))
            parts.append(struct.pack(f"<{len(group)}I", *group))
        parts.append(_chain_bytes(supra.chain))
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> tuple[HmmModel, SuprasegmentalModel | None]:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise InvalidInputError(f"{path}: bad magic, not a model file")
    reader = _Reader(data, 4)
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported format version {version}")
    flags = reader.u32()
    model = _read_chain(reader)
    supra = None
    if flags & 1:
        n_groups = reader.u32()
        groups = []
        for _ in range(n_groups):
            size = reader.u32()
            groups.append(tuple(struct.unpack(f"<{size}I", reader.take(4 * size))))
        chain = _read_chain(reader)
        supra = SuprasegmentalModel(SuprasegmentalTopology(tuple(groups)), chain)
    if reader.offset != len(data):
        raise InvalidInputError(f"{path}: trailing bytes after model payload")
    return model, supra
