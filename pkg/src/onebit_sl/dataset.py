"""Training phase: T labelled pilot observations per class.

Binary dump layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"OBSD"
    4       1     format version (1)
    5       3     reserved, zero
    8       4     K      (uint32)
    12      4     m      (uint32)
    16      4     N_r    (uint32)
    20      4     T      (uint32)
    24      8     seed   (uint64)
    32      ...   sign bits, class-major then pilot then coordinate,
                  1 for +1 and 0 for -1, packed MSB-first, last byte
                  zero-padded

The payload is ceil(m^K * T * 2 * N_r / 8) bytes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netsim import ChannelRealization, SystemConfig, message_table, transmit

__all__ = ["LabelledDataset", "collect_training", "dump_dataset", "load_dataset"]

_MAGIC = b"OBSD"
_HEADER = struct.Struct("<4sB3xIIIIQ")


@dataclass(frozen=True)
class LabelledDataset:
    """``observations[c, t]`` is the t-th pilot observation of class c."""

    observations: np.ndarray  # (m^K, T, N) int8
    K: int
    m: int
    seed: int = 0

    def __post_init__(self):
        obs = self.observations
        if obs.ndim != 3:
            raise ValueError(f"observations must be (classes, T, N), got shape {obs.shape}")
        if obs.shape[0] != self.m**self.K:
            raise ValueError(f"expected {self.m**self.K} classes, got {obs.shape[0]}")
        if obs.shape[1] < 1 or obs.shape[2] % 2:
            raise ValueError("need T >= 1 and an even observation length")
        if not np.all(np.abs(obs) == 1):
            raise ValueError("observations must be +-1")

    @property
    def T(self) -> int:
        return self.observations.shape[1]

    @property
    def N(self) -> int:
        return self.observations.shape[2]

    @property
    def N_r(self) -> int:
        return self.N // 2

    @property
    def num_classes(self) -> int:
        return self.observations.shape[0]

    def flat(self):
        """(points, labels): all T*m^K observations in (class, pilot) order."""
        C, T, N = self.observations.shape
        return self.observations.reshape(C * T, N), np.repeat(np.arange(C), T)


def collect_training(
    channel: ChannelRealization,
    config: SystemConfig,
    T: int,
    rng: np.random.Generator,
    seed: int = 0,
) -> LabelledDataset:
    """Transmit T pilots for every class over a fixed channel, class-major."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    msgs = np.repeat(message_table(config.K, config.m), T, axis=0)
    obs = transmit(channel, msgs, rng).reshape(config.num_classes, T, 2 * config.N_r)
    return LabelledDataset(obs, config.K, config.m, seed)


def dump_dataset(dataset: LabelledDataset, path) -> None:
    path = Path(path)
    header = _HEADER.pack(_MAGIC, 1, dataset.K, dataset.m, dataset.N_r, dataset.T, dataset.seed)
    bits = np.packbits(dataset.observations.reshape(-1) > 0, bitorder="big")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bits.tobytes())


def load_dataset(path) -> LabelledDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, K, m, N_r, T, seed = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError(f"{path}: not a version-1 dataset dump")
    count = m**K * T * 2 * N_r
    payload = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    if payload.size != (count + 7) // 8:
        raise ValueError(f"{path}: expected {(count + 7) // 8} payload bytes, found {payload.size}")
    bits = np.unpackbits(payload, count=count, bitorder="big")
    obs = (2 * bits.astype(np.int8) - 1).reshape(m**K, T, 2 * N_r)
    return LabelledDataset(obs, K, m, seed)
