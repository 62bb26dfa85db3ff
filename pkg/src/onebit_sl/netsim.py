"""Multihop amplify-and-forward uplink ending in one-bit ADCs.

K single-antenna sources talk to a data center with N_r antennas through
``hops - 1`` layers of L single-antenna AF relays. Every local channel is
flat Rayleigh and fixed for one coherence block; receiver noise is redrawn
on every transmission. The data center keeps only the signs of the real and
imaginary parts of its N_r samples, stacked as ``[Re; Im]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidMessageError",
    "SystemConfig",
    "ConstellationSet",
    "ChannelRealization",
    "qpsk",
    "make_constellation",
    "modulate",
    "class_encode",
    "class_decode",
    "message_table",
    "draw_channel",
    "transmit",
    "one_bit",
]


class InvalidMessageError(ValueError):
    """Message symbol or class index outside its alphabet."""


@dataclass(frozen=True)
class SystemConfig:
    K: int
    N_r: int
    L: int
    hops: int = 2
    m: int = 4
    P_t: float = 1.0
    snr_db: float = 10.0

    def __post_init__(self):
        for name in ("K", "N_r", "L", "hops", "m"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.N_r < self.K:
            raise ValueError(f"N_r ({self.N_r}) must be >= K ({self.K})")
        if not self.P_t > 0:
            raise ValueError(f"P_t must be positive, got {self.P_t!r}")
        if math.isnan(self.snr_db):
            raise ValueError("snr_db is NaN")

    @property
    def N(self) -> int:
        return 2 * self.N_r

    @property
    def num_classes(self) -> int:
        return self.m**self.K

    @property
    def noise_var(self) -> float:
        """sigma_z^2 = P_t / SNR; zero when snr_db is +inf."""
        if math.isinf(self.snr_db) and self.snr_db > 0:
            return 0.0
        return self.P_t / 10.0 ** (self.snr_db / 10.0)

    @property
    def noise_std(self) -> float:
        return math.sqrt(self.noise_var)


@dataclass(frozen=True)
class ConstellationSet:
    symbols: np.ndarray

    @property
    def m(self) -> int:
        return len(self.symbols)

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.symbols) ** 2))


def qpsk(P_t: float = 1.0) -> ConstellationSet:
    """Gray-labelled QPSK: bit 0 picks the real sign, bit 1 the imaginary sign."""
    pts = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / math.sqrt(2.0)
    return ConstellationSet(pts * math.sqrt(P_t))


def make_constellation(m: int, P_t: float = 1.0) -> ConstellationSet:
    """Unit-power constellation scaled to ``P_t``.

    m=4 gives the square Gray QPSK of :func:`qpsk`. Other powers of two
    give Gray-labelled m-PSK, so that symbol index bits stay the
    transmitted bits and neighbouring points differ in one bit.
    """
    if m == 4:
        return qpsk(P_t)
    if m < 2 or m & (m - 1):
        raise ValueError(f"constellation order must be a power of two >= 2, got {m}")
    gray = np.arange(m) ^ (np.arange(m) >> 1)
    symbols = np.empty(m, dtype=complex)
    # the label gray[p] sits at phase position p
    symbols[gray] = np.exp(2j * np.pi * np.arange(m) / m)
    if m == 2:
        symbols = symbols.real.astype(complex)
    return ConstellationSet(symbols * math.sqrt(P_t))


def modulate(w_k, constellation: ConstellationSet):
    """Map message symbol(s) to constellation points."""
    w = np.asarray(w_k)
    if w.dtype.kind not in "iu" or np.any(w < 0) or np.any(w >= constellation.m):
        raise InvalidMessageError(f"message symbol out of range 0..{constellation.m - 1}: {w_k!r}")
    out = constellation.symbols[w]
    return out.item() if out.ndim == 0 else out


def class_encode(w, m: int):
    """Base-m positional code, first source most significant.

    Accepts one message vector of length K or an array of shape (B, K).
    """
    w = np.asarray(w)
    if w.dtype.kind not in "iu" or np.any(w < 0) or np.any(w >= m):
        raise InvalidMessageError(f"message entries must lie in 0..{m - 1}")
    K = w.shape[-1]
    place = m ** np.arange(K - 1, -1, -1, dtype=np.int64)
    c = w.astype(np.int64) @ place
    return int(c) if np.ndim(c) == 0 else c


def class_decode(c, K: int, m: int):
    """Inverse of :func:`class_encode`; scalar in, tuple out, array in, (B, K) out."""
    arr = np.asarray(c)
    if arr.dtype.kind not in "iu" or np.any(arr < 0) or np.any(arr >= m**K):
        raise InvalidMessageError(f"class index out of range 0..{m**K - 1}: {c!r}")
    place = m ** np.arange(K - 1, -1, -1, dtype=np.int64)
    w = (arr.astype(np.int64)[..., None] // place) % m
    if arr.ndim == 0:
        return tuple(int(x) for x in w)
    return w


def message_table(K: int, m: int) -> np.ndarray:
    """All m^K message vectors in class-index order, shape (m^K, K)."""
    return class_decode(np.arange(m**K), K, m)


@dataclass(frozen=True)
class ChannelRealization:
    """One coherence block of the relay network.

    ``hop_matrices[h]`` maps stage h to stage h+1 (sources, relay layers,
    data center). ``af_gains[h]`` holds the gains of the relay layer fed by
    ``hop_matrices[h]``; there is one layer fewer than hops.
    """

    hop_matrices: tuple
    af_gains: tuple
    noise_std: float
    constellation: ConstellationSet = field(repr=False)

    def __post_init__(self):
        mats = self.hop_matrices
        if len(self.af_gains) != len(mats) - 1:
            raise ValueError("need exactly one AF gain vector per relay layer")
        for a, b in zip(mats, mats[1:]):
            if a.shape[0] != b.shape[1]:
                raise ValueError(f"hop dimensions do not chain: {a.shape} then {b.shape}")
        for H, g in zip(mats, self.af_gains):
            if g.shape != (H.shape[0],) or np.any(g <= 0):
                raise ValueError("AF gains must be positive, one per relay")

    @property
    def K(self) -> int:
        return self.hop_matrices[0].shape[1]

    @property
    def N_r(self) -> int:
        return self.hop_matrices[-1].shape[0]


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def draw_channel(config: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    """Draw all Rayleigh hop matrices and fix the AF gains for one block.

    Each relay is normalised to P_t given its realised incoming
    coefficients h: beta = sqrt(P_t / (sum|h|^2 * P_t + sigma_z^2)), since
    every upstream node (source or relay) transmits at power P_t.
    """
    dims = [config.K] + [config.L] * (config.hops - 1) + [config.N_r]
    mats = tuple(_crandn(rng, (dims[i + 1], dims[i])) for i in range(config.hops))
    var = config.noise_var
    gains = tuple(
        np.sqrt(config.P_t / (np.sum(np.abs(H) ** 2, axis=1) * config.P_t + var)) for H in mats[:-1]
    )
    return ChannelRealization(mats, gains, math.sqrt(var), make_constellation(config.m, config.P_t))


def one_bit(u: np.ndarray) -> np.ndarray:
    """sign quantiser with sign(u) = +1 for u >= 0 (negative zero included)."""
    return np.where(u >= 0, 1, -1).astype(np.int8)


def transmit(channel: ChannelRealization, w, rng: np.random.Generator) -> np.ndarray:
    """Send message vector(s) through the network and quantise.

    ``w`` is a length-K message vector or a (B, K) batch. Returns int8
    observations of length 2*N_r (or shape (B, 2*N_r)).
    """
    w = np.asarray(w)
    single = w.ndim == 1
    if w.ndim not in (1, 2) or w.shape[-1] != channel.K:
        raise ValueError(f"message shape {w.shape} does not match K={channel.K}")
    x = np.atleast_2d(modulate(w, channel.constellation)).T  # (K, B)
    sigma = channel.noise_std
    B = x.shape[1]
    for i, H in enumerate(channel.hop_matrices):
        x = H @ x
        if sigma > 0:
            x = x + sigma * _crandn(rng, x.shape)
        if i < len(channel.af_gains):
            x = channel.af_gains[i][:, None] * x
    y = np.concatenate([x.real, x.imag], axis=0).T  # (B, N)
    r = one_bit(y)
    return r[0] if single and B == 1 else r
