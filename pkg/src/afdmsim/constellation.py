"""Gray-labeled square QAM alphabets with unit average symbol energy.

The alphabet is built on the square lattice of odd Gaussian integers and
scaled so that the mean of |a_k|^2 over the alphabet is exactly 1, which
makes Es/N0 the natural SNR definition everywhere downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SUPPORTED_ORDERS = (4, 16, 64)


@dataclass(frozen=True)
class Constellation:
    """Ordered QAM alphabet plus its Gray bit labeling.

    Attributes
    ----------
    points : np.ndarray
        Complex alphabet of size K, unit average energy. Index 0 is the
        top-right lattice point; indices advance right-to-left, then
        top-to-bottom over the lattice.
    bits_per_symbol : int
        log2(K).
    labels : np.ndarray
        (K, bits_per_symbol) array of 0/1 labels; row k labels points[k].
        First half of each label Gray-codes the imaginary axis, second
        half the real axis.
    """

    points: np.ndarray
    bits_per_symbol: int
    labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.points)

    def label_ints(self) -> np.ndarray:
        """Labels packed as integers, MSB first."""
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return self.labels @ weights


def _gray_bits(index: int, width: int) -> list[int]:
    g = index ^ (index >> 1)
    return [(g >> (width - 1 - b)) & 1 for b in range(width)]


def build_constellation(k: int) -> Constellation:
    """Build the K-ary Gray-labeled QAM alphabet, K in {4, 16, 64}.

    Points are odd-integer lattice coordinates scaled to unit average
    energy. Per axis, levels run from +max down to -max and carry a
    binary-reflected Gray code, so any two lattice neighbors differ in
    exactly one bit.
    """
    if k not in SUPPORTED_ORDERS:
        raise ConfigError(f"unsupported constellation order {k}; expected one of {SUPPORTED_ORDERS}")
    bps = int(np.log2(k))
    levels_per_axis = int(np.sqrt(k))
    axis_bits = bps // 2
    # +max first so point index 0 sits at the top-right corner.
    levels = np.arange(levels_per_axis - 1, -levels_per_axis, -2, dtype=float)

    points = np.empty(k, dtype=np.complex128)
    labels = np.empty((k, bps), dtype=np.uint8)
    for qi in range(levels_per_axis):
        for ii in range(levels_per_axis):
            idx = qi * levels_per_axis + ii
            points[idx] = levels[ii] + 1j * levels[qi]
            labels[idx] = _gray_bits(qi, axis_bits) + _gray_bits(ii, axis_bits)

    points /= np.sqrt(np.mean(np.abs(points) ** 2))
    return Constellation(points=points, bits_per_symbol=bps, labels=labels)


def map_bits(bits: np.ndarray, c: Constellation) -> np.ndarray:
    """Map a 0/1 vector to symbols; each group of bits selects the point
    whose Gray label matches."""
    bits = np.asarray(bits)
    if bits.size % c.bits_per_symbol != 0:
        raise ValueError(
            f"bit vector length {bits.size} not divisible by {c.bits_per_symbol}"
        )
    if bits.size == 0:
        return np.empty(0, dtype=np.complex128)
    groups = bits.reshape(-1, c.bits_per_symbol).astype(np.int64)
    weights = 1 << np.arange(c.bits_per_symbol - 1, -1, -1)
    label_vals = groups @ weights
    # invert the label -> index relation
    index_of_label = np.empty(c.size, dtype=np.int64)
    index_of_label[c.label_ints()] = np.arange(c.size)
    return c.points[index_of_label[label_vals]]


def demap_hard(symbols: np.ndarray, c: Constellation) -> np.ndarray:
    """Nearest-point hard decision, returning the concatenated Gray labels.

    Distance ties resolve to the lowest point index.
    """
    idx = nearest_point_index(symbols, c)
    return c.labels[idx].reshape(-1)


def nearest_point_index(symbols: np.ndarray, c: Constellation) -> np.ndarray:
    """Index of the closest constellation point per symbol (ties: lowest index)."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    d2 = np.abs(symbols.reshape(-1, 1) - c.points[None, :]) ** 2
    return d2.argmin(axis=1)
