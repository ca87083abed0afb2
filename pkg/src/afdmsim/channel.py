"""Doubly-dispersive channel synthesis and the transform-domain effective channel.

Two independent signal paths are kept deliberately separate so one can
oracle-check the other: `apply_channel_time` evaluates the tapped-delay-line
convolution sample by sample on the prefixed stream, while
`build_time_matrix` assembles the equivalent N x N circular matrix from
permutation, Doppler, and prefix-compensation factors. Both use the same
phase conventions: Doppler rotation e^{+j*2*pi*nu*n/N} and prefix phase
e^{+j*2*pi*c1*(N^2 + 2*N*(n - l))} for samples that wrap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .afdm import AfdmParams, DaftOperator

DEFAULT_SPARSITY_THRESHOLD = 1e-8


@dataclass(frozen=True)
class ChannelPath:
    """One propagation path: complex gain, integer delay in samples,
    Doppler shift normalized to 1/N units."""

    gain: complex
    delay: int
    doppler: float

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError(f"path delay must be >= 0, got {self.delay}")


@dataclass(frozen=True)
class ChannelProfile:
    """Statistics a realization is drawn from.

    power_profile holds per-path average powers and must sum to 1; None
    means equal power 1/P per path.
    """

    num_paths: int
    max_delay: int
    max_doppler: int
    power_profile: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("profile needs at least one path")
        if self.max_delay < 0 or self.max_doppler < 0:
            raise ValueError("max_delay and max_doppler must be >= 0")
        if self.num_paths - 1 > self.max_delay:
            raise ValueError(
                f"cannot place {self.num_paths} distinct delays in 0..{self.max_delay}"
            )
        if self.power_profile is not None:
            p = np.asarray(self.power_profile, dtype=float)
            if len(p) != self.num_paths:
                raise ValueError("power_profile length must equal num_paths")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("power_profile entries must be >= 0 and sum to 1")

    def powers(self) -> np.ndarray:
        if self.power_profile is None:
            return np.full(self.num_paths, 1.0 / self.num_paths)
        return np.asarray(self.power_profile, dtype=float)


@dataclass(frozen=True)
class ChannelRealization:
    """A drawn set of paths; delays are distinct and path 0 has delay 0."""

    paths: tuple[ChannelPath, ...]

    def __post_init__(self):
        delays = [p.delay for p in self.paths]
        if len(set(delays)) != len(delays):
            raise ValueError("path delays must be distinct")
        if self.paths[0].delay != 0:
            raise ValueError("first path must sit at delay 0")

    @property
    def max_delay(self) -> int:
        return max(p.delay for p in self.paths)


def sample_realization(profile: ChannelProfile, rng: np.random.Generator) -> ChannelRealization:
    """Draw Rayleigh path gains, distinct delays, and integer Dopplers.

    Draw order is fixed (gains, then delays, then Dopplers) so a given
    generator state always produces the same realization. Gains are
    circularly-symmetric complex Gaussian with variance power_profile[i];
    delay 0 is pinned to the first path, the rest are drawn uniformly
    without replacement from 1..max_delay; Dopplers are uniform over
    -max_doppler..+max_doppler.
    """
    p = profile.powers()
    gains = (rng.standard_normal(profile.num_paths) + 1j * rng.standard_normal(profile.num_paths)) \
        * np.sqrt(p / 2.0)
    delays = np.zeros(profile.num_paths, dtype=int)
    if profile.num_paths > 1:
        delays[1:] = rng.choice(
            np.arange(1, profile.max_delay + 1), size=profile.num_paths - 1, replace=False
        )
    dopplers = rng.integers(-profile.max_doppler, profile.max_doppler + 1, size=profile.num_paths)
    return ChannelRealization(
        paths=tuple(
            ChannelPath(gain=complex(g), delay=int(l), doppler=float(v))
            for g, l, v in zip(gains, delays, dopplers)
        )
    )


def build_time_matrix(real: ChannelRealization, params: AfdmParams) -> np.ndarray:
    """Assemble the N x N time-domain matrix acting on the unprefixed frame.

    Each path contributes gain * Gamma * Delta * Pi^delay, where Pi is the
    cyclic shift, Delta[n] = e^{+j*2*pi*nu*n/N} the Doppler rotation, and
    Gamma compensates rows n < delay for the prefix phase so the circular
    model matches what the prefixed stream actually carries.
    """
    n = params.n
    if real.max_delay > params.l_cpp:
        raise ValueError(
            f"max path delay {real.max_delay} exceeds prefix length {params.l_cpp}"
        )
    rows = np.arange(n)
    h = np.zeros((n, n), dtype=np.complex128)
    for path in real.paths:
        delta = np.exp(2j * np.pi * path.doppler * rows / n)
        gamma = np.ones(n, dtype=np.complex128)
        if path.delay > 0:
            wrapped = rows[: path.delay]
            gamma[: path.delay] = np.exp(
                2j * np.pi * params.c1 * (n * n + 2.0 * n * (wrapped - path.delay))
            )
        h[rows, (rows - path.delay) % n] += path.gain * gamma * delta
    return h


def apply_channel_time(
    s_cpp: np.ndarray,
    real: ChannelRealization,
    params: AfdmParams,
    n0: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Sample-level tapped-delay-line oracle on the prefixed stream.

    r_n = sum_i h_i e^{+j*2*pi*nu_i*n/N} s_{n-l_i} + w_n for n = 0..N-1,
    with s indexed on the prefixed stream so delayed taps reach into the
    prefix; the prefix positions themselves are discarded from the output.
    w ~ CN(0, n0) when n0 > 0 (requires rng).
    """
    n, l = params.n, params.l_cpp
    s_cpp = np.asarray(s_cpp, dtype=np.complex128)
    if s_cpp.shape != (n + l,):
        raise ValueError(f"expected prefixed stream of length {n + l}, got {s_cpp.shape}")
    if real.max_delay > l:
        raise ValueError(f"max path delay {real.max_delay} exceeds prefix length {l}")
    t = np.arange(n)
    r = np.zeros(n, dtype=np.complex128)
    for path in real.paths:
        start = l - path.delay
        r += path.gain * np.exp(2j * np.pi * path.doppler * t / n) * s_cpp[start:start + n]
    if n0 > 0:
        if rng is None:
            raise ValueError("noise requested (n0 > 0) but no generator supplied")
        r += (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(n0 / 2.0)
    return r


@dataclass
class EffectiveChannel:
    """Transform-domain channel A H A^H with per-column sparse views.

    columns[n] is a (row_indices, values) pair keeping entries whose
    magnitude exceeds threshold * max|column|; col_norms_sq[n] is the
    squared 2-norm of the dense column.
    """

    dense: np.ndarray
    columns: list[tuple[np.ndarray, np.ndarray]]
    col_norms_sq: np.ndarray
    threshold: float
    _rows: list[tuple[np.ndarray, np.ndarray]] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.dense.shape[0]

    def rows(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Row-wise view of the column sparsity pattern (built on first use)."""
        if self._rows is None:
            per_row_cols: list[list[int]] = [[] for _ in range(self.n)]
            per_row_vals: list[list[complex]] = [[] for _ in range(self.n)]
            for col, (ridx, vals) in enumerate(self.columns):
                for r, v in zip(ridx, vals):
                    per_row_cols[r].append(col)
                    per_row_vals[r].append(v)
            self._rows = [
                (np.asarray(ci, dtype=np.int64), np.asarray(vi, dtype=np.complex128))
                for ci, vi in zip(per_row_cols, per_row_vals)
            ]
        return self._rows


def effective_channel(
    h_time: np.ndarray,
    op: DaftOperator,
    threshold: float = DEFAULT_SPARSITY_THRESHOLD,
) -> EffectiveChannel:
    """Form A H A^H and cache thresholded sparse columns and column norms."""
    h_time = np.asarray(h_time, dtype=np.complex128)
    if h_time.shape != (op.n, op.n):
        raise ValueError(f"expected {op.n} x {op.n} matrix, got {h_time.shape}")
    dense = op.a @ h_time @ op.a_h
    mags = np.abs(dense)
    columns = []
    for col in range(op.n):
        cutoff = threshold * mags[:, col].max()
        keep = np.nonzero(mags[:, col] > cutoff)[0]
        columns.append((keep, dense[keep, col].copy()))
    col_norms_sq = np.sum(mags ** 2, axis=0)
    return EffectiveChannel(
        dense=dense, columns=columns, col_norms_sq=col_norms_sq, threshold=threshold
    )
