"""Discrete affine Fourier transform pair and chirp-periodic prefix handling.

The unitary operator A is the DFT sandwiched between two quadratic-phase
diagonals, A = diag(e^{-j2*pi*c2*m^2}) . F . diag(e^{-j2*pi*c1*n^2}), with
[F]_{n,m} = e^{-j2*pi*n*m/N} / sqrt(N). Transmission applies the adjoint,
reception applies A itself. The dense matrix is the reference path; a
chirp-FFT-chirp fast path is provided and validated against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AfdmParams:
    """Frame geometry and chirp rates.

    n : frame length in symbols (>= 2)
    c1, c2 : first/second chirp rates (dimensionless)
    l_cpp : chirp-periodic prefix length in samples, 0 <= l_cpp <= n
    """

    n: int
    c1: float
    c2: float
    l_cpp: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"frame length must be >= 2, got {self.n}")
        if not 0 <= self.l_cpp <= self.n:
            raise ValueError(f"prefix length must lie in [0, {self.n}], got {self.l_cpp}")


def default_chirp_rates(n: int, max_doppler: int) -> tuple[float, float]:
    """Full-diversity default: c1 = (2*nu_max + 1) / (2N), c2 = 0.

    With N even this makes 2*N*c1 an odd integer, so the prefix degenerates
    to a plain cyclic prefix and integer-Doppler paths stay one-tap in the
    transform domain.
    """
    return (2 * max_doppler + 1) / (2 * n), 0.0


def _chirps(params: AfdmParams) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(params.n)
    lam1 = np.exp(-2j * np.pi * params.c1 * idx.astype(float) ** 2)
    lam2 = np.exp(-2j * np.pi * params.c2 * idx.astype(float) ** 2)
    return lam1, lam2


@dataclass(frozen=True)
class DaftOperator:
    """Dense transform matrix with its adjoint cached."""

    params: AfdmParams
    a: np.ndarray
    a_h: np.ndarray

    @property
    def n(self) -> int:
        return self.params.n


def build_daft(params: AfdmParams) -> DaftOperator:
    """Compose A = Lambda_c2 . F . Lambda_c1 as a dense unitary matrix."""
    n = params.n
    idx = np.arange(n)
    f = np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)
    lam1, lam2 = _chirps(params)
    a = lam2[:, None] * f * lam1[None, :]
    return DaftOperator(params=params, a=a, a_h=a.conj().T)


def modulate(x: np.ndarray, op: DaftOperator) -> np.ndarray:
    """Information symbols -> time-domain samples, s = A^H x."""
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != (op.n,):
        raise ValueError(f"expected vector of length {op.n}, got shape {x.shape}")
    return op.a_h @ x


def demodulate(r: np.ndarray, op: DaftOperator) -> np.ndarray:
    """Time-domain samples (prefix already removed) -> transform domain, y = A r."""
    r = np.asarray(r, dtype=np.complex128)
    if r.shape != (op.n,):
        raise ValueError(f"expected vector of length {op.n}, got shape {r.shape}")
    return op.a @ r


def modulate_fast(x: np.ndarray, params: AfdmParams) -> np.ndarray:
    """O(N log N) chirp-IFFT-chirp evaluation of A^H x."""
    x = np.asarray(x, dtype=np.complex128)
    lam1, lam2 = _chirps(params)
    return lam1.conj() * (np.fft.ifft(lam2.conj() * x) * np.sqrt(params.n))


def demodulate_fast(r: np.ndarray, params: AfdmParams) -> np.ndarray:
    """O(N log N) chirp-FFT-chirp evaluation of A r."""
    r = np.asarray(r, dtype=np.complex128)
    lam1, lam2 = _chirps(params)
    return lam2 * (np.fft.fft(lam1 * r) / np.sqrt(params.n))


def cpp_phase_factors(params: AfdmParams) -> np.ndarray:
    """Phase factors applied to the wrapped tail samples, one per prefix sample.

    Entry i corresponds to prefix position n = i - l_cpp (n = -l_cpp .. -1):
    e^{j*2*pi*c1*(N^2 + 2*N*n)}. All equal 1 exactly when 2*N*c1 is an
    integer and N is even (plain cyclic prefix).
    """
    n = params.n
    offsets = np.arange(-params.l_cpp, 0, dtype=float)
    return np.exp(2j * np.pi * params.c1 * (n * n + 2 * n * offsets))


def append_cpp(s: np.ndarray, params: AfdmParams) -> np.ndarray:
    """Prepend the chirp-periodic prefix: the last l_cpp samples, phase rotated."""
    s = np.asarray(s, dtype=np.complex128)
    if s.shape != (params.n,):
        raise ValueError(f"expected vector of length {params.n}, got shape {s.shape}")
    l = params.l_cpp
    if l == 0:
        return s.copy()
    prefix = s[params.n - l:] * cpp_phase_factors(params)
    return np.concatenate([prefix, s])
