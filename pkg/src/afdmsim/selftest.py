"""Fast invariant suite behind the `selftest` CLI command.

Each check is small enough that the whole suite finishes well under a
minute; together they cover the unitary transform, the modulation round
trip, prefix degeneration, agreement of the matrix channel with the
sample-level convolution, transform-domain sparsity, and agreement of the
variational detector's scalar-observation pipeline with the exhaustive
search oracle.
"""

from __future__ import annotations

import time

import numpy as np

from . import detectors as _det
from .afdm import AfdmParams, append_cpp, build_daft, cpp_phase_factors, default_chirp_rates, demodulate, modulate
from .channel import ChannelProfile, apply_channel_time, build_time_matrix, effective_channel, sample_realization
from .constellation import build_constellation, map_bits
from .detectors import DetectorConfig, map_detect, vb_detect
from .errors import ConfigError

FAULT_NAMES = ("negate-scalar-observation",)


def _check_daft_unitarity() -> dict:
    rng = np.random.default_rng(101)
    worst = {"err": 0.0}
    for n in (8, 64):
        for trial in range(4):
            c1, c2 = rng.uniform(0, 1, 2)
            op = build_daft(AfdmParams(n, c1, c2))
            err = float(np.abs(op.a_h @ op.a - np.eye(n)).max())
            if err > worst["err"]:
                worst = {"err": err, "n": n, "c1": c1, "c2": c2}
    return {"passed": worst["err"] < 1e-10, "seed": 101, **worst}


def _check_modulate_roundtrip() -> dict:
    rng = np.random.default_rng(102)
    worst = {"err": 0.0}
    for n in (8, 64):
        c1, c2 = rng.uniform(0, 1, 2)
        op = build_daft(AfdmParams(n, c1, c2))
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        err = float(np.linalg.norm(demodulate(modulate(x, op), op) - x) / np.linalg.norm(x))
        if err > worst["err"]:
            worst = {"err": err, "n": n, "c1": c1, "c2": c2}
    return {"passed": worst["err"] < 1e-9, "seed": 102, **worst}


def _check_cpp_degeneration() -> dict:
    n, nu_max = 16, 2
    c1, _ = default_chirp_rates(n, nu_max)
    params = AfdmParams(n, c1, 0.0, l_cpp=5)
    dev = float(np.abs(cpp_phase_factors(params) - 1.0).max())
    return {"passed": dev < 1e-12, "n": n, "c1": c1, "max_phase_dev": dev}


def _check_channel_oracle() -> dict:
    rng = np.random.default_rng(103)
    worst = {"err": 0.0}
    for trial in range(10):
        n = int(rng.choice([8, 16, 32]))
        paths = int(rng.choice([1, 3, 5]))
        if trial % 2:
            c1, c2 = rng.uniform(0, 1, 2)
        else:
            c1, c2 = default_chirp_rates(n, 2)
        l_cpp = n // 2
        params = AfdmParams(n, c1, c2, l_cpp=l_cpp)
        profile = ChannelProfile(num_paths=paths, max_delay=l_cpp, max_doppler=2)
        real = sample_realization(profile, rng)
        op = build_daft(params)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        y = demodulate(
            apply_channel_time(append_cpp(modulate(x, op), params), real, params, 0.0), op
        )
        eff = effective_channel(build_time_matrix(real, params), op)
        err = float(np.linalg.norm(eff.dense @ x - y) / np.linalg.norm(y))
        if err > worst["err"]:
            worst = {"err": err, "n": n, "paths": paths, "trial": trial}
    return {"passed": worst["err"] < 1e-9, "seed": 103, **worst}


def _check_effective_sparsity() -> dict:
    rng = np.random.default_rng(104)
    n = 32
    params = AfdmParams(n, *default_chirp_rates(n, 2), l_cpp=7)
    profile = ChannelProfile(num_paths=3, max_delay=7, max_doppler=2)
    op = build_daft(params)
    worst_nnz = 0
    for _ in range(5):
        real = sample_realization(profile, rng)
        eff = effective_channel(build_time_matrix(real, params), op)
        worst_nnz = max(worst_nnz, max(len(ix) for ix, _ in eff.columns))
    return {"passed": worst_nnz <= profile.num_paths, "seed": 104, "worst_nnz": worst_nnz}


def _check_vb_scalar_observation() -> dict:
    rng = np.random.default_rng(105)
    n = 4
    const = build_constellation(4)
    params = AfdmParams(n, *default_chirp_rates(n, 2), l_cpp=2)
    profile = ChannelProfile(num_paths=2, max_delay=2, max_doppler=2)
    op = build_daft(params)
    cfg = DetectorConfig(max_iter=10, tol=1e-6)
    n0 = 10.0 ** (-20.0 / 10.0)
    agree = total = 0
    for trial in range(60):
        trial_rng = np.random.default_rng([105, trial])
        bits = trial_rng.integers(0, 2, n * 2)
        x = map_bits(bits, const)
        s_cpp = append_cpp(modulate(x, op), params)
        real = sample_realization(profile, trial_rng)
        r = apply_channel_time(s_cpp, real, params, n0, trial_rng)
        y = demodulate(r, op)
        eff = effective_channel(build_time_matrix(real, params), op)
        oracle = map_detect(y, eff, n0, const)
        vb, _ = vb_detect(y, eff, n0, const, cfg)
        agree += int(np.sum(oracle.hard_symbols == vb.hard_symbols))
        total += n
    rate = agree / total
    return {"passed": rate >= 0.95, "seed": 105, "agreement": rate, "trials": 60, "snr_db": 20.0}


CHECKS = (
    ("daft_unitarity", _check_daft_unitarity),
    ("modulate_roundtrip", _check_modulate_roundtrip),
    ("cpp_degeneration", _check_cpp_degeneration),
    ("channel_matrix_vs_convolution", _check_channel_oracle),
    ("effective_channel_sparsity", _check_effective_sparsity),
    ("vb_scalar_observation", _check_vb_scalar_observation),
)


def run_selftest(fault: str | None = None) -> dict:
    """Run every invariant check; returns a machine-readable report.

    fault, when given, enables the named defect before running so the
    suite can demonstrate it actually catches broken math.
    """
    if fault is not None and fault not in FAULT_NAMES:
        raise ConfigError(f"unknown fault {fault!r}; expected one of {FAULT_NAMES}")
    t0 = time.perf_counter()
    if fault == "negate-scalar-observation":
        _det._FAULT_NEGATE_SCALAR_OBS = True
    try:
        checks = []
        for name, fn in CHECKS:
            detail = fn()
            detail["name"] = name
            checks.append(detail)
    finally:
        _det._FAULT_NEGATE_SCALAR_OBS = False
    return {
        "passed": all(c["passed"] for c in checks),
        "elapsed_s": time.perf_counter() - t0,
        "fault": fault,
        "checks": checks,
    }
