"""Seeded Monte-Carlo engine: SNR sweeps, bit-error tallies, residual traces.

Every trial derives its own generator from (master_seed, snr_index,
trial_index) through a counter-based split, so any single trial can be
replayed in isolation and the aggregate result is invariant to worker
count and scheduling order. Within a trial, all configured detectors see
the identical observation, channel, and noise.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .afdm import AfdmParams, DaftOperator, append_cpp, build_daft, default_chirp_rates, modulate, demodulate
from .channel import (
    DEFAULT_SPARSITY_THRESHOLD,
    ChannelProfile,
    apply_channel_time,
    build_time_matrix,
    effective_channel,
    sample_realization,
)
from .constellation import Constellation, build_constellation, map_bits
from .detectors import DetectorConfig, lmmse_detect, map_detect, mpa_detect, vb_detect, zf_detect
from .errors import ConfigError, SingularChannelError

DETECTOR_KINDS = ("zf", "lmmse", "map", "mpa", "vb")
ITERATIVE_KINDS = ("mpa", "vb")
WORKER_CAP_ENV = "AFDMSIM_MAX_WORKERS"


def split_seed(master: int, *stream: int) -> np.random.Generator:
    """Counter-based seed split: Philox keyed by SeedSequence(master, spawn_key).

    A pure function of (master, stream); distinct streams yield
    statistically independent generators, and the construction is stable
    across platforms and numpy versions that keep the Philox bit stream.
    """
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DetectorSpec:
    """One detector entry of an experiment: algorithm kind plus iteration knobs."""

    kind: str
    name: str | None = None
    max_iter: int = 10
    tol: float = 1e-4
    damping: float = 0.6

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ConfigError(f"unknown detector kind {self.kind!r}; expected one of {DETECTOR_KINDS}")
        DetectorConfig(max_iter=self.max_iter, tol=self.tol, damping=self.damping)

    @property
    def label(self) -> str:
        return self.name if self.name else self.kind

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(max_iter=self.max_iter, tol=self.tol, damping=self.damping)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.label,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "damping": self.damping,
        }


@dataclass(frozen=True)
class SimConfig:
    """Full description of one experiment.

    chirp and l_cpp accept "auto": the first chirp rate then defaults to
    the full-diversity value for the profile's Doppler span, and the
    prefix covers the profile's maximum delay.
    """

    frame_len: int
    constellation_k: int
    profile: ChannelProfile
    snr_db_grid: tuple[float, ...]
    num_frames: int
    detectors: tuple[DetectorSpec, ...]
    master_seed: int
    chirp: tuple[float, float] | str = "auto"
    l_cpp: int | str = "auto"
    workers: int = 1
    sparsity_threshold: float = DEFAULT_SPARSITY_THRESHOLD

    def __post_init__(self):
        if self.num_frames < 1:
            raise ConfigError("num_frames must be >= 1")
        if len(self.snr_db_grid) == 0:
            raise ConfigError("snr_db_grid must not be empty")
        if not self.detectors:
            raise ConfigError("at least one detector must be configured")
        labels = [d.label for d in self.detectors]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"detector labels must be unique, got {labels}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if isinstance(self.chirp, str) and self.chirp != "auto":
            raise ConfigError(f"chirp must be 'auto' or a (c1, c2) pair, got {self.chirp!r}")
        if isinstance(self.l_cpp, str) and self.l_cpp != "auto":
            raise ConfigError(f"l_cpp must be 'auto' or an integer, got {self.l_cpp!r}")

    def resolved_chirp(self) -> tuple[float, float]:
        if self.chirp == "auto":
            return default_chirp_rates(self.frame_len, self.profile.max_doppler)
        return (float(self.chirp[0]), float(self.chirp[1]))

    def resolved_l_cpp(self) -> int:
        if self.l_cpp == "auto":
            return self.profile.max_delay
        return int(self.l_cpp)

    def afdm_params(self) -> AfdmParams:
        c1, c2 = self.resolved_chirp()
        return AfdmParams(n=self.frame_len, c1=c1, c2=c2, l_cpp=self.resolved_l_cpp())

    def to_dict(self) -> dict:
        """Canonical dictionary: auto values resolved, detectors normalized."""
        c1, c2 = self.resolved_chirp()
        return {
            "frame_len": self.frame_len,
            "constellation_k": self.constellation_k,
            "chirp": [c1, c2],
            "l_cpp": self.resolved_l_cpp(),
            "profile": {
                "num_paths": self.profile.num_paths,
                "max_delay": self.profile.max_delay,
                "max_doppler": self.profile.max_doppler,
                "power_profile": list(self.profile.powers()),
            },
            "snr_db_grid": [float(s) for s in self.snr_db_grid],
            "num_frames": self.num_frames,
            "detectors": [d.to_dict() for d in self.detectors],
            "master_seed": self.master_seed,
            "workers": self.workers,
            "sparsity_threshold": self.sparsity_threshold,
        }


@dataclass
class DetectorSnrStats:
    """Tallies for one (detector, SNR) cell."""

    detector: str
    snr_db: float
    bits_total: int = 0
    bit_errors: int = 0
    frames: int = 0
    frame_errors: int = 0
    failed_frames: int = 0
    iterations_sum: int = 0
    op_count_sum: int = 0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else float("nan")

    @property
    def mean_iterations(self) -> float:
        return self.iterations_sum / self.frames if self.frames else 0.0

    @property
    def mean_op_count(self) -> float:
        return self.op_count_sum / self.frames if self.frames else 0.0

    def merge(self, other: "DetectorSnrStats") -> None:
        self.bits_total += other.bits_total
        self.bit_errors += other.bit_errors
        self.frames += other.frames
        self.frame_errors += other.frame_errors
        self.failed_frames += other.failed_frames
        self.iterations_sum += other.iterations_sum
        self.op_count_sum += other.op_count_sum

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "snr_db": self.snr_db,
            "bits_total": self.bits_total,
            "bit_errors": self.bit_errors,
            "ber": self.ber,
            "frames": self.frames,
            "frame_errors": self.frame_errors,
            "failed_frames": self.failed_frames,
            "mean_iterations": self.mean_iterations,
            "mean_op_count": self.mean_op_count,
        }


@dataclass
class BerResult:
    """Aggregated sweep outcome plus everything needed to replay any trial."""

    config: dict
    stats: list[DetectorSnrStats]
    trial_seeds: dict

    def cell(self, detector: str, snr_db: float) -> DetectorSnrStats:
        for s in self.stats:
            if s.detector == detector and s.snr_db == snr_db:
                return s
        raise KeyError(f"no stats for ({detector}, {snr_db})")

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "results": [s.to_dict() for s in self.stats],
            "trial_seeds": self.trial_seeds,
        }


@dataclass
class ResidualReport:
    """Per-trial residual traces of the iterative detectors at one SNR point.

    Traces shorter than the longest (early termination) are padded with
    their final value before the per-iteration percentiles are formed.
    """

    config: dict
    snr_db: float
    traces: dict[str, list[list[float]]]
    summary: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    def build_summary(self) -> None:
        self.summary = {}
        for label, trials in self.traces.items():
            width = max(len(t) for t in trials)
            padded = np.array([t + [t[-1]] * (width - len(t)) for t in trials])
            q25, q50, q75 = np.percentile(padded, [25, 50, 75], axis=0)
            self.summary[label] = {
                "iteration": list(range(1, width + 1)),
                "p25": [float(v) for v in q25],
                "p50": [float(v) for v in q50],
                "p75": [float(v) for v in q75],
            }

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "snr_db": self.snr_db,
            "traces": self.traces,
            "summary": self.summary,
        }


@dataclass
class _TrialContext:
    """Per-process immutable pieces rebuilt from the config once per work block."""

    cfg: SimConfig
    params: AfdmParams
    op: DaftOperator
    constellation: Constellation

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "_TrialContext":
        params = cfg.afdm_params()
        if cfg.profile.max_delay > params.l_cpp:
            raise ConfigError(
                f"prefix length {params.l_cpp} cannot cover max path delay {cfg.profile.max_delay}"
            )
        return cls(
            cfg=cfg,
            params=params,
            op=build_daft(params),
            constellation=build_constellation(cfg.constellation_k),
        )


def _run_detector(spec: DetectorSpec, y, eff, n0, const):
    if spec.kind == "zf":
        return zf_detect(y, eff, const)
    if spec.kind == "lmmse":
        return lmmse_detect(y, eff, n0, const)
    if spec.kind == "map":
        return map_detect(y, eff, n0, const)
    if spec.kind == "mpa":
        return mpa_detect(y, eff, n0, const, spec.detector_config())
    if spec.kind == "vb":
        result, _ = vb_detect(y, eff, n0, const, spec.detector_config())
        return result
    raise ConfigError(f"unknown detector kind {spec.kind!r}")


def run_trial(ctx: _TrialContext, snr_index: int, trial_index: int) -> dict:
    """Run one frame end to end; returns per-detector outcomes.

    Outcome values are dicts with bit_errors/iterations/op_count/fingerprint,
    or None when the detector failed on this channel draw (e.g. singular
    matrix for zero forcing).
    """
    cfg = ctx.cfg
    const = ctx.constellation
    rng = split_seed(cfg.master_seed, snr_index, trial_index)
    snr_db = cfg.snr_db_grid[snr_index]
    n0 = 10.0 ** (-snr_db / 10.0)

    bits = rng.integers(0, 2, cfg.frame_len * const.bits_per_symbol, dtype=np.uint8)
    x = map_bits(bits, const)
    s_cpp = append_cpp(modulate(x, ctx.op), ctx.params)
    real = sample_realization(cfg.profile, rng)
    r = apply_channel_time(s_cpp, real, ctx.params, n0, rng)
    y = demodulate(r, ctx.op)
    eff = effective_channel(build_time_matrix(real, ctx.params), ctx.op, cfg.sparsity_threshold)

    outcomes: dict[str, dict | None] = {}
    for spec in cfg.detectors:
        try:
            res = _run_detector(spec, y, eff, n0, const)
        except SingularChannelError:
            outcomes[spec.label] = None
            continue
        outcomes[spec.label] = {
            "bit_errors": int(np.sum(res.hard_bits != bits)),
            "iterations": res.iterations,
            "op_count": res.op_count,
            "fingerprint": res.fingerprint(),
        }
    return outcomes


def replay_trial(cfg: SimConfig, snr_index: int, trial_index: int) -> dict:
    """Re-run a single recorded trial in isolation from its seed indices."""
    return run_trial(_TrialContext.from_config(cfg), snr_index, trial_index)


def _ber_block(cfg: SimConfig, snr_index: int, trials: list[int]) -> dict[str, DetectorSnrStats]:
    ctx = _TrialContext.from_config(cfg)
    snr_db = float(cfg.snr_db_grid[snr_index])
    frame_bits = cfg.frame_len * ctx.constellation.bits_per_symbol
    block = {spec.label: DetectorSnrStats(spec.label, snr_db) for spec in cfg.detectors}
    for t in trials:
        outcomes = run_trial(ctx, snr_index, t)
        for label, out in outcomes.items():
            s = block[label]
            if out is None:
                s.failed_frames += 1
                continue
            s.frames += 1
            s.bits_total += frame_bits
            s.bit_errors += out["bit_errors"]
            s.frame_errors += int(out["bit_errors"] > 0)
            s.iterations_sum += out["iterations"]
            s.op_count_sum += out["op_count"]
    return block


def _residual_block(cfg: SimConfig, snr_index: int, trials: list[int]) -> dict[str, dict[int, list[float]]]:
    ctx = _TrialContext.from_config(cfg)
    iterative = [d for d in cfg.detectors if d.kind in ITERATIVE_KINDS]
    out: dict[str, dict[int, list[float]]] = {d.label: {} for d in iterative}
    n0 = 10.0 ** (-cfg.snr_db_grid[snr_index] / 10.0)
    for t in trials:
        rng = split_seed(cfg.master_seed, snr_index, t)
        bits = rng.integers(0, 2, cfg.frame_len * ctx.constellation.bits_per_symbol, dtype=np.uint8)
        x = map_bits(bits, ctx.constellation)
        s_cpp = append_cpp(modulate(x, ctx.op), ctx.params)
        real = sample_realization(cfg.profile, rng)
        r = apply_channel_time(s_cpp, real, ctx.params, n0, rng)
        y = demodulate(r, ctx.op)
        eff = effective_channel(build_time_matrix(real, ctx.params), ctx.op, cfg.sparsity_threshold)
        for spec in iterative:
            res = _run_detector(spec, y, eff, n0, ctx.constellation)
            out[spec.label][t] = [float(v) for v in res.residual_trace]
    return out


def _effective_workers(cfg: SimConfig) -> int:
    cap = os.environ.get(WORKER_CAP_ENV)
    workers = cfg.workers
    if cap is not None:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"{WORKER_CAP_ENV} must be an integer, got {cap!r}")
    return max(1, workers)


def _chunk(trials: range, pieces: int) -> list[list[int]]:
    out, n = [], len(trials)
    size = max(1, -(-n // pieces))
    for start in range(0, n, size):
        out.append(list(trials[start:start + size]))
    return out


def run_ber(cfg: SimConfig) -> BerResult:
    """Sweep the SNR grid, tallying bit errors for every configured detector.

    Detector failures on individual channel draws are counted per cell
    (failed_frames) and excluded from that detector's error tally rather
    than silently dropped. The result is independent of worker count.
    """
    workers = _effective_workers(cfg)
    totals: dict[tuple[str, int], DetectorSnrStats] = {
        (spec.label, si): DetectorSnrStats(spec.label, float(cfg.snr_db_grid[si]))
        for spec in cfg.detectors for si in range(len(cfg.snr_db_grid))
    }
    jobs = []
    for si in range(len(cfg.snr_db_grid)):
        for trials in _chunk(range(cfg.num_frames), workers * 4):
            jobs.append((si, trials))

    if workers == 1:
        for si, trials in jobs:
            block = _ber_block(cfg, si, trials)
            for label, s in block.items():
                totals[(label, si)].merge(s)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(si, pool.submit(_ber_block, cfg, si, trials)) for si, trials in jobs]
            for si, fut in futures:
                for label, s in fut.result().items():
                    totals[(label, si)].merge(s)

    stats = [
        totals[(spec.label, si)]
        for spec in cfg.detectors for si in range(len(cfg.snr_db_grid))
    ]
    trial_seeds = {
        "scheme": "philox(seed_sequence(master_seed, spawn_key=(snr_index, trial_index)))",
        "master_seed": cfg.master_seed,
        "snr_db_grid": [float(s) for s in cfg.snr_db_grid],
        "num_frames": cfg.num_frames,
    }
    return BerResult(config=cfg.to_dict(), stats=stats, trial_seeds=trial_seeds)


def run_residuals(cfg: SimConfig) -> ResidualReport:
    """Record per-iteration residuals of the iterative detectors at one SNR."""
    if len(cfg.snr_db_grid) != 1:
        raise ConfigError("residual runs use a single SNR point; snr_db_grid must have length 1")
    if not any(d.kind in ITERATIVE_KINDS for d in cfg.detectors):
        raise ConfigError("residual runs need at least one iterative detector (vb or mpa)")
    workers = _effective_workers(cfg)
    merged: dict[str, dict[int, list[float]]] = {
        d.label: {} for d in cfg.detectors if d.kind in ITERATIVE_KINDS
    }
    chunks = _chunk(range(cfg.num_frames), workers * 4)
    if workers == 1:
        blocks = [_residual_block(cfg, 0, trials) for trials in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_residual_block, cfg, 0, trials) for trials in chunks]
            blocks = [f.result() for f in futures]
    for block in blocks:
        for label, per_trial in block.items():
            merged[label].update(per_trial)

    traces = {
        label: [per_trial[t] for t in sorted(per_trial)] for label, per_trial in merged.items()
    }
    report = ResidualReport(config=cfg.to_dict(), snr_db=float(cfg.snr_db_grid[0]), traces=traces)
    report.build_summary()
    return report
