"""Experiment config files: TOML/JSON parsing, overrides, canonical hashing.

A config file mirrors SimConfig field for field. The canonical form is the
dictionary SimConfig.to_dict() returns ("auto" values resolved, detector
entries normalized); serializing it to sorted-key JSON and parsing that
back reproduces the same canonical dictionary, and its SHA-256 digest is
the config hash embedded in every output file.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import tomli

from .channel import DEFAULT_SPARSITY_THRESHOLD, ChannelProfile
from .errors import ConfigError
from .simharness import DetectorSpec, SimConfig

_TOP_KEYS = {
    "frame_len", "constellation_k", "chirp", "l_cpp", "snr_db_grid",
    "num_frames", "master_seed", "workers", "sparsity_threshold",
    "profile", "detectors",
}
_PROFILE_KEYS = {"num_paths", "max_delay", "max_doppler", "power_profile"}
_DETECTOR_KEYS = {"kind", "name", "max_iter", "tol", "damping"}
_REQUIRED = ("frame_len", "constellation_k", "snr_db_grid", "num_frames", "master_seed",
             "profile", "detectors")


def load_raw(path: str | Path) -> dict:
    """Parse a .toml or .json config file into a plain dictionary."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    else:
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return raw


def _parse_override_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse override value {text!r}: {exc}") from exc


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.key=value` overrides; integer segments index lists."""
    out = json.loads(json.dumps(raw))  # deep copy of plain data
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, value_text = item.partition("=")
        segments = key.strip().split(".")
        value = _parse_override_value(value_text.strip())
        node = out
        for i, seg in enumerate(segments[:-1]):
            if isinstance(node, list):
                node = _index_list(node, seg, key)
            elif seg in node:
                node = node[seg]
            else:
                raise ConfigError(f"override {key!r}: unknown section {seg!r}")
            if not isinstance(node, (dict, list)):
                raise ConfigError(f"override {key!r}: {seg!r} is not a section")
        last = segments[-1]
        if isinstance(node, list):
            idx = _list_index(last, key, len(node))
            node[idx] = value
        else:
            node[last] = value
    return out


def _index_list(node: list, seg: str, key: str):
    return node[_list_index(seg, key, len(node))]


def _list_index(seg: str, key: str, length: int) -> int:
    try:
        idx = int(seg)
    except ValueError:
        raise ConfigError(f"override {key!r}: list index expected, got {seg!r}")
    if not 0 <= idx < length:
        raise ConfigError(f"override {key!r}: index {idx} out of range (length {length})")
    return idx


def build_sim_config(raw: dict) -> SimConfig:
    """Validate a raw config dictionary and build the typed SimConfig."""
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")

    prof_raw = raw["profile"]
    if not isinstance(prof_raw, dict):
        raise ConfigError("profile: must be a table")
    unknown = set(prof_raw) - _PROFILE_KEYS
    if unknown:
        raise ConfigError(f"profile: unknown keys {sorted(unknown)}")
    power = prof_raw.get("power_profile", "equal")
    if power == "equal":
        power = None
    elif not isinstance(power, list):
        raise ConfigError("profile.power_profile: must be 'equal' or a list of powers")
    try:
        profile = ChannelProfile(
            num_paths=int(prof_raw["num_paths"]),
            max_delay=int(prof_raw["max_delay"]),
            max_doppler=int(prof_raw["max_doppler"]),
            power_profile=tuple(power) if power is not None else None,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"profile: {exc}") from exc

    det_raw = raw["detectors"]
    if not isinstance(det_raw, list) or not det_raw:
        raise ConfigError("detectors: must be a non-empty array of tables")
    detectors = []
    for i, entry in enumerate(det_raw):
        if not isinstance(entry, dict):
            raise ConfigError(f"detectors[{i}]: must be a table")
        unknown = set(entry) - _DETECTOR_KEYS
        if unknown:
            raise ConfigError(f"detectors[{i}]: unknown keys {sorted(unknown)}")
        if "kind" not in entry:
            raise ConfigError(f"detectors[{i}]: missing 'kind'")
        try:
            detectors.append(DetectorSpec(
                kind=str(entry["kind"]),
                name=entry.get("name"),
                max_iter=int(entry.get("max_iter", 10)),
                tol=float(entry.get("tol", 1e-4)),
                damping=float(entry.get("damping", 0.6)),
            ))
        except ValueError as exc:
            raise ConfigError(f"detectors[{i}]: {exc}") from exc

    chirp = raw.get("chirp", "auto")
    if isinstance(chirp, list):
        if len(chirp) != 2:
            raise ConfigError("chirp: expected [c1, c2]")
        chirp = (float(chirp[0]), float(chirp[1]))

    try:
        return SimConfig(
            frame_len=int(raw["frame_len"]),
            constellation_k=int(raw["constellation_k"]),
            profile=profile,
            snr_db_grid=tuple(float(s) for s in raw["snr_db_grid"]),
            num_frames=int(raw["num_frames"]),
            detectors=tuple(detectors),
            master_seed=int(raw["master_seed"]),
            chirp=chirp,
            l_cpp=raw.get("l_cpp", "auto"),
            workers=int(raw.get("workers", 1)),
            sparsity_threshold=float(raw.get("sparsity_threshold", DEFAULT_SPARSITY_THRESHOLD)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_sim_config(path: str | Path, overrides: list[str] | None = None) -> SimConfig:
    raw = load_raw(path)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return build_sim_config(raw)


def serialize_canonical(canonical: dict) -> str:
    return json.dumps(canonical, sort_keys=True, indent=2) + "\n"


def config_hash(canonical: dict) -> str:
    payload = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()
