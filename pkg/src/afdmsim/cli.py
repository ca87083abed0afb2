"""Command-line front end: run experiments, write CSV/JSON results, verify outputs.

Exit codes: 0 success, 1 invariant/selftest/verification failure,
2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import config_hash, load_sim_config, serialize_canonical
from .errors import ConfigError
from .selftest import FAULT_NAMES, run_selftest
from .simharness import run_ber, run_residuals

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3


@dataclass(frozen=True)
class RunManifest:
    """What a result directory claims about itself: the config digest, the
    tool that produced it, when, from which seed, and the output digests."""

    config_hash: str
    tool_version: str
    created_utc: str
    master_seed: int
    outputs: dict[str, str]


def _float_repr(v: float) -> str:
    return repr(float(v))


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_outputs(out_dir: Path, files: dict[str, str], master_seed: int, cfg_hash: str) -> None:
    """Write all payloads, then the manifest; nothing lands on failure midway."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, payload in files.items():
        path = out_dir / name
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(payload)
        tmp.replace(path)
        written[name] = _sha256_file(path)
    manifest = RunManifest(
        config_hash=cfg_hash,
        tool_version=__version__,
        created_utc=datetime.now(timezone.utc).isoformat(),
        master_seed=master_seed,
        outputs=written,
    )
    (out_dir / "manifest.json").write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")


def _ber_csv(result, cfg_hash: str) -> str:
    lines = [f"# config_hash={cfg_hash}", "detector,snr_db,bits,bit_errors,ber,frames,mean_iters,mean_ops"]
    for s in result.stats:
        lines.append(",".join([
            s.detector,
            _float_repr(s.snr_db),
            str(s.bits_total),
            str(s.bit_errors),
            _float_repr(s.ber) if s.bits_total else "nan",
            str(s.frames),
            _float_repr(s.mean_iterations),
            _float_repr(s.mean_op_count),
        ]))
    return "\n".join(lines) + "\n"


def _residuals_csv(report, cfg_hash: str) -> tuple[str, str]:
    lines = [f"# config_hash={cfg_hash}", "detector,trial,iteration,residual"]
    for label in sorted(report.traces):
        for trial, trace in enumerate(report.traces[label]):
            for it, value in enumerate(trace, start=1):
                lines.append(f"{label},{trial},{it},{_float_repr(value)}")
    summary = [f"# config_hash={cfg_hash}", "detector,iteration,p25,p50,p75"]
    for label in sorted(report.summary):
        s = report.summary[label]
        for it, q25, q50, q75 in zip(s["iteration"], s["p25"], s["p50"], s["p75"]):
            summary.append(f"{label},{it},{_float_repr(q25)},{_float_repr(q50)},{_float_repr(q75)}")
    return "\n".join(lines) + "\n", "\n".join(summary) + "\n"


def _load_config(args) -> tuple:
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"master_seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    cfg = load_sim_config(args.config, overrides)
    canonical = cfg.to_dict()
    return cfg, canonical, config_hash(canonical)


def cmd_ber(args) -> int:
    cfg, canonical, cfg_hash = _load_config(args)
    result = run_ber(cfg)
    payload = result.to_dict()
    payload["config_hash"] = cfg_hash
    files = {
        "ber.csv": _ber_csv(result, cfg_hash),
        "result.json": json.dumps(payload, indent=2, sort_keys=True) + "\n",
        "config.canonical.json": serialize_canonical(canonical),
    }
    _write_outputs(Path(args.out), files, cfg.master_seed, cfg_hash)
    for s in result.stats:
        print(f"{s.detector:>8s}  snr={s.snr_db:6.2f} dB  ber={s.ber:.6e}  "
              f"bits={s.bits_total}  failed_frames={s.failed_frames}")
    return EXIT_OK


def cmd_residuals(args) -> int:
    cfg, canonical, cfg_hash = _load_config(args)
    report = run_residuals(cfg)
    payload = report.to_dict()
    payload["config_hash"] = cfg_hash
    residuals, summary = _residuals_csv(report, cfg_hash)
    files = {
        "residuals.csv": residuals,
        "residual_summary.csv": summary,
        "result.json": json.dumps(payload, indent=2, sort_keys=True) + "\n",
        "config.canonical.json": serialize_canonical(canonical),
    }
    _write_outputs(Path(args.out), files, cfg.master_seed, cfg_hash)
    for label, s in sorted(report.summary.items()):
        med = ", ".join(f"{v:.2e}" for v in s["p50"])
        print(f"{label}: median residual per iteration: {med}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    report = run_selftest(fault=args.inject_fault)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        for check in report["checks"]:
            status = "ok" if check["passed"] else "FAILED"
            print(f"{check['name']:>32s}: {status}")
        print(f"selftest {'passed' if report['passed'] else 'FAILED'} "
              f"in {report['elapsed_s']:.1f}s")
        if not report["passed"]:
            first = next(c for c in report["checks"] if not c["passed"])
            detail = {k: v for k, v in first.items() if k not in ("passed",)}
            print(f"first failing invariant: {json.dumps(detail, default=str)}")
    return EXIT_OK if report["passed"] else EXIT_FAILURE


def cmd_verify(args) -> int:
    out_dir = Path(args.out)
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        print(f"no manifest at {manifest_path}", file=sys.stderr)
        return EXIT_FAILURE
    manifest = json.loads(manifest_path.read_text())
    ok = True
    for name, digest in manifest.get("outputs", {}).items():
        path = out_dir / name
        if not path.exists():
            print(f"missing output {name}")
            ok = False
            continue
        actual = _sha256_file(path)
        if actual != digest:
            print(f"digest mismatch for {name}: manifest {digest[:12]}.., file {actual[:12]}..")
            ok = False
            continue
        if name.endswith(".csv"):
            first = path.read_text().splitlines()[0]
            embedded = first.removeprefix("# config_hash=")
            if embedded != manifest["config_hash"]:
                print(f"{name}: embedded config hash does not match manifest")
                ok = False
        if name == "result.json":
            embedded = json.loads(path.read_text()).get("config_hash")
            if embedded != manifest["config_hash"]:
                print(f"{name}: embedded config hash does not match manifest")
                ok = False
        if name == "config.canonical.json":
            recomputed = config_hash(json.loads(path.read_text()))
            if recomputed != manifest["config_hash"]:
                print(f"{name}: recomputed config hash does not match manifest")
                ok = False
    print("verify: " + ("ok" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afdmsim",
        description="AFDM link-level simulations: BER sweeps, residual traces, self checks",
    )
    parser.add_argument("--version", action="version", version=f"afdmsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_args(p):
        p.add_argument("--config", required=True, help="TOML or JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--workers", type=int, default=None, help="override worker count")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted keys, TOML literals)")

    p_ber = sub.add_parser("ber", help="run a BER sweep and write ber.csv/result.json")
    add_run_args(p_ber)
    p_ber.set_defaults(func=cmd_ber)

    p_res = sub.add_parser("residuals", help="record per-iteration detector residuals")
    add_run_args(p_res)
    p_res.set_defaults(func=cmd_residuals)

    p_self = sub.add_parser("selftest", help="run the fast invariant suite")
    p_self.add_argument("--json", action="store_true", help="machine-readable report")
    p_self.add_argument("--inject-fault", choices=FAULT_NAMES, default=None,
                        help="enable a known defect to prove the suite catches it")
    p_self.set_defaults(func=cmd_selftest)

    p_verify = sub.add_parser("verify", help="check outputs against their manifest")
    p_verify.add_argument("--out", required=True, help="directory holding manifest.json")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
