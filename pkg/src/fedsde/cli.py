"""Batch front end: validate experiment configs, run them, emit artifacts.

Usage:
    fedsde run <config.json> [--out DIR] [--threads N]
    fedsde validate <config.json>

Exit codes: 0 success, 2 config/validation error, 3 numerical abort.
Artifacts are written atomically (temp file + rename) and the run manifest
is written last, so a directory containing a manifest is always complete.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__, parallel
from .discrete import NonFiniteError
from .experiments import run_experiment, validate_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")
    return raw


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_atomic(path: Path, content: str) -> None:
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(content)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def cmd_validate(path: Path) -> int:
    try:
        raw = _load_config(path)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    issues = validate_config(raw)
    for issue in issues:
        print(f"invalid: {issue}")
    if issues:
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def cmd_run(path: Path, out_dir: Path) -> int:
    try:
        raw = _load_config(path)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    issues = validate_config(raw)
    if issues:
        for issue in issues:
            print(f"invalid: {issue}", file=sys.stderr)
        return EXIT_CONFIG

    started = time.perf_counter()
    try:
        artifacts = run_experiment(raw)
    except NonFiniteError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir.mkdir(parents=True, exist_ok=True)
    for name, content in sorted(artifacts.items()):
        write_atomic(out_dir / name, content)
    manifest = {
        "config_sha256": config_hash(raw),
        "kind": raw["kind"],
        "artifacts": sorted(artifacts),
        "tool_version": __version__,
        "runtime_seconds": round(time.perf_counter() - started, 3),
    }
    write_atomic(out_dir / "manifest.json",
                 json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for name in sorted(artifacts):
        print(f"wrote {out_dir / name}")
    print(f"wrote {out_dir / 'manifest.json'}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fedsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config")
    run_p.add_argument("config", type=Path)
    run_p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: alongside the config)")
    run_p.add_argument("--threads", type=int, default=None,
                       help="max worker threads for independent chunks "
                            "(default: 1, or FEDSDE_THREADS)")

    val_p = sub.add_parser("validate", help="report all config violations")
    val_p.add_argument("config", type=Path)

    args = parser.parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args.config)
    if args.threads is not None:
        parallel.set_max_threads(args.threads)
    out_dir = args.out if args.out is not None else args.config.parent / "out"
    return cmd_run(args.config, out_dir)


if __name__ == "__main__":
    sys.exit(main())
