"""Command-line entry point: ``rydsim run | check | lightshift``.

Exit codes: 0 success, 1 failed check, 2 invalid input, 3 numerical failure.
Errors are also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__, checks, seqfile
from .errors import ConfigError, ConfigSyntaxError, DomainError, NumericError, RydsimError, SchemaError
from .optics import BeamSpec, addressing_rabi, intensity_fraction, light_shift, raman_coupling, scattering_lifetime
from .runner import run_config

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(RydsimError):
    """A path or flag that cannot be used."""


# ---------------------------------------------------------------- config loading


def resolve_config_path(path: str) -> tuple[str, str]:
    """Read a config file; ``examples/<name>.json`` falls back to the bundled copy.

    Returns ``(text, source)``.
    """
    p = Path(path)
    if p.is_file():
        return p.read_text(encoding="utf-8"), str(p)
    bundled = resources.files("rydsim") / "configs" / p.name
    if p.suffix == ".json" and p.parent.name in ("examples", "") and bundled.is_file():
        return bundled.read_text(encoding="utf-8"), f"bundled:{p.name}"
    raise InputError(f"config file not found: {path}")


def load_config(path: str, overrides=(), seed=None, shots=None, lax=False) -> tuple[seqfile.ExperimentConfig, str]:
    text, source = resolve_config_path(path)
    if not overrides and seed is None and shots is None:
        return seqfile.parse(text, strict=not lax), source
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                                exc.lineno, exc.colno) from None
    if not isinstance(data, dict):
        raise SchemaError("top level must be a JSON object")
    seqfile.apply_overrides(data, list(overrides))
    if seed is not None:
        data["seed"] = seed
    if shots is not None:
        data["shots"] = shots
    return seqfile.validate(data, strict=not lax), source


# ---------------------------------------------------------------- output


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip
    return str(v)


def csv_text(columns: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(columns))
    for row in zip(*columns.values()):
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def emit_error(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("line", "column", "field", "problems"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = value
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, InputError, DomainError, OSError)):
        return EXIT_INPUT
    if isinstance(exc, (NumericError, ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, (RydsimError, ValueError)):
        return EXIT_INPUT
    return EXIT_NUMERIC


# ---------------------------------------------------------------- commands


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("RYDSIM_THREADS")
    return int(env) if env else None


def cmd_run(args) -> int:
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    cfg, source = load_config(args.config, args.set or [], args.seed, args.shots, args.lax)
    out = Path(args.out or cfg.output.dir)
    threads = _threads(args)
    result = run_config(cfg, threads)
    csv_bytes = csv_text(result.columns).encode("utf-8")
    json_bytes = _dump({"protocol": result.protocol, "summary": result.summary, "metadata": result.metadata}).encode()
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.csv").write_bytes(csv_bytes)
    (out / "result.json").write_bytes(json_bytes)
    config_echo = seqfile.echo(cfg)
    manifest = {
        "tool": "rydsim",
        "version": __version__,
        "config_source": source,
        "config": json.loads(config_echo),
        "config_sha256": _sha256(config_echo.encode("utf-8")),
        "overrides": list(args.set or []),
        "seed": cfg.seed,
        "shots": cfg.shots,
        "threads": threads,
        "started_utc": started.isoformat(timespec="seconds"),
        "wall_clock_s": round(time.perf_counter() - t0, 6),
        "outputs": {"result.csv": _sha256(csv_bytes), "result.json": _sha256(json_bytes)},
        "platform": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
                     "machine": platform.machine()},
    }
    (out / "manifest.json").write_text(_dump(manifest), encoding="utf-8")
    print(f"{result.protocol}: {len(next(iter(result.columns.values())))} rows -> {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        results = checks.run_checks(args.scope)
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from None
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def lightshift_report(power: float, detuning: float, waist: float = 3.4, offset: float = 0.0) -> dict:
    """Shift, lifetime and Raman coupling at ``offset`` um from the beam axis."""
    beam = BeamSpec(power, waist, detuning=detuning)
    frac = intensity_fraction(beam, (0.0, offset, 0.0))
    omega = addressing_rabi(beam) * math.sqrt(frac)
    tau, _ = scattering_lifetime(omega, detuning)
    return {
        "intensity_fraction": frac,
        "omega_addr_mhz": omega,
        "perturbative_shift_mhz": light_shift(omega, detuning, "perturbative"),
        "dressed_shift_mhz": light_shift(omega, detuning, "dressed"),
        "lifetime_us": tau,
        "raman_mhz": raman_coupling(omega, detuning),
    }


def cmd_lightshift(args) -> int:
    rep = lightshift_report(args.power, args.detuning, args.waist, args.offset)
    print(
        f"perturbative {rep['perturbative_shift_mhz']:.6g} MHz, dressed {rep['dressed_shift_mhz']:.6g} MHz, "
        f"lifetime {rep['lifetime_us']:.6g} us, Raman {rep['raman_mhz']:.6g} MHz, "
        f"intensity fraction {rep['intensity_fraction']:.6g}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (overrides config)")
    common.add_argument("--shots", type=int, default=argparse.SUPPRESS, help="shots per point (0 = exact)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", default=argparse.SUPPRESS,
                        help="override a config value by dotted path (repeatable)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads (fallback: RYDSIM_THREADS)")

    parser = argparse.ArgumentParser(prog="rydsim", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"rydsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run the protocol described by a JSON config")
    run.add_argument("config", help="path to a schema-1 JSON config")
    run.add_argument("--lax", action="store_true", help="ignore unknown keys instead of rejecting them")
    run.set_defaults(func=cmd_run)

    chk = sub.add_parser("check", parents=[common], help="run oracle and invariant checks")
    chk.add_argument("scope", nargs="?", default="all", help=f"all or one of: {', '.join(checks.MODULES)}")
    chk.set_defaults(func=cmd_check)

    ls = sub.add_parser("lightshift", parents=[common], help="addressing-beam calculator")
    ls.add_argument("--power", type=float, required=True, help="beam power (mW)")
    ls.add_argument("--detuning", type=float, required=True, help="addressing detuning (MHz)")
    ls.add_argument("--waist", type=float, default=3.4, help="1/e^2 intensity radius (um)")
    ls.add_argument("--offset", type=float, default=0.0, help="distance of the atom from the beam axis (um)")
    ls.set_defaults(func=cmd_lightshift)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("seed", "shots", "out", "set", "threads"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an exit code
        return emit_error(exc, _exit_code_for(exc))


if __name__ == "__main__":
    sys.exit(main())
