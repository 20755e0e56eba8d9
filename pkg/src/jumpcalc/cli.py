"""Command line entry point: ``jumpcalc <kind> --config FILE [options]``.

Exit status: 0 when every verdict passes, 1 when some verdict fails,
2 for configuration errors, 3 for runtime failures, 130 when interrupted.
"""

from __future__ import annotations

import argparse
import datetime
import logging
import sys
import traceback
from pathlib import Path

from . import __version__
from .config import KINDS, parse_config
from .errors import SchemaError
from .experiments import RunResult, run_experiment
from .reports import emit_report

log = logging.getLogger("jumpcalc")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INTERRUPT = 0, 1, 2, 3, 130


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jumpcalc", description="Run a declarative verification experiment.")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, type=Path, help="YAML experiment file")
    p.add_argument("--seed", type=int, help="master seed (overrides the file)")
    p.add_argument("--paths", type=int, help="number of Monte Carlo paths (overrides the file)")
    p.add_argument("--threads", type=int, help="worker processes (default: machine parallelism)")
    p.add_argument("--out", type=Path, help="output directory (overrides the file)")
    p.add_argument("--format", choices=("json", "csv"), help="report format (overrides the file)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def write_outputs(result: RunResult, out: Path, fmt: str, cfg, interrupted: bool = False) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    payload = result.to_dict()
    payload["seed"] = cfg.seed
    payload["paths"] = cfg.paths
    payload["config"] = cfg.model_dump(mode="json", exclude={"threads", "output"})
    if interrupted:
        payload["interrupted"] = True
    path = emit_report(payload, fmt, out / f"report.{fmt}")
    for name, text in result.artifacts.items():
        (out / name).write_text(text, encoding="utf-8")
    # run metadata that legitimately varies between reruns lives apart from the report
    info = {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "threads": cfg.threads, "version": __version__, "interrupted": interrupted}
    emit_report(info, "json", out / "run_info.json")
    return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config, seed=args.seed, paths=args.paths, threads=args.threads)
    except SchemaError as err:
        for v in err.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.kind != args.kind:
        print(f"config error: file declares kind {cfg.kind!r}, command asked for {args.kind!r}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path(cfg.output.dir)
    fmt = args.format or cfg.output.format
    try:
        result = run_experiment(cfg)
    except KeyboardInterrupt:
        partial = RunResult(cfg.kind, False, {"note": "interrupted before completion"})
        write_outputs(partial, out, fmt, cfg, interrupted=True)
        print("interrupted; partial report written", file=sys.stderr)
        return EXIT_INTERRUPT
    except Exception as err:  # noqa: BLE001 - worker failures become a diagnostic and an exit code
        log.debug("failure", exc_info=True)
        print(f"run failed: {type(err).__name__}: {err}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT_RUNTIME
    path = write_outputs(result, out, fmt, cfg)
    print(f"{cfg.kind}: {'PASS' if result.passed else 'FAIL'} -> {path}")
    return EXIT_PASS if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
