"""Command line entry point.

``ljmeso <study> --config FILE --out DIR [--seed-base INT] [--threads INT]``

Exit codes: 0 success, 1 I/O failure, 2 invalid configuration,
3 hypothesis-regime violation, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ..errors import ConfigError, HypothesisViolation, NumericalAbort
from ..kernel import ExponentWindowError, QuadratureError
from ..reference import load_reference
from .config import ExperimentConfig, load_config
from .outputs import OutputError, jsonable, versions, write_csv, write_json
from .studies import StudyResult, prepare, run_study

__all__ = ["main", "emit_outputs", "build_manifest", "SUBCOMMANDS"]

SUBCOMMANDS = ("analyze-kernel", "solve-pde", "simulate", "convergence", "coincidence", "sconv")
_KIND = {"analyze-kernel": "kernel", "solve-pde": "pde", "simulate": "simulate",
         "convergence": "convergence", "coincidence": "coincidence", "sconv": "sconv"}

_log = logging.getLogger(__name__)

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERICAL = 0, 1, 2, 3, 4


def build_manifest(study: str, cfg: ExperimentConfig, seeds, status: str,
                   result: StudyResult | None = None, margin: float | None = None) -> dict:
    return {
        "study": study,
        "status": status,
        "config_hash": cfg.digest,
        "config": cfg.source,
        "versions": versions(),
        "seeds": list(seeds),
        "measured_constants": load_reference(),
        "waivers": list(cfg.waivers),
        "grid_truncation_mass_margin": margin,
        "results": None if result is None else result.summary,
        "files": None if result is None else sorted(_file_names(study, result)),
    }


def _file_names(study: str, result: StudyResult) -> list[str]:
    return ([f"{study}_{k}.csv" for k in result.tables]
            + [f"{study}_{k}.csv" for k in result.raw_files])


def emit_outputs(out: Path, result: StudyResult, manifest: dict) -> list[Path]:
    """Write every table of ``result`` and the manifest, all prefixed by the study name."""
    out = Path(out)
    study = manifest["study"]
    paths = []
    for name, rows in sorted(result.tables.items()):
        paths.append(write_csv(out / f"{study}_{name}.csv", rows))
    for name, text in sorted(result.raw_files.items()):
        path = out / f"{study}_{name}.csv"
        try:
            path.write_text(text, encoding="utf-8", newline="\n")
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc
        paths.append(path)
    paths.append(write_json(out / f"{study}_manifest.json", manifest))
    return paths


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ljmeso", description="Kernel, PDE and particle studies.",
                                 epilog=__doc__.split("\n\n")[2].replace("\n", " "))
    sub = ap.add_subparsers(dest="study", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="TOML experiment config")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--seed-base", type=int, default=None,
                       help="first seed, overrides study.seed_base")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (results do not depend on it)")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return ap


def _report(violations) -> None:
    for kind, msg in violations:
        print(f"{kind}: {msg}", file=sys.stderr)


def run(study: str, config_path: Path, out: Path, seed_base: int | None = None,
        threads: int = 1) -> int:
    try:
        cfg = load_config(config_path, kind=_KIND[study])
    except ConfigError as exc:
        _report(exc.violations)
        return EXIT_HYPOTHESIS if exc.only_hypothesis else EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read {config_path}: {exc}", file=sys.stderr)
        return EXIT_IO

    ctx = prepare(cfg, threads=threads, seed_base=seed_base)
    out = Path(out)
    manifest_path = out / f"{study}_manifest.json"
    started = time.perf_counter()
    _log.info("%s: config %s (hash %s), seeds %d..%d, %d thread(s)", study, config_path,
              cfg.digest, ctx.seeds[0], ctx.seeds[-1], threads)
    try:
        write_json(manifest_path, build_manifest(study, cfg, ctx.seeds, "running"))
        result = run_study(study, ctx)
        _log.info("%s: finished in %.1f s, writing to %s", study, time.perf_counter() - started, out)
        margin = ctx._solution.boundary_mass if ctx._solution is not None else None
        emit_outputs(out, result, build_manifest(study, cfg, ctx.seeds, "complete", result, margin))
    except (HypothesisViolation, ExponentWindowError) as exc:
        print(f"hypothesis: {exc}", file=sys.stderr)
        _abort(manifest_path, study, cfg, ctx, str(exc))
        return EXIT_HYPOTHESIS
    except (NumericalAbort, QuadratureError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        _abort(manifest_path, study, cfg, ctx, str(exc))
        return EXIT_NUMERICAL
    except OutputError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_IO
    # wall-clock lives outside the manifest so the manifest stays byte-stable
    try:
        write_json(out / f"{study}_timing.json",
                   {"wall_clock_seconds": time.perf_counter() - started, "threads": threads})
    except OutputError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_IO
    print(json.dumps(jsonable(result.summary), sort_keys=True))
    return EXIT_OK


def _abort(path: Path, study: str, cfg, ctx, message: str) -> None:
    manifest = build_manifest(study, cfg, ctx.seeds, "aborted")
    manifest["error"] = message
    try:
        write_json(path, manifest)
    except OutputError:
        pass


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return run(args.study, args.config, args.out, args.seed_base, args.threads)
