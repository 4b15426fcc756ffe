"""Command-line entry point ``shellrg``.

Exit codes: 0 success, 1 configuration or usage error, 2 a required run failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PRESETS, config_from_dict, parse_config, preset, serialize
from .core import ConfigurationError
from .parallel import WORKERS_ENV

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shellrg", description="Regularized shell-model experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True, help="config file path ('-' reads stdin)")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--workers", type=_positive, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    run.add_argument("--seed", type=int, help="override the config seed")

    pre = sub.add_parser("preset", help="run a named preset")
    pre.add_argument("name", choices=sorted(PRESETS))
    pre.add_argument("--out", required=True)
    pre.add_argument("--workers", type=_positive)

    val = sub.add_parser("validate", help="validate a config without running it")
    val.add_argument("--config", required=True)

    sub.add_parser("list-presets", help="print preset names")
    show = sub.add_parser("show-preset", help="print a preset's full config")
    show.add_argument("name", choices=sorted(PRESETS))
    return p


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from None


def _execute(cfg, text, out, workers) -> int:
    from .runner import run_experiment

    out = out or cfg.out
    if out is None:
        raise ConfigurationError("out: an output directory is required (--out or config 'out')")
    result = run_experiment(cfg, out, workers=workers, config_text=text)
    for f in result.failures:
        print(f"failed: {f['label']}: {f['status']} {f['message']}", file=sys.stderr)
    print(f"{cfg.kind}: {len(result.runs)} runs, {len(result.failures)} failed, "
          f"{result.wall_time:.1f}s -> {result.out_dir}")
    return EXIT_OK if result.ok else EXIT_RUN


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-presets":
            print("\n".join(sorted(PRESETS)))
            return EXIT_OK
        if args.command == "show-preset":
            print(serialize(preset(args.name)), end="")
            return EXIT_OK
        if args.command == "validate":
            cfg = parse_config(_read(args.config))
            print(f"ok: {cfg.kind} ({cfg.model})")
            return EXIT_OK
        if args.command == "preset":
            cfg = preset(args.name)
            return _execute(cfg, None, args.out, args.workers)
        text = _read(args.config)
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = config_from_dict(dict(cfg.model_dump(mode="json"), seed=args.seed))
            text = None
        return _execute(cfg, text, args.out, args.workers)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
