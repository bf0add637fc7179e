"""``drifter`` command line: run, replay, bench-mi, check, synth, and thin HTTP clients.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or configuration error.
"""
from __future__ import annotations

import os

# the engine thread is the single compute context; keep native pools from adding more
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import logging
import sys
from typing import Optional, Sequence

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_URL = "http://127.0.0.1:9464"


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "port", None) is not None:
        out["export.port"] = args.port
    if getattr(args, "seed", None) is not None:
        out["engine.ranking_seed"] = args.seed
    if getattr(args, "input", None) is not None:
        out["source.path"] = args.input
    return out


def _load(args):
    from drifter.config import ConfigError, load_config

    try:
        return load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return None


def _warn_conflicts(cfg) -> None:
    for pattern in cfg.filter_conflicts():
        print(f"warning: pattern {pattern!r} is in both allow and deny lists; deny wins",
              file=sys.stderr)


def cmd_check(args) -> int:
    from drifter.config import dump_config

    cfg = _load(args)
    if cfg is None:
        return EXIT_USAGE
    _warn_conflicts(cfg)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def cmd_run(args) -> int:
    from drifter.runner import run_service

    cfg = _load(args)
    if cfg is None:
        return EXIT_USAGE
    _warn_conflicts(cfg)
    try:
        return run_service(cfg)
    except OSError as exc:
        print(f"error: cannot serve on {cfg.export.host}:{cfg.export.port}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def cmd_replay(args) -> int:
    from drifter.ingest import SourceError
    from drifter.runner import replay

    cfg = _load(args)
    if cfg is None:
        return EXIT_USAGE
    _warn_conflicts(cfg)
    try:
        result = replay(cfg, args.input, args.out)
    except (SourceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"windows={result.windows} alerts={result.alerts} "
          f"lines_ok={result.stats.lines_ok} lines_rejected={result.stats.lines_rejected}",
          file=sys.stderr)
    return EXIT_OK


def _densities(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    bad = [v for v in vals if not 0.0 < v <= 1.0]
    if not vals or bad:
        raise argparse.ArgumentTypeError(f"densities must lie in (0, 1], got {bad or text!r}")
    return vals


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def cmd_bench_mi(args) -> int:
    from drifter.bench import bench_mi, format_table

    rows = bench_mi(args.n, args.densities, args.repeats, args.seed or 0)
    sys.stdout.write(format_table(rows, args.sep))
    return EXIT_OK


def cmd_synth(args) -> int:
    from drifter.synth import coverage_drift_stream, mixed_stream, write_stream

    if args.kind == "mixed":
        lines = mixed_stream(args.records, args.features, args.density, args.seed or 0, fmt=args.format)
    else:
        lines = coverage_drift_stream(seed=args.seed or 0)
    try:
        if args.out == "-":
            sys.stdout.writelines(lines)
        else:
            write_stream(lines, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _get(url: str):
    import httpx

    try:
        resp = httpx.get(url, timeout=5.0)
    except httpx.HTTPError as exc:
        print(f"error: {url}: {exc}", file=sys.stderr)
        return None
    return resp


def cmd_status(args) -> int:
    import json

    health = _get(args.url.rstrip("/") + "/healthz")
    if health is None:
        return EXIT_RUNTIME
    out = {"health": health.json()}
    snap = _get(args.url.rstrip("/") + "/snapshot")
    if snap is not None and snap.status_code == 200:
        body = snap.json()
        out["window_id"] = body["window_id"]
        out["features"] = len(body["features"])
        out["alerts"] = body["alerts"]
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_scrape(args) -> int:
    resp = _get(args.url.rstrip("/") + "/metrics")
    if resp is None or resp.status_code != 200:
        return EXIT_RUNTIME
    sys.stdout.write(resp.text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from drifter.config import describe_defaults

    parser = argparse.ArgumentParser(
        prog="drifter",
        description="Streaming feature monitoring with drift alerts and Prometheus metrics.",
        epilog="configuration keys and defaults (YAML file via --config; override any key with "
               "DRIFTER_<SECTION>__<KEY>, e.g. DRIFTER_EXPORT__PORT=9000):\n" + describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, seed=True):
        p.add_argument("--config", help="YAML configuration file (default: built-in defaults)")
        if seed:
            p.add_argument("--seed", type=int, help="ranking seed (overrides engine.ranking_seed)")
        return p

    p = with_config(sub.add_parser("run", help="live service: ingest + engine + /metrics endpoint"))
    p.add_argument("--input", help="input path or '-' (overrides source.path)")
    p.add_argument("--port", type=int, help="HTTP port (overrides export.port, default 9464)")
    p.set_defaults(func=cmd_run)

    p = with_config(sub.add_parser("replay", help="deterministic offline replay in record time"))
    p.add_argument("--input", required=True, help="input file")
    p.add_argument("--out", required=True, help="output directory (windows/*.prom, alerts.jsonl)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("bench-mi", help="sparse vs dense mutual information runtime table")
    p.add_argument("--n", type=_positive, default=1_000_000, help="column length (default 1000000)")
    p.add_argument("--densities", type=_densities, default=[0.01, 0.05, 0.1, 0.3, 0.5],
                   help="comma-separated present fractions (default 0.01,0.05,0.1,0.3,0.5)")
    p.add_argument("--repeats", type=_positive, default=10, help="runs per density (default 10)")
    p.add_argument("--seed", type=int, default=0, help="data seed (default 0)")
    p.add_argument("--sep", default=",", help="column delimiter (default ',')")
    p.set_defaults(func=cmd_bench_mi)

    p = with_config(sub.add_parser("check", help="validate config and print the effective settings"),
                    seed=False)
    p.add_argument("--port", type=int, help="HTTP port override")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("synth", help="write a synthetic input stream")
    p.add_argument("kind", choices=["mixed", "coverage-drop"])
    p.add_argument("--out", default="-", help="output path; '.gz' suffix compresses (default stdout)")
    p.add_argument("--records", type=_positive, default=100_000, help="(mixed) records (default 100000)")
    p.add_argument("--features", type=_positive, default=100, help="(mixed) features (default 100)")
    p.add_argument("--density", type=float, default=0.3, help="(mixed) mean density (default 0.3)")
    p.add_argument("--format", choices=["jsonl", "vw"], default="jsonl", help="(mixed) output format")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.set_defaults(func=cmd_synth)

    for name, fn, text in (("status", cmd_status, "query a running service's health and latest window"),
                           ("scrape", cmd_scrape, "print a running service's /metrics document")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--url", default=DEFAULT_URL, help=f"service base URL (default {DEFAULT_URL})")
        p.set_defaults(func=fn)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
