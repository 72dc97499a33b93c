"""Command-line harness: ``hrwifi run | sweep | verify | validate | preset``."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

from .engine import InvariantViolation, SimulationError
from .metrics import CSV_COLUMNS, flow_csv_rows, write_csv
from .topology import PRESETS, SWEEPABLE, ScenarioError, build, load_config, preset, validate, with_overrides

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _load(config: str) -> dict:
    try:
        return load_config(config)
    except FileNotFoundError as exc:
        raise ScenarioError([f"config: {exc}"]) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"config: invalid JSON ({exc})"]) from None


def _report_violations(violations: list[str]) -> int:
    print("invalid scenario:", file=sys.stderr)
    for v in violations:
        print(f"  - {v}", file=sys.stderr)
    return EXIT_CONFIG


def run_once(raw: dict, seed: Optional[int], out: Optional[Path]) -> dict:
    sim = build(raw, seed=seed)
    sim.run()
    return sim.write_outputs(out) if out is not None else sim.report()


def cmd_run(args: argparse.Namespace) -> int:
    try:
        raw = _load(args.config)
        violations = validate(raw)
        if violations:
            return _report_violations(violations)
    except ScenarioError as exc:
        return _report_violations(exc.violations)
    out = Path(args.out)
    trace = args.trace or args.verify is not None
    sim = build(raw, seed=args.seed, trace=trace)
    try:
        sim.run()
    except (InvariantViolation, SimulationError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        record = getattr(exc, "record", None)
        tail = sim.net.trace.tail(20) + ([record.format()] if record is not None else [])
        for line in tail:
            print(line, file=sys.stderr)
        if trace:
            out.mkdir(parents=True, exist_ok=True)
            (out / "trace.tsv").write_text(sim.net.trace.text())
        return EXIT_INVARIANT
    report = sim.write_outputs(out, trace=trace, frames=args.frames)
    for fid, f in report["flows"].items():
        p95 = "-" if f["latency_p95_ns"] is None else f"{f['latency_p95_ns'] / 1000:g}us"
        print(f"{fid}: offered={f['offered']} delivered={f['delivered']} "
              f"loss={f['loss_ratio']:.6f} p95={p95} "
              f"dups={f['duplicates_discarded']} ytag={f['ytag_relays']}")
    print(f"wrote {out / 'report.json'} and {out / 'report.csv'}"
          + (f" and {out / 'trace.tsv'}" if trace else ""))
    if args.verify is not None:
        return verify_files(out / "trace.tsv", Path(args.verify))
    return EXIT_OK


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_grid(items: Sequence[str]) -> list[tuple[str, list[Any]]]:
    grid = []
    for item in items:
        if "=" not in item:
            raise KeyError(item)
        name, _, values = item.partition("=")
        name = name.strip()
        if name not in SWEEPABLE:
            raise KeyError(name)
        grid.append((name, [_parse_value(v) for v in values.split(",") if v.strip()]))
    return grid


def grid_points(grid: list[tuple[str, list[Any]]]) -> list[dict[str, Any]]:
    if not grid:
        return []
    names = [g[0] for g in grid]
    return [dict(zip(names, combo)) for combo in itertools.product(*(g[1] for g in grid))]


def _sweep_job(job: tuple) -> tuple[int, int, dict]:
    index, seed, raw, out = job
    return index, seed, run_once(raw, seed, Path(out))


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        raw = _load(args.config)
    except ScenarioError as exc:
        return _report_violations(exc.violations)
    try:
        grid = parse_grid(args.sweep or [])
    except KeyError as exc:
        print(f"unknown sweep parameter {exc.args[0]!r}; choose from {', '.join(SWEEPABLE)}",
              file=sys.stderr)
        return EXIT_CONFIG
    points = grid_points(grid)
    base_seed = args.seed if args.seed is not None else int(raw.get("seed", 1))
    seeds = [base_seed + i for i in range(args.seeds)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, point in enumerate(points):
        variant = with_overrides(raw, **point)
        violations = validate(variant)
        if violations:
            print(f"grid point {point}:", file=sys.stderr)
            return _report_violations(violations)
        for seed in seeds:
            jobs.append((i, seed, variant, str(out / "runs" / f"p{i:03d}" / f"seed{seed}")))
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_sweep_job, jobs))
        else:
            results = [_sweep_job(j) for j in jobs]
    except (InvariantViolation, SimulationError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    names = [g[0] for g in grid]
    rows = []
    for index, seed, report in sorted(results, key=lambda r: (r[0], r[1])):
        extra = {"point": index, "seed": seed, **points[index]}
        rows.extend(flow_csv_rows(report, extra))
    columns = ["point"] + names + ["seed"] + CSV_COLUMNS
    (out / "sweep.csv").write_text(write_csv(rows, columns))
    print(f"{len(points)} grid points x {len(seeds)} seeds -> {out / 'sweep.csv'}")
    return EXIT_OK


def verify_files(trace: Path, golden: Path) -> int:
    for p in (trace, golden):
        if not p.is_file():
            print(f"missing file: {p}", file=sys.stderr)
            return EXIT_CONFIG
    a = trace.read_bytes()
    b = golden.read_bytes()
    if a == b:
        print(f"trace matches {golden}")
        return EXIT_OK
    la, lb = a.decode().splitlines(), b.decode().splitlines()
    for n, (x, y) in enumerate(itertools.zip_longest(la, lb), start=1):
        if x != y:
            print(f"traces diverge at line {n}:", file=sys.stderr)
            print(f"  trace : {x if x is not None else '<end of file>'}", file=sys.stderr)
            print(f"  golden: {y if y is not None else '<end of file>'}", file=sys.stderr)
            break
    else:
        print("traces differ in line endings or trailing bytes", file=sys.stderr)
    return EXIT_MISMATCH


def cmd_verify(args: argparse.Namespace) -> int:
    return verify_files(Path(args.trace), Path(args.golden))


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        violations = validate(_load(args.config))
    except ScenarioError as exc:
        violations = exc.violations
    if violations:
        return _report_violations(violations)
    print("ok")
    return EXIT_OK


def cmd_preset(args: argparse.Namespace) -> int:
    if args.name is None:
        print("\n".join(PRESETS))
        return EXIT_OK
    try:
        print(json.dumps(preset(args.name), indent=2))
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrwifi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--config", required=True, help="JSON file or preset name")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--trace", action="store_true", help="write trace.tsv")
    p.add_argument("--frames", action="store_true", help="write per-frame frames.csv")
    p.add_argument("--out", default="out")
    p.add_argument("--verify", metavar="GOLDEN", default=None,
                   help="compare the trace against a golden file (implies --trace)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid over several seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", action="append", metavar="FIELD=V1,V2,...")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="first seed (default: config seed)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out/sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="compare a trace with a golden trace")
    p.add_argument("trace")
    p.add_argument("golden")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("preset", help="list presets or print one as JSON")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_preset)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
