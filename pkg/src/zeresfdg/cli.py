"""Command-line entry point: ``run``, ``sweep`` and ``verify-golden``.

Exit codes: 0 success, 1 golden mismatch, 2 usage or config error,
3 numerical failure during sampling.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as config_mod
from .errors import ConfigError, SamplingError
from .experiment import (
    GoldenLayoutError,
    execute,
    golden_cases,
    regenerate_case,
    verify_case,
    write_outputs,
)

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

SUMMARY_COLUMNS = ["value", "mode_switches", "final_l2_to_cond", "final_l2_to_uncond",
                   "total_clamp_fraction", "final_mode"]


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _load(path):
    cfg = config_mod.load(path)
    return cfg, Path(path).resolve().parent


def cmd_run(config_path, out=None):
    try:
        cfg, base = _load(config_path)
    except ConfigError as exc:
        _err(f"{config_path}: {exc}")
        return EXIT_USAGE
    try:
        result = execute(cfg, base_dir=base)
    except SamplingError as exc:
        _err(f"numerical failure at step {exc.step_index}: {exc.cause}")
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    out_dir = write_outputs(result, cfg, out or cfg.outputs.dir)
    s = result.summary
    print(f"{out_dir}: {s['steps']} steps, {s['mode_switches']} mode switches, "
          f"L2 to cond {s['final_l2_to_cond']:.6g}")
    return EXIT_OK


def _sweep_one(job):
    cfg_dict, base, sub = job
    cfg = config_mod.from_dict(cfg_dict)
    try:
        result = execute(cfg, base_dir=base)
    except SamplingError as exc:
        return {"error": f"step {exc.step_index}: {exc.cause}"}
    write_outputs(result, cfg, sub)
    return result.summary


def parse_values(text):
    items = [v.strip() for v in text.split(",") if v.strip()]
    return [float(v) for v in items]


def cmd_sweep(config_path, axis, values, out=None, workers=1):
    try:
        cfg, base = _load(config_path)
        config_mod.resolve_axis(axis)
        if not values:
            raise ConfigError("--values must list at least one value")
        variants = [cfg.with_knob(axis, v) for v in values]
    except (ConfigError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    root = Path(out or cfg.outputs.dir)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(v.to_dict(), str(base), str(root / f"{axis}={val!r}"))
            for v, val in zip(variants, values)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_sweep_one, jobs))
    else:
        summaries = [_sweep_one(j) for j in jobs]

    rows = []
    for val, summ in zip(values, summaries):
        rows.append({"value": val, **summ})
    (root / "summary.json").write_text(json.dumps({"axis": axis, "rows": rows}, indent=2) + "\n")
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([axis if c == "value" else c for c in SUMMARY_COLUMNS])
        for row in rows:
            w.writerow([repr(row.get(c)) if isinstance(row.get(c), float) else row.get(c, "")
                        for c in SUMMARY_COLUMNS])
    failed = [r for r in rows if "error" in r]
    for r in failed:
        _err(f"{axis}={r['value']}: numerical failure at {r['error']}")
    print(f"{root}: {len(rows)} runs")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_verify_golden(golden_dir, update=False):
    try:
        cases = golden_cases(golden_dir, require_expected=not update)
    except GoldenLayoutError as exc:
        _err(str(exc))
        return EXIT_USAGE
    if update:
        for case in cases:
            regenerate_case(case)
            print(f"regenerated {case}")
        return EXIT_OK
    problems = []
    for case in cases:
        try:
            problems += verify_case(case)
        except GoldenLayoutError as exc:
            _err(str(exc))
            return EXIT_USAGE
        except ConfigError as exc:
            _err(f"{case}: {exc}")
            return EXIT_USAGE
        except SamplingError as exc:
            _err(f"{case}: numerical failure at step {exc.step_index}: {exc.cause}")
            return EXIT_NUMERIC
    if problems:
        for p in problems:
            print(f"MISMATCH {p}")
        return EXIT_MISMATCH
    print(f"{len(cases)} golden case(s) match")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="zeresfdg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides outputs.dir)")

    s = sub.add_parser("sweep", help="run one experiment per value of a numeric knob")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True)
    s.add_argument("--values", required=True, help="comma-separated numbers")
    s.add_argument("--out")
    s.add_argument("--workers", type=int, default=1)

    g = sub.add_parser("verify-golden", help="re-run golden cases and byte-compare outputs")
    g.add_argument("golden_dir", nargs="?", default="golden")
    g.add_argument("--update", action="store_true", help="regenerate expected files instead")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.verb == "run":
        return cmd_run(args.config, args.out)
    if args.verb == "sweep":
        try:
            values = parse_values(args.values)
        except ValueError as exc:
            _err(f"--values: {exc}")
            return EXIT_USAGE
        if args.workers < 1:
            _err("--workers must be >= 1")
            return EXIT_USAGE
        return cmd_sweep(args.config, args.axis, values, args.out, args.workers)
    return cmd_verify_golden(args.golden_dir, args.update)


if __name__ == "__main__":
    sys.exit(main())
