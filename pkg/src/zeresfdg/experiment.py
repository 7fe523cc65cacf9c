"""Run configured experiments, write their artifacts, and check golden outputs."""

from __future__ import annotations

import csv
import io
import json
import math
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import patterns
from .config import load
from .controller import Mode
from .qsilk import DepthMap
from .sampler import SigmaSchedule, StepTrace, ToyModel, l2_distance, mode_switches, run
from .tensor import load_tensor, save_tensor

TRACE_CSV = "trace.csv"
TRACE_JSON = "trace.json"
FINAL_TENSOR = "final.bin"
SUMMARY_JSON = "summary.json"


def _image(spec, shape, base_dir):
    if spec is None:
        return None
    if spec.path is not None:
        path = Path(spec.path)
        if not path.is_absolute():
            path = Path(base_dir) / path
        return load_tensor(path)
    return patterns.make(spec.pattern, shape, **spec.params)


def build_inputs(cfg, base_dir="."):
    """Return (model, schedule, mask, depth) for a config."""
    r = cfg.run
    shape = tuple(r.shape)
    model = ToyModel(
        _image(cfg.model.target_cond, shape, base_dir),
        _image(cfg.model.target_uncond, shape, base_dir),
        noise_seed=r.seed,
    )
    schedule = SigmaSchedule.karras(r.steps, r.sigma_min, r.sigma_max, r.schedule_rho)
    mask_shape = (shape[0], 1, shape[2], shape[3])
    mask = _image(cfg.model.mask, mask_shape, base_dir)
    depth = _image(cfg.model.depth, mask_shape, base_dir)
    return model, schedule, mask, (DepthMap(depth) if depth is not None else None)


@dataclass
class RunResult:
    final: object
    traces: list
    summary: dict


def execute(cfg, base_dir="."):
    model, schedule, mask, depth = build_inputs(cfg, base_dir)
    force = Mode(cfg.run.force_mode) if cfg.run.force_mode else None
    final, traces = run(model, schedule, cfg.guidance_config(), cfg.qsilk_config(),
                        mask=mask, depth=depth, force_mode=force)
    summary = {
        "steps": len(traces),
        "final_l2_to_cond": l2_distance(final, model.target_cond),
        "final_l2_to_uncond": l2_distance(final, model.target_uncond),
        "mode_switches": mode_switches(traces),
        "total_clamp_fraction": math.fsum(t.clamp_fraction for t in traces) / len(traces),
        "final_mode": traces[-1].mode,
        "nan_free": bool(final.is_finite()),
    }
    return RunResult(final, traces, summary)


def _fmt(v):
    # repr gives the shortest string that round-trips, so text goldens stay stable
    return repr(v) if isinstance(v, float) else str(v)


def traces_csv(traces):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(StepTrace.columns())
    for t in traces:
        w.writerow([_fmt(v) for v in t.to_dict().values()])
    return buf.getvalue()


def write_outputs(result, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    o = cfg.outputs
    if o.csv:
        (out / TRACE_CSV).write_text(traces_csv(result.traces))
    if o.json:
        rows = [t.to_dict() for t in result.traces]
        (out / TRACE_JSON).write_text(json.dumps(rows, indent=1) + "\n")
    if o.tensors:
        save_tensor(result.final, out / FINAL_TENSOR)
    (out / SUMMARY_JSON).write_text(json.dumps(result.summary, indent=2) + "\n")
    return out


# -- golden files ------------------------------------------------------------

GOLDEN_CONFIG = "config.json"
GOLDEN_EXPECTED = "expected"


class GoldenLayoutError(Exception):
    """A golden case is missing its config or expected files."""


def golden_cases(golden_dir, require_expected=True):
    root = Path(golden_dir)
    if not root.is_dir():
        raise GoldenLayoutError(f"golden directory {root} does not exist")
    cases = sorted(p for p in root.iterdir() if p.is_dir())
    if not cases:
        raise GoldenLayoutError(f"no golden cases under {root}")
    for case in cases:
        if not (case / GOLDEN_CONFIG).is_file():
            raise GoldenLayoutError(f"{case}: missing {GOLDEN_CONFIG}")
        exp = case / GOLDEN_EXPECTED
        if require_expected and (not exp.is_dir() or not any(exp.iterdir())):
            raise GoldenLayoutError(f"{case}: missing {GOLDEN_EXPECTED}/ files")
    return cases


def first_difference(name, expected, actual):
    """Human-readable location of the first difference between two file payloads."""
    if name.endswith(".csv"):
        e_lines = expected.decode().splitlines()
        a_lines = actual.decode().splitlines()
        for k, (e, a) in enumerate(zip(e_lines, a_lines)):
            if e != a:
                if k == 0:
                    return "header differs"
                step = e.split(",", 1)[0]
                return f"first difference at step {step} (line {k + 1})"
        return f"row count differs ({len(e_lines) - 1} expected, {len(a_lines) - 1} actual)"
    if name.endswith(".bin"):
        if len(expected) != len(actual):
            return f"size differs ({len(expected)} vs {len(actual)} bytes)"
        for k in range(0, len(expected), 4):
            if expected[k:k + 4] != actual[k:k + 4]:
                return f"first difference at element {k // 4}"
    for k, (e, a) in enumerate(zip(expected, actual)):
        if e != a:
            return f"first difference at byte {k}"
    return f"size differs ({len(expected)} vs {len(actual)} bytes)"


def verify_case(case_dir):
    """Re-run one golden case; returns a list of mismatch messages (empty when all match)."""
    case_dir = Path(case_dir)
    cfg = load(case_dir / GOLDEN_CONFIG)
    result = execute(cfg, base_dir=case_dir)
    problems = []
    with tempfile.TemporaryDirectory() as tmp:
        write_outputs(result, cfg, tmp)
        exp_dir = case_dir / GOLDEN_EXPECTED
        missing = sorted(f.name for f in Path(tmp).iterdir() if not (exp_dir / f.name).is_file())
        if missing:
            raise GoldenLayoutError(f"{case_dir}: expected/ lacks {', '.join(missing)}")
        for exp_file in sorted((case_dir / GOLDEN_EXPECTED).iterdir()):
            act_file = Path(tmp) / exp_file.name
            if not act_file.exists():
                problems.append(f"{case_dir.name}/{exp_file.name}: not produced by the run")
                continue
            e, a = exp_file.read_bytes(), act_file.read_bytes()
            if e != a:
                where = first_difference(exp_file.name, e, a)
                problems.append(f"{case_dir.name}/{exp_file.name}: {where}")
    return problems


def regenerate_case(case_dir):
    """Overwrite a case's expected/ files from its config."""
    case_dir = Path(case_dir)
    cfg = load(case_dir / GOLDEN_CONFIG)
    result = execute(cfg, base_dir=case_dir)
    exp = case_dir / GOLDEN_EXPECTED
    if exp.exists():
        shutil.rmtree(exp)
    write_outputs(result, cfg, exp)
    return exp


def golden_case_name(cfg, label="default"):
    q = cfg.qsilk_config()
    return f"{label}_am{q.alpha_max!r}_tf{q.tail_fraction!r}"
