"""Wall-clock measurement harness.

Every measured run is first gated on correctness: the protected execution
must match the reference interpreter's outcome exactly, otherwise the
cell is recorded as failed and skipped.  Timing wraps only the execution
call; parsing and protection happen outside the clock.  Each cell draws
`seeds` independent protection networks and runs `reps` executions per
network; medians are reported rather than means so one noisy rep cannot
skew a row.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import dataclass, field
from importlib import resources

from .guards import coverage_report
from .ir import parse_module
from .ir.interp import reference_interpret
from .ir.phi import eliminate_phis
from .protect import ProtectionConfig, virtualize_module
from .runtime import execute_secure
from .threaded import execute_optimized

MODES = ("secure", "optimized")
ARMS = ("vo", "vo+sc")   # virtualization only, or with checksum guards
TIERS = ("tiny", "check", "bench")


class BenchError(Exception):
    pass


class _CellProblem(Exception):
    """Recorded in the report instead of aborting the whole run."""


def corpus_root():
    return resources.files("vmguard") / "corpus"


def load_manifest() -> dict:
    return json.loads((corpus_root() / "manifest.json").read_text())


def load_program_text(filename: str) -> str:
    return (corpus_root() / filename).read_text()


@dataclass
class BenchmarkConfig:
    programs: tuple[str, ...] = ()       # empty = every program listed
    levels: tuple[int, ...] = (100,)
    modes: tuple[str, ...] = MODES
    arms: tuple[str, ...] = ARMS
    reps: int = 10                       # executions per protection draw
    seeds: int = 5                       # protection draws per cell
    tier: str = "bench"
    seed: int = 1                        # base seed; draw i uses seed + i
    guards_per_checkee: int = 2
    step_limit: int | None = None


@dataclass
class BenchmarkRow:
    program: str
    level: int
    arm: str
    mode: str
    median_seconds: float
    reference_seconds: float
    steps: float                 # median over the protection draws
    guard_execs: float

    @property
    def overhead_pct(self) -> float:
        """Slowdown relative to the plain-IR reference interpreter."""
        return (self.median_seconds / self.reference_seconds - 1.0) * 100.0


@dataclass
class CellFailure:
    program: str
    level: int
    arm: str
    mode: str
    message: str


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    rows: list[BenchmarkRow] = field(default_factory=list)
    failures: list[CellFailure] = field(default_factory=list)

    def row(self, program: str, arm: str, mode: str,
            level: int | None = None) -> BenchmarkRow:
        if level is None:
            if len(self.config.levels) != 1:
                raise KeyError("plan has several levels; pass level=")
            level = self.config.levels[0]
        for r in self.rows:
            if (r.program, r.level, r.arm, r.mode) == (program, level,
                                                       arm, mode):
                return r
        raise KeyError((program, level, arm, mode))

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["program", "level", "arm", "mode", "median_seconds",
                    "reference_seconds", "overhead_pct", "steps",
                    "guard_execs"])
        for r in self.rows:
            w.writerow([r.program, r.level, r.arm, r.mode,
                        f"{r.median_seconds:.6f}",
                        f"{r.reference_seconds:.6f}",
                        f"{r.overhead_pct:.2f}", r.steps, r.guard_execs])
        return out.getvalue()

    def format_table(self) -> str:
        header = (f"{'program':<11}{'level':>6}{'arm':>7}  {'mode':<11}"
                  f"{'median s':>10}{'ref s':>10}{'overhead':>10}"
                  f"{'steps':>11}{'guards':>9}")
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.program:<11}{r.level:>6}{r.arm:>7}  {r.mode:<11}"
                f"{r.median_seconds:>10.4f}{r.reference_seconds:>10.4f}"
                f"{r.overhead_pct:>9.1f}%{r.steps:>11}{r.guard_execs:>9}")
        for f in self.failures:
            where = "/".join(p for p in (f.arm, f.mode) if p)
            lines.append(f"failed: {f.program} level {f.level} {where}: "
                         f"{f.message}")
        return "\n".join(lines)


def _sample(thunk, reps: int):
    """Raw wall times of `reps` invocations plus the last result."""
    times = []
    result = None
    for _ in range(reps):
        t0 = time.perf_counter()
        result = thunk()
        times.append(time.perf_counter() - t0)
    return times, result


def measure(thunk, reps: int):
    """Median wall time of `reps` invocations plus the last result."""
    times, result = _sample(thunk, reps)
    return statistics.median(times), result


def _validate_plan(cfg: BenchmarkConfig) -> None:
    for mode in cfg.modes:
        if mode not in MODES:
            raise BenchError(f"unknown mode {mode!r}")
    for arm in cfg.arms:
        if arm not in ARMS:
            raise BenchError(f"unknown protection arm {arm!r}")
    for level in cfg.levels:
        if not 1 <= level <= 100:
            raise BenchError(f"protection level {level} outside [1, 100]")
    if cfg.tier not in TIERS:
        raise BenchError(f"unknown input tier {cfg.tier!r}")
    if cfg.reps < 1 or cfg.seeds < 1:
        raise BenchError("reps and seeds must be at least 1")


def run_benchmarks(cfg: BenchmarkConfig) -> BenchmarkReport:
    manifest = load_manifest()
    by_name = {p["name"]: p for p in manifest["programs"]}
    names = cfg.programs or tuple(p["name"] for p in manifest["programs"])
    _validate_plan(cfg)
    limit = {} if cfg.step_limit is None else \
        {"step_limit": cfg.step_limit}

    report = BenchmarkReport(config=cfg)
    for name in names:
        prog = by_name.get(name)
        if prog is None:
            raise BenchError(f"no corpus program named {name!r}")
        module = parse_module(load_program_text(prog["file"]))
        flat = eliminate_phis(module)
        inputs = prog["inputs"][cfg.tier]
        t_ref, ref = measure(
            lambda: reference_interpret(flat, "main", inputs, **limit),
            cfg.reps)
        if ref.status != "normal":
            report.failures.append(CellFailure(
                name, 0, "", "", f"reference run ended in {ref.status}"))
            continue
        expect = prog["expect"][cfg.tier]
        if ref.value != expect["value"] or ref.output != expect["output"]:
            report.failures.append(CellFailure(
                name, 0, "", "", "reference disagrees with manifest"))
            continue

        for level in cfg.levels:
            for arm in cfg.arms:
                bundles = [virtualize_module(module, ProtectionConfig(
                    seed=cfg.seed + i, level=level,
                    guards_per_checkee=cfg.guards_per_checkee,
                    enable_guards=(arm == "vo+sc")))
                    for i in range(cfg.seeds)]
                for mode in cfg.modes:
                    executor = (execute_secure if mode == "secure"
                                else execute_optimized)
                    times: list[float] = []
                    steps: list[int] = []
                    guards: list[int] = []
                    try:
                        for bundle in bundles:
                            ts, res = _sample(
                                lambda: executor(bundle, inputs, **limit),
                                cfg.reps)
                            if not res.same_outcome(ref):
                                raise _CellProblem(
                                    "protected run diverged from reference"
                                    f" ({res.status} vs {ref.status})")
                            times.extend(ts)
                            steps.append(res.steps)
                            guards.append(res.guard_execs)
                    except _CellProblem as err:
                        report.failures.append(CellFailure(
                            name, level, arm, mode, str(err)))
                        continue
                    report.rows.append(BenchmarkRow(
                        program=name, level=level, arm=arm, mode=mode,
                        median_seconds=statistics.median(times),
                        reference_seconds=t_ref,
                        steps=statistics.median(steps),
                        guard_execs=statistics.median(guards)))
    return report


# ---- static coverage across the corpus -------------------------------------

def coverage_table(level: int = 100, guards_per_checkee: int = 2,
                   seed: int = 1, programs: tuple[str, ...] = ()) -> list:
    """Per-program coverage at one protection setting: instruction record
    count, function count, how many records live in checked functions,
    and that as a percentage."""
    manifest = load_manifest()
    selected = programs or tuple(p["name"] for p in manifest["programs"])
    by_name = {p["name"]: p for p in manifest["programs"]}
    rows = []
    for name in selected:
        prog = by_name.get(name)
        if prog is None:
            raise BenchError(f"no corpus program named {name!r}")
        module = parse_module(load_program_text(prog["file"]))
        bundle = virtualize_module(module, ProtectionConfig(
            seed=seed, level=level,
            guards_per_checkee=guards_per_checkee))
        virtualized = {f.name for f in bundle.virt_functions()}
        summary = coverage_report(module, virtualized,
                                  bundle.edge_names())["summary"]
        rows.append({
            "name": name,
            "records": summary["total_instructions"],
            "functions": len(module.functions),
            "protected": summary["guarded_instructions"],
            "protected_pct": round(summary["guarded_pct"], 1),
        })
    return rows


def format_coverage_table(rows) -> str:
    header = (f"{'name':<12}{'records':>9}{'functions':>11}"
              f"{'protected':>11}{'protected %':>13}")
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['name']:<12}{r['records']:>9}"
                     f"{r['functions']:>11}{r['protected']:>11}"
                     f"{r['protected_pct']:>12.1f}%")
    return "\n".join(lines)


def coverage_to_csv(rows) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=["name", "records", "functions",
                                        "protected", "protected_pct"])
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return out.getvalue()
