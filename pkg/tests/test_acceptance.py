"""End-to-end acceptance gate.

Each test covers one numbered criterion, prints exactly one
"ACCEPTANCE Cn <label>: PASS|FAIL" line on the live terminal, and then
asserts.  Bounds are pinned as module constants next to the criterion
they gate.
"""

import itertools
import statistics

import pytest

from builders import random_bundle
from oracles import xor_fold16
from vmguard.bundle import (PreserveChecksumPair, deserialize, serialize,
                            tamper_bundle)
from vmguard.bench import BenchmarkConfig, run_benchmarks
from vmguard.detect import run_detection
from vmguard.guards import compute_vpa_hash, coverage_report
from vmguard.ir import reference_interpret
from vmguard.network import build_checker_network, in_degrees
from vmguard.protect import ProtectionConfig, virtualize_module
from vmguard.rng import SplitMix64
from vmguard.runtime import execute_secure
from vmguard.threaded import execute_optimized

LEVELS = (10, 25, 50, 100)
MATRIX_SEEDS = (101, 102, 103, 104, 105)

DETECT_PROTECT_SEED = 2024
DETECT_TAMPER_SEED = 31337
DETECT_TRIALS = 200

HASH_ALPHABET = tuple(range(0, 0x10000, 0x1111))   # 16 values over 16 bits
HASH_MAX_LEN = 8
HASH_RANDOM_CASES = 10_000

COLLISION_CASES = 1_000

SPEEDUP_CEILING = 0.75          # optimized median / secure median
GUARD_INCREMENT_CEILING = 100.0  # percent over virtualization alone

COVERAGE_SEEDS = 20
COVERAGE_MEDIAN_FLOOR = 80.0    # percent of instructions guarded

NETWORK_CASES = 1_000
ROUND_TRIP_CASES = 1_000


def verdict(capsys, num: int, label: str, ok: bool, detail: str = ""):
    tail = f"  [{detail}]" if detail else ""
    with capsys.disabled():
        print(f"\nACCEPTANCE C{num} {label}: "
              f"{'PASS' if ok else 'FAIL'}{tail}")
    assert ok, f"C{num} {label} {detail}"


@pytest.fixture(scope="module")
def equivalence_matrix(corpus_flat, manifest):
    """program -> reference result, and (program, level, seed, mode) ->
    protected result, all on the mid-tier inputs."""
    refs = {}
    cells = {}
    for entry in manifest["programs"]:
        name, inputs = entry["name"], entry["inputs"]["check"]
        module = corpus_flat[name]
        refs[name] = reference_interpret(module, "main", inputs)
        for level in LEVELS:
            for seed in MATRIX_SEEDS:
                bundle = virtualize_module(
                    module, ProtectionConfig(seed=seed, level=level))
                cells[(name, level, seed, "secure")] = \
                    execute_secure(bundle, inputs)
                cells[(name, level, seed, "optimized")] = \
                    execute_optimized(bundle, inputs)
    return refs, cells


def test_c1_protected_runs_match_the_reference(equivalence_matrix,
                                               manifest, capsys):
    refs, cells = equivalence_matrix
    bad = []
    for (name, level, seed, mode), got in cells.items():
        if not got.same_outcome(refs[name]):
            bad.append((name, level, seed, mode))
    verdict(capsys, 1, "semantic preservation across the protection matrix",
            not bad,
            f"{len(cells)} runs, {len(bad)} mismatches" +
            (f", first {bad[0]}" if bad else ""))


def test_c2_both_engines_agree_cell_by_cell(equivalence_matrix, capsys):
    refs, cells = equivalence_matrix
    bad = []
    checked = 0
    for (name, level, seed, mode) in cells:
        if mode != "secure":
            continue
        a = cells[(name, level, seed, "secure")]
        b = cells[(name, level, seed, "optimized")]
        checked += 1
        if not (a.same_outcome(b)
                and a.guard_execs == b.guard_execs
                and a.guard_edges == b.guard_edges):
            bad.append((name, level, seed))
    verdict(capsys, 2, "engine equivalence incl. guard execution counts",
            not bad,
            f"{checked} cells, {len(bad)} disagreements")


def test_c3_single_element_tampers_never_slip_past_the_guards(
        corpus_flat, manifest, capsys):
    missed = covered = roots = 0
    per_program = []
    for entry in manifest["programs"]:
        name, inputs = entry["name"], entry["inputs"]["check"]
        bundle = virtualize_module(
            corpus_flat[name],
            ProtectionConfig(seed=DETECT_PROTECT_SEED, level=100,
                             guards_per_checkee=2))
        summary = run_detection(bundle, inputs, trials=DETECT_TRIALS,
                                seed=DETECT_TAMPER_SEED, program=name)
        covered += summary.covered_trials
        missed += summary.covered_missed
        roots += summary.root_trials
        per_program.append(f"{name}:{summary.covered_missed}")
    verdict(capsys, 3, "tamper detection on checked functions",
            missed == 0,
            f"{covered} covered trials, {missed} missed; "
            f"{roots} root-function trials reported separately")


def test_c4_every_single_element_change_alters_the_checksum(capsys):
    # the short-input path folds element by element, so the checksum of a
    # stream depends only on its multiset of values; enumerating sorted
    # tuples therefore covers every stream of length <= 8 over the alphabet
    table = {}
    oracle_clashes = 0
    for length in range(HASH_MAX_LEN + 1):
        for m in itertools.combinations_with_replacement(HASH_ALPHABET,
                                                         length):
            h = compute_vpa_hash(m)
            if h != xor_fold16(m):
                oracle_clashes += 1
            table[m] = h

    collisions = 0
    checks = 0
    for m, h in table.items():
        for a in set(m):
            i = m.index(a)
            rest = m[:i] + m[i + 1:]
            for b in HASH_ALPHABET:
                if b == a:
                    continue
                checks += 1
                if table[tuple(sorted(rest + (b,)))] == h:
                    collisions += 1

    # spot-check the order claim directly: mutate in place, recompute
    rng = SplitMix64(404)
    keys = list(table)
    for _ in range(20_000):
        m = keys[rng.randrange(len(keys))]
        if not m:
            continue
        i = rng.randrange(len(m))
        b = HASH_ALPHABET[rng.randrange(16)]
        if b == m[i]:
            continue
        direct = compute_vpa_hash(m[:i] + (b,) + m[i + 1:])
        if direct == table[m]:
            collisions += 1
        checks += 1

    # large random streams exercise the wide folding path
    for case in range(HASH_RANDOM_CASES):
        n = 64 + rng.randrange(1985)
        vpa = [rng.randrange(0x10000) for _ in range(n)]
        before = compute_vpa_hash(vpa)
        i = rng.randrange(n)
        delta = 1 + rng.randrange(0xFFFF)
        vpa[i] ^= delta
        checks += 1
        if compute_vpa_hash(vpa) == before:
            collisions += 1

    verdict(capsys, 4, "single-element checksum sensitivity",
            collisions == 0 and oracle_clashes == 0,
            f"{len(table)} exhaustive classes, {checks} mutation checks, "
            f"{collisions} collisions, {oracle_clashes} oracle clashes")


def test_c5_compensating_pairs_always_collide(corpus_flat, capsys):
    bundle = virtualize_module(corpus_flat["fib"],
                               ProtectionConfig(seed=1))
    originals = {f.name: compute_vpa_hash(f.vpa)
                 for f in bundle.virt_functions()}
    rng = SplitMix64(5150)
    collided = 0
    for _ in range(COLLISION_CASES):
        mutated, changes = tamper_bundle(bundle, PreserveChecksumPair(),
                                         rng)
        target = changes[0]["function"]
        assert len(changes) == 2
        vfn = mutated.function(target)
        if compute_vpa_hash(vfn.vpa) == originals[target]:
            collided += 1
    verdict(capsys, 5, "checksum-preserving pairs evade the hash",
            collided == COLLISION_CASES,
            f"{collided}/{COLLISION_CASES} unchanged checksums")


def test_c6_pre_decoding_beats_per_step_dispatch(capsys):
    report = run_benchmarks(BenchmarkConfig(
        programs=("loop_sum",), arms=("vo+sc",), reps=3, seeds=1,
        tier="bench", seed=7, levels=(100,), guards_per_checkee=2))
    assert not report.failures
    secure = report.row("loop_sum", "vo+sc", "secure").median_seconds
    optimized = report.row("loop_sum", "vo+sc", "optimized").median_seconds
    ratio = optimized / secure
    verdict(capsys, 6, "threaded engine speedup on the loop benchmark",
            ratio <= SPEEDUP_CEILING,
            f"ratio {ratio:.3f} (bound {SPEEDUP_CEILING}), "
            f"secure {secure:.3f}s, optimized {optimized:.3f}s")


def test_c7_guards_cost_at_most_as_much_again_as_virtualization(capsys):
    report = run_benchmarks(BenchmarkConfig(
        modes=("secure",), reps=5, seeds=1, tier="check", seed=7,
        levels=(100,), guards_per_checkee=2))
    assert not report.failures
    worst = ("", -1.0)
    bad = []
    for program in {row.program for row in report.rows}:
        vo = report.row(program, "vo", "secure").median_seconds
        sc = report.row(program, "vo+sc", "secure").median_seconds
        increment = 100.0 * (sc - vo) / vo
        if increment > worst[1]:
            worst = (program, increment)
        if increment > GUARD_INCREMENT_CEILING:
            bad.append((program, round(increment, 1)))
    verdict(capsys, 7, "guard overhead increment per program",
            not bad,
            f"worst {worst[0]} at {worst[1]:.1f}% "
            f"(bound {GUARD_INCREMENT_CEILING:.0f}%)" +
            (f", over: {bad}" if bad else ""))


def test_c8_guard_coverage_is_high_and_gaps_are_only_roots(
        corpus_raw, manifest, capsys):
    pcts = []
    non_root_gaps = []
    for entry in manifest["programs"]:
        module = corpus_raw[entry["name"]]
        for seed in range(1, COVERAGE_SEEDS + 1):
            bundle = virtualize_module(
                module, ProtectionConfig(seed=seed, level=100,
                                         guards_per_checkee=2))
            virt = {f.name for f in bundle.virt_functions()}
            rep = coverage_report(module, virt, bundle.edge_names())
            pct = rep["summary"]["guarded_pct"]
            pcts.append(pct)
            if pct < 100.0:
                deg = in_degrees([f.name for f in bundle.functions],
                                 bundle.edge_names())
                for row in rep["rows"]:
                    if row["virtualized"] and row["checkers"] == 0 \
                            and deg[row["function"]] != 0:
                        non_root_gaps.append((entry["name"], seed,
                                              row["function"]))
    med = statistics.median(pcts)
    verdict(capsys, 8, "instruction coverage of the checker network",
            med >= COVERAGE_MEDIAN_FLOOR and not non_root_gaps,
            f"median {med:.1f}% over {len(pcts)} reports "
            f"(floor {COVERAGE_MEDIAN_FLOOR:.0f}%), "
            f"{len(non_root_gaps)} non-root gaps")


def _acyclic_by_kahn(n: int, edges) -> bool:
    indeg = [0] * n
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        indeg[b] += 1
    queue = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while queue:
        node = queue.pop()
        seen += 1
        for nxt in adj[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    return seen == n


def test_c9_builds_are_deterministic_and_networks_acyclic(
        corpus_flat, capsys):
    unstable = []
    for name, module in corpus_flat.items():
        once = serialize(virtualize_module(module,
                                           ProtectionConfig(seed=99)))
        twice = serialize(virtualize_module(module,
                                            ProtectionConfig(seed=99)))
        if once != twice:
            unstable.append(name)

    rng = SplitMix64(777)
    cyclic = 0
    for _ in range(NETWORK_CASES):
        n = 1 + rng.randrange(10)
        names = [f"f{i}" for i in range(n)]
        eligible = {nm for nm in names if rng.randrange(4)}
        quota = 1 + rng.randrange(5)
        edges = build_checker_network(names, eligible, quota,
                                     SplitMix64(rng.next_u64()))
        index = {nm: i for i, nm in enumerate(names)}
        pairs = [(index[e.checker], index[e.checkee]) for e in edges]
        if not _acyclic_by_kahn(n, pairs):
            cyclic += 1
    verdict(capsys, 9, "deterministic builds and acyclic checker graphs",
            not unstable and cyclic == 0,
            f"{len(corpus_flat)} double builds, {NETWORK_CASES} random "
            f"networks, {cyclic} cycles")


def test_c10_serialization_is_a_byte_exact_fixed_point(corpus_flat,
                                                       capsys):
    broken = 0
    total = 0
    for module in corpus_flat.values():
        for seed in (1, 2):
            blob = serialize(virtualize_module(module,
                                               ProtectionConfig(seed=seed)))
            total += 1
            if serialize(deserialize(blob)) != blob:
                broken += 1
    rng = SplitMix64(31415)
    for _ in range(ROUND_TRIP_CASES):
        blob = serialize(random_bundle(rng))
        total += 1
        if serialize(deserialize(blob)) != blob:
            broken += 1
    verdict(capsys, 10, "wire-format round trips",
            broken == 0, f"{total} bundles, {broken} unstable")
