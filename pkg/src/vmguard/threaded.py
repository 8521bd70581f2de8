"""Pre-decoding execution engine.

Each function's encoded stream is decoded once per run into positional
records whose operand cells, type widths and successor links are baked
into closures; the dispatch loop then just indexes a list.  That removes
the per-step opcode lookup, operand fetch and counter bounds check the
checked engine pays for, at the cost of observing corruption lazily:

  - structural damage (unknown opcode, truncated record, branch into the
    middle of a record) is refused up front when decoding, with the same
    signal kinds the checked engine raises;
  - damage to cell offsets or region bounds is baked in and surfaces, if
    at all, as wrong results or traps rather than signals;
  - the encoded streams themselves stay monitored: every checksum record
    re-hashes its target's live stream on every execution, so mutation
    after decode is still caught.
"""

from __future__ import annotations

from dataclasses import dataclass

from .arith import (TrapError, ashr, cast, lshr, sdiv, shl, srem, to_signed)
from .bundle import ProtectedBundle, VirtFunction
from .execstate import (DEFAULT_STEP_LIMIT, LOAD_BOUNDS_REASON,
                        STEP_LIMIT_REASON, STORE_BOUNDS_REASON, ExecContext)
from .guards import compute_vpa_hash
from .risa import HandlerSpec
from .runtime import (HASH_MISMATCH, INVALID_OPCODE, INVALID_REFERENCE,
                      PC_ESCAPE, TamperSignal, call_function,
                      execute_with_engine, respond)


@dataclass
class ThreadedRecord:
    """One decoded record: where it sits, what it does, which cells it
    touches, and where control continues (ordinal, (true, false) pair for
    conditional branches, None for returns)."""

    offset: int
    spec: HandlerSpec
    operands: tuple[int, ...]
    successor: int | tuple[int, int] | None

    @property
    def kind(self) -> str:
        return self.spec.kind


def pre_decode(vfn: VirtFunction) -> list[ThreadedRecord]:
    """Split a stream into records and resolve every control edge to a
    record ordinal.  Raises TamperSignal if the stream does not decode as
    a branch-consistent record sequence."""
    vpa = vfn.vpa
    spec_of = vfn.risa.spec_of
    n = len(vpa)
    walked: list[tuple[int, HandlerSpec]] = []
    ordinal_at: dict[int, int] = {}
    i = 0
    while i < n:
        spec = spec_of.get(vpa[i])
        if spec is None:
            raise TamperSignal(
                INVALID_OPCODE, f"@{vfn.name}: element {i} holds "
                f"{vpa[i]:#06x}, which names no handler")
        if i + spec.record_len > n:
            raise TamperSignal(
                PC_ESCAPE, f"@{vfn.name}: record at {i} ({spec.kind}) "
                "runs past the end of the stream")
        ordinal_at[i] = len(walked)
        walked.append((i, spec))
        i += spec.record_len
    if not walked:
        raise TamperSignal(PC_ESCAPE, f"@{vfn.name}: stream is empty")

    records = []
    for ordinal, (start, spec) in enumerate(walked):
        k = spec.kind
        ops = tuple(vpa[start + 1:start + spec.record_len])
        succ: int | tuple[int, int] | None
        if k == "ret":
            succ = None
        elif k == "br":
            succ = ordinal_at.get(ops[0])
            if succ is None:
                raise TamperSignal(
                    PC_ESCAPE, f"@{vfn.name}: branch at {start} targets "
                    f"element {ops[0]}, which is not a record boundary")
        elif k == "brcond":
            t, f = ordinal_at.get(ops[1]), ordinal_at.get(ops[2])
            if t is None or f is None:
                raise TamperSignal(
                    PC_ESCAPE, f"@{vfn.name}: branch at {start} targets a "
                    "non-boundary element")
            succ = (t, f)
        else:
            succ = ordinal + 1
            if succ == len(walked):
                raise TamperSignal(
                    PC_ESCAPE, f"@{vfn.name}: stream ends in a "
                    "non-terminating record")
        records.append(ThreadedRecord(start, spec, ops, succ))
    return records


_WRAPPING = {
    "add": lambda x, y, m: (x + y) & m,
    "sub": lambda x, y, m: (x - y) & m,
    "mul": lambda x, y, m: (x * y) & m,
    "and": lambda x, y, m: x & y,
    "or": lambda x, y, m: x | y,
    "xor": lambda x, y, m: x ^ y,
}

_TRAPPING = {"sdiv": sdiv, "srem": srem, "shl": shl, "lshr": lshr,
             "ashr": ashr}

_COMPARE = {
    "eq": lambda x, y: x == y, "ne": lambda x, y: x != y,
    "slt": lambda x, y: x < y, "sle": lambda x, y: x <= y,
    "sgt": lambda x, y: x > y, "sge": lambda x, y: x >= y,
    "ult": lambda x, y: x < y, "ule": lambda x, y: x <= y,
    "ugt": lambda x, y: x > y, "uge": lambda x, y: x >= y,
}


def _compile_record(bundle: ProtectedBundle, vfn: VirtFunction,
                    rec: ThreadedRecord, ctx: ExecContext, engine):
    spec = rec.spec
    k = spec.kind
    ops = rec.operands
    s = rec.successor
    size = len(vfn.image)

    def cell(off: int, width: int) -> int:
        """Validate one baked cell reference; corrupt offsets are refused
        here so the hot loop never bounds-checks them."""
        if off + width > size:
            raise TamperSignal(
                INVALID_REFERENCE, f"@{vfn.name}: record at {rec.offset} "
                "references a cell outside the image")
        return off

    if k in ("const", "alloca", "br"):
        return lambda vm: s

    if k in _WRAPPING:
        op = _WRAPPING[k]
        w = spec.result_type.width
        a, b, r = (cell(o, w) for o in ops)
        m = (1 << spec.result_type.bits) - 1

        def run(vm):
            vm[r:r + w] = op(int.from_bytes(vm[a:a + w], "little"),
                             int.from_bytes(vm[b:b + w], "little"),
                             m).to_bytes(w, "little")
            return s
        return run

    if k in _TRAPPING:
        op = _TRAPPING[k]
        bits = spec.result_type.bits
        w = spec.result_type.width
        a, b, r = (cell(o, w) for o in ops)

        def run(vm):
            vm[r:r + w] = op(int.from_bytes(vm[a:a + w], "little"),
                             int.from_bytes(vm[b:b + w], "little"),
                             bits).to_bytes(w, "little")
            return s
        return run

    if k.startswith("icmp."):
        pred = k.split(".", 1)[1]
        cmp = _COMPARE[pred]
        bits = spec.operand_types[0].bits
        w = spec.operand_types[0].width
        a, b = cell(ops[0], w), cell(ops[1], w)
        r = cell(ops[2], 1)
        if pred in ("slt", "sle", "sgt", "sge"):
            def run(vm):
                x = to_signed(int.from_bytes(vm[a:a + w], "little"), bits)
                y = to_signed(int.from_bytes(vm[b:b + w], "little"), bits)
                vm[r] = 1 if cmp(x, y) else 0
                return s
        else:
            def run(vm):
                vm[r] = 1 if cmp(int.from_bytes(vm[a:a + w], "little"),
                                 int.from_bytes(vm[b:b + w], "little")) else 0
                return s
        return run

    if k == "select":
        w = spec.result_type.width
        c = cell(ops[0], 1)
        a, b, r = (cell(o, w) for o in ops[1:])

        def run(vm):
            p = a if vm[c] else b
            vm[r:r + w] = vm[p:p + w]
            return s
        return run

    if k in ("zext", "sext", "trunc"):
        src_tag, dst_tag = spec.operand_types[0], spec.result_type
        sw, dw = src_tag.width, dst_tag.width
        a, r = cell(ops[0], sw), cell(ops[1], dw)

        def run(vm):
            v = cast(k, int.from_bytes(vm[a:a + sw], "little"),
                     src_tag, dst_tag)
            vm[r:r + dw] = v.to_bytes(dw, "little")
            return s
        return run

    if k == "load":
        ibits = spec.operand_types[0].bits
        iw = spec.operand_types[0].width
        w = spec.result_type.width
        base, count = ops[0], ops[1]
        ix, r = cell(ops[2], iw), cell(ops[3], w)

        def run(vm):
            i = to_signed(int.from_bytes(vm[ix:ix + iw], "little"), ibits)
            addr = base + i * w
            if not 0 <= i < count or addr + w > size:
                raise TrapError(LOAD_BOUNDS_REASON)
            vm[r:r + w] = vm[addr:addr + w]
            return s
        return run

    if k == "store":
        vw = spec.operand_types[0].width
        ibits = spec.operand_types[1].bits
        iw = spec.operand_types[1].width
        v, ix = cell(ops[0], vw), cell(ops[3], iw)
        base, count = ops[1], ops[2]

        def run(vm):
            i = to_signed(int.from_bytes(vm[ix:ix + iw], "little"), ibits)
            addr = base + i * vw
            if not 0 <= i < count or addr + vw > size:
                raise TrapError(STORE_BOUNDS_REASON)
            vm[addr:addr + vw] = vm[v:v + vw]
            return s
        return run

    if k == "brcond":
        c = cell(ops[0], 1)
        t, f = s

        def run(vm):
            return t if vm[c] else f
        return run

    if k == "ret":
        if spec.operand_types and vfn.ret_slot is not None:
            w = spec.operand_types[0].width
            src = cell(ops[0], w)
            roff = vfn.ret_slot[0]

            def run(vm):
                vm[roff:roff + w] = vm[src:src + w]
                return -1
            return run
        return lambda vm: -1

    if k == "call":
        idx = ops[0]
        if idx >= len(bundle.functions):
            raise TamperSignal(
                INVALID_REFERENCE,
                f"@{vfn.name}: callee index {idx} outside the table")
        target = bundle.functions[idx]
        arg_cells = [(cell(ops[1 + i], t.width), t.width)
                     for i, t in enumerate(spec.operand_types)]
        res = None
        if spec.result_type is not None:
            res = (cell(ops[-1], spec.result_type.width),
                   (1 << spec.result_type.bits) - 1,
                   spec.result_type.width)

        def run(vm):
            args = [int.from_bytes(vm[o:o + w], "little")
                    for o, w in arg_cells]
            value = call_function(bundle, target, args, ctx, engine)
            if res is not None:
                ro, rm, rw = res
                vm[ro:ro + rw] = ((value or 0) & rm).to_bytes(rw, "little")
            return s
        return run

    if k == "guard":
        idx = ops[0]
        exp_off, run_off = cell(ops[1], 2), cell(ops[2], 2)
        if idx >= len(bundle.functions) or \
                not isinstance(bundle.functions[idx], VirtFunction):
            raise TamperSignal(
                INVALID_REFERENCE,
                f"@{vfn.name}: guard checkee index {idx} names no "
                "transformed function")
        checkee = bundle.functions[idx]
        key = (vfn.name, checkee.name)

        def run(vm):
            h = compute_vpa_hash(checkee.vpa)
            vm[run_off:run_off + 2] = h.to_bytes(2, "little")
            expected = int.from_bytes(vm[exp_off:exp_off + 2], "little")
            ctx.guard_execs += 1
            ctx.guard_edges[key] = ctx.guard_edges.get(key, 0) + 1
            if h != expected:
                respond(TamperSignal(
                    HASH_MISMATCH,
                    f"@{vfn.name} checking @{checkee.name}: computed "
                    f"{h:#06x}, expected {expected:#06x}"))
            return s
        return run

    raise TamperSignal(INVALID_OPCODE,
                       f"@{vfn.name}: no compiler for kind {k!r}")


def _compiled(bundle: ProtectedBundle, vfn: VirtFunction, ctx: ExecContext):
    key = ("optimized", id(vfn))
    code = ctx.threaded_cache.get(key)
    if code is None:
        code = [_compile_record(bundle, vfn, rec, ctx, run_threaded)
                for rec in pre_decode(vfn)]
        ctx.threaded_cache[key] = code
    return code


def run_threaded(bundle: ProtectedBundle, vfn: VirtFunction, args,
                 ctx: ExecContext) -> int | None:
    """One activation of a transformed function under the pre-decoding
    engine."""
    try:
        code = _compiled(bundle, vfn, ctx)
    except TamperSignal as sig:
        respond(sig)
    vm = bytearray(vfn.image)
    for (off, tag), raw in zip(vfn.param_slots, args):
        masked = raw & ((1 << tag.bits) - 1)
        vm[off:off + tag.width] = masked.to_bytes(tag.width, "little")

    ordinal = 0
    limit = ctx.step_limit
    while ordinal != -1:
        ctx.steps += 1
        if ctx.steps > limit:
            raise TrapError(STEP_LIMIT_REASON)
        try:
            ordinal = code[ordinal](vm)
        except IndexError:
            # baked offsets are only wrong when the stream was corrupted
            # before decoding
            respond(TamperSignal(
                INVALID_REFERENCE, f"@{vfn.name}: a record references a "
                "cell outside the image"))

    if vfn.ret_slot is None:
        return None
    off, tag = vfn.ret_slot
    return int.from_bytes(vm[off:off + tag.width], "little")


def execute_optimized(bundle: ProtectedBundle, inputs=(),
                      step_limit: int = DEFAULT_STEP_LIMIT,
                      entry: str | None = None):
    return execute_with_engine(bundle, run_threaded, inputs, step_limit,
                               entry)
