"""Checked execution engine and the shared run harness.

This engine keeps nothing cached between steps: every dispatch re-reads
the opcode and its operands from the live encoded stream, looks the
handler up fresh, and bounds-checks the program counter.  That makes it
the natural place to observe corruption immediately, at the cost of
per-step overhead the pre-decoding engine avoids.

Corruption surfaces as a TamperSignal routed through `respond`, which
aborts the run; traps (division by zero, bad memory index, exhausted
budgets) use the same reasons as the reference interpreter so outcomes
stay comparable across all three executors.
"""

from __future__ import annotations

import sys

from .arith import TrapError, binary_op, cast, icmp, to_signed
from .bundle import (ExternFunction, PlainFunction, ProtectedBundle,
                     VirtFunction)
from .execstate import (DEFAULT_STEP_LIMIT, LOAD_BOUNDS_REASON,
                        MAX_CALL_DEPTH, STEP_LIMIT_REASON,
                        STORE_BOUNDS_REASON, ExecContext)
from .guards import compute_vpa_hash
from .ir.core import ExecutionResult
from .ir.interp import evaluate_function

INVALID_OPCODE = "invalid opcode"
PC_ESCAPE = "program counter escape"
HASH_MISMATCH = "checksum mismatch"
INVALID_REFERENCE = "invalid reference"


class TamperSignal(Exception):
    """Evidence of a corrupted bundle observed on the execution path."""

    def __init__(self, kind: str, detail: str) -> None:
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail


class TamperAbort(Exception):
    """Raised by the response policy to unwind the whole run."""

    def __init__(self, signal: TamperSignal) -> None:
        super().__init__(str(signal))
        self.signal = signal


def respond(signal: TamperSignal) -> None:
    """Response policy on detected corruption: abort the run.  Kept as the
    single choke point so alternative policies slot in here."""
    raise TamperAbort(signal)


def call_function(bundle: ProtectedBundle, target, args, ctx: ExecContext,
                  engine) -> int | None:
    """Shared call bridge: dispatches to a transformed function (via
    `engine`), an untransformed one (via the IR evaluator), or an
    intrinsic.  Used by both engines and by plain functions calling back
    into protected code."""
    if isinstance(target, ExternFunction):
        if target.name == "read_i64":
            return ctx.read_input()
        if target.name == "print_i64":
            ctx.print_value(args[0])
            return None
        respond(TamperSignal(INVALID_REFERENCE,
                             f"unknown intrinsic @{target.name}"))
    ctx.enter_call()
    try:
        if isinstance(target, VirtFunction):
            return engine(bundle, target, args, ctx)
        return evaluate_function(target.fn, args,
                                 _plain_hook(bundle, ctx, engine), ctx)
    finally:
        ctx.leave_call()


def _plain_hook(bundle: ProtectedBundle, ctx: ExecContext, engine):
    def hook(name: str, args):
        if name == "read_i64":
            return ctx.read_input()
        if name == "print_i64":
            ctx.print_value(args[0])
            return None
        try:
            target = bundle.function(name)
        except KeyError:
            respond(TamperSignal(INVALID_REFERENCE,
                                 f"call to @{name}, which the bundle does "
                                 "not define"))
        return call_function(bundle, target, args, ctx, engine)
    return hook


def _read(vm, off: int, width: int) -> int:
    return int.from_bytes(vm[off:off + width], "little")


def _build_handler(bundle: ProtectedBundle, vfn: VirtFunction, spec,
                   ctx: ExecContext, engine):
    """Compile one handler closure.  Offsets are looked up from the live
    stream on every invocation and checked against the image bounds; only
    type widths and the semantic operation are baked in."""
    vpa = vfn.vpa
    k = spec.kind
    ln = spec.record_len
    size = len(vfn.image)

    def oob(vpc):
        respond(TamperSignal(
            INVALID_REFERENCE, f"@{vfn.name}: record at {vpc} references "
            "a cell outside the image"))

    if k in ("const", "alloca"):
        def handler(vm, vpc):
            return vpc + ln
        return handler

    if k.startswith("icmp."):
        pred = k.split(".", 1)[1]
        bits = spec.operand_types[0].bits
        w = spec.operand_types[0].width

        def handler(vm, vpc):
            a, b, r = vpa[vpc + 1], vpa[vpc + 2], vpa[vpc + 3]
            if a + w > size or b + w > size or r >= size:
                oob(vpc)
            vm[r] = icmp(pred, _read(vm, a, w), _read(vm, b, w), bits)
            return vpc + 4
        return handler

    if k == "select":
        w = spec.result_type.width

        def handler(vm, vpc):
            c = vpa[vpc + 1]
            if c >= size:
                oob(vpc)
            pick = vpa[vpc + 2] if vm[c] else vpa[vpc + 3]
            r = vpa[vpc + 4]
            if pick + w > size or r + w > size:
                oob(vpc)
            vm[r:r + w] = vm[pick:pick + w]
            return vpc + 5
        return handler

    if k in ("zext", "sext", "trunc"):
        src_tag = spec.operand_types[0]
        dst_tag = spec.result_type
        sw, dw = src_tag.width, dst_tag.width

        def handler(vm, vpc):
            a, r = vpa[vpc + 1], vpa[vpc + 2]
            if a + sw > size or r + dw > size:
                oob(vpc)
            v = cast(k, _read(vm, a, sw), src_tag, dst_tag)
            vm[r:r + dw] = v.to_bytes(dw, "little")
            return vpc + 3
        return handler

    if k == "load":
        idx_bits = spec.operand_types[0].bits
        iw = spec.operand_types[0].width
        w = spec.result_type.width

        def handler(vm, vpc):
            ix, r = vpa[vpc + 3], vpa[vpc + 4]
            if ix + iw > size or r + w > size:
                oob(vpc)
            count = vpa[vpc + 2]
            i = to_signed(_read(vm, ix, iw), idx_bits)
            addr = vpa[vpc + 1] + i * w
            if not 0 <= i < count or addr + w > size:
                raise TrapError(LOAD_BOUNDS_REASON)
            vm[r:r + w] = vm[addr:addr + w]
            return vpc + 5
        return handler

    if k == "store":
        vw = spec.operand_types[0].width
        idx_bits = spec.operand_types[1].bits
        iw = spec.operand_types[1].width

        def handler(vm, vpc):
            src, ix = vpa[vpc + 1], vpa[vpc + 4]
            if src + vw > size or ix + iw > size:
                oob(vpc)
            count = vpa[vpc + 3]
            i = to_signed(_read(vm, ix, iw), idx_bits)
            addr = vpa[vpc + 2] + i * vw
            if not 0 <= i < count or addr + vw > size:
                raise TrapError(STORE_BOUNDS_REASON)
            vm[addr:addr + vw] = vm[src:src + vw]
            return vpc + 5
        return handler

    if k == "br":
        def handler(vm, vpc):
            return vpa[vpc + 1]
        return handler

    if k == "brcond":
        def handler(vm, vpc):
            c = vpa[vpc + 1]
            if c >= size:
                oob(vpc)
            return vpa[vpc + 2] if vm[c] else vpa[vpc + 3]
        return handler

    if k == "ret":
        if not spec.operand_types:
            def handler(vm, vpc):
                return -1
            return handler
        w = spec.operand_types[0].width
        ret_slot = vfn.ret_slot

        def handler(vm, vpc):
            src = vpa[vpc + 1]
            if src + w > size:
                oob(vpc)
            if ret_slot is not None:
                vm[ret_slot[0]:ret_slot[0] + w] = vm[src:src + w]
            return -1
        return handler

    if k == "call":
        n_args = len(spec.operand_types)
        widths = [t.width for t in spec.operand_types]
        res_tag = spec.result_type
        table = bundle.functions

        def handler(vm, vpc):
            idx = vpa[vpc + 1]
            if idx >= len(table):
                respond(TamperSignal(
                    INVALID_REFERENCE,
                    f"@{vfn.name}: callee index {idx} outside the table"))
            args = []
            for i in range(n_args):
                off = vpa[vpc + 2 + i]
                if off + widths[i] > size:
                    oob(vpc)
                args.append(_read(vm, off, widths[i]))
            value = call_function(bundle, table[idx], args, ctx, engine)
            if res_tag is not None:
                off = vpa[vpc + 2 + n_args]
                if off + res_tag.width > size:
                    oob(vpc)
                raw = (value or 0) & ((1 << res_tag.bits) - 1)
                vm[off:off + res_tag.width] = raw.to_bytes(res_tag.width,
                                                           "little")
            return vpc + ln
        return handler

    if k == "guard":
        table = bundle.functions

        def handler(vm, vpc):
            idx = vpa[vpc + 1]
            if idx >= len(table) or not isinstance(table[idx], VirtFunction):
                respond(TamperSignal(
                    INVALID_REFERENCE,
                    f"@{vfn.name}: guard checkee index {idx} names no "
                    "transformed function"))
            exp_off, run_off = vpa[vpc + 2], vpa[vpc + 3]
            if exp_off + 2 > size or run_off + 2 > size:
                oob(vpc)
            checkee = table[idx]
            h = compute_vpa_hash(checkee.vpa)
            vm[run_off:run_off + 2] = h.to_bytes(2, "little")
            expected = _read(vm, exp_off, 2)
            ctx.guard_execs += 1
            key = (vfn.name, checkee.name)
            ctx.guard_edges[key] = ctx.guard_edges.get(key, 0) + 1
            if h != expected:
                respond(TamperSignal(
                    HASH_MISMATCH,
                    f"@{vfn.name} checking @{checkee.name}: computed "
                    f"{h:#06x}, expected {expected:#06x}"))
            return vpc + 4
        return handler

    # remaining kinds are the two-operand arithmetic group
    bits = spec.result_type.bits
    w = spec.result_type.width

    def handler(vm, vpc):
        a, b, r = vpa[vpc + 1], vpa[vpc + 2], vpa[vpc + 3]
        if a + w > size or b + w > size or r + w > size:
            oob(vpc)
        vm[r:r + w] = binary_op(k, _read(vm, a, w), _read(vm, b, w),
                                bits).to_bytes(w, "little")
        return vpc + 4
    return handler


def _handler_table(bundle: ProtectedBundle, vfn: VirtFunction,
                   ctx: ExecContext):
    key = ("checked", id(vfn))
    table = ctx.threaded_cache.get(key)
    if table is None:
        table = {opc: _build_handler(bundle, vfn, spec, ctx, run_virt)
                 for opc, spec in vfn.risa.spec_of.items()}
        ctx.threaded_cache[key] = table
    return table


def run_virt(bundle: ProtectedBundle, vfn: VirtFunction, args,
             ctx: ExecContext) -> int | None:
    """One activation of a transformed function under the checked engine."""
    vm = bytearray(vfn.image)
    for (off, tag), raw in zip(vfn.param_slots, args):
        masked = raw & ((1 << tag.bits) - 1)
        vm[off:off + tag.width] = masked.to_bytes(tag.width, "little")

    handlers = _handler_table(bundle, vfn, ctx)
    vpa = vfn.vpa
    n = len(vpa)
    vpc = 0
    limit = ctx.step_limit
    while True:
        ctx.steps += 1
        if ctx.steps > limit:
            raise TrapError(STEP_LIMIT_REASON)
        if not 0 <= vpc < n:
            respond(TamperSignal(
                PC_ESCAPE, f"@{vfn.name}: counter {vpc} outside the "
                f"{n}-element stream"))
        handler = handlers.get(vpa[vpc])
        if handler is None:
            respond(TamperSignal(
                INVALID_OPCODE, f"@{vfn.name}: element {vpc} holds "
                f"{vpa[vpc]:#06x}, which names no handler"))
        try:
            vpc = handler(vm, vpc)
        except IndexError:
            # only reachable with corrupted operand cells: honest streams
            # never reference memory outside the image
            respond(TamperSignal(
                INVALID_REFERENCE, f"@{vfn.name}: record at {vpc} "
                "references a cell outside the image"))
        if vpc == -1:
            break

    if vfn.ret_slot is None:
        return None
    off, tag = vfn.ret_slot
    return _read(vm, off, tag.width)


def execute_with_engine(bundle: ProtectedBundle, engine, inputs=(),
                        step_limit: int = DEFAULT_STEP_LIMIT,
                        entry: str | None = None) -> ExecutionResult:
    """Run a bundle to completion under the given transformed-function
    engine and package the outcome."""
    if entry is not None:
        target = bundle.function(entry)
    else:
        if bundle.entry_index is None:
            raise ValueError("bundle declares no entry function")
        target = bundle.functions[bundle.entry_index]
    if isinstance(target, ExternFunction):
        raise ValueError("entry cannot be an intrinsic")

    # each activation costs a handful of Python frames; make sure the
    # deepest honest call chain fits before the interpreter's own limit
    need = MAX_CALL_DEPTH * 10 + 400
    if sys.getrecursionlimit() < need:
        sys.setrecursionlimit(need)

    ctx = ExecContext(inputs, step_limit)
    try:
        if isinstance(target, VirtFunction):
            args = [ctx.read_input() for _ in target.param_slots]
            raw = engine(bundle, target, args, ctx)
            ret_tag = target.ret_slot[1] if target.ret_slot else None
        else:
            args = [ctx.read_input() for _ in target.fn.params]
            raw = evaluate_function(target.fn, args,
                                    _plain_hook(bundle, ctx, engine), ctx)
            ret_tag = target.fn.ret
    except TrapError as trap:
        return ExecutionResult("trap", trap_reason=trap.reason,
                               output=ctx.output, steps=ctx.steps,
                               guard_execs=ctx.guard_execs,
                               guard_edges=dict(ctx.guard_edges))
    except TamperAbort as abort:
        return ExecutionResult("tamper", tamper_cause=abort.signal,
                               output=ctx.output, steps=ctx.steps,
                               guard_execs=ctx.guard_execs,
                               guard_edges=dict(ctx.guard_edges))

    value = None if ret_tag is None else to_signed(raw, ret_tag.bits)
    return ExecutionResult("normal", value=value, output=ctx.output,
                           steps=ctx.steps, guard_execs=ctx.guard_execs,
                           guard_edges=dict(ctx.guard_edges))


def execute_secure(bundle: ProtectedBundle, inputs=(),
                   step_limit: int = DEFAULT_STEP_LIMIT,
                   entry: str | None = None) -> ExecutionResult:
    return execute_with_engine(bundle, run_virt, inputs, step_limit, entry)
