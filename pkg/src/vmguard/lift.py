"""Lowering from block IR to per-function encoded records.

Each instruction becomes one record: a freshly drawn (or reused) opcode
followed by 16-bit operands; offsets into the function's memory image for
values, region bounds for memory access, table indices for calls.  Branch
targets cannot be known until guard placement settles the final record
order, so they are emitted as 0xFFFF placeholders and patched once the
stream is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from array import array

from .ir.core import IrFunction
from .ir.interp import value_tags
from .layout import VmLayout
from .risa import BRANCH_PLACEHOLDER, HandlerSpec, Risa, spec_for_instruction

MAX_STREAM_ELEMENTS = 0xFFFE


class LiftError(Exception):
    pass


@dataclass
class LiftRecord:
    block: str
    spec: HandlerSpec
    elements: list[int]
    targets: tuple[str, ...] = ()


def lift_function(fn: IrFunction, risa: Risa, lay: VmLayout, rng,
                  callee_index: dict[str, int]) -> list[LiftRecord]:
    tags = value_tags(fn)
    records: list[LiftRecord] = []

    def slot(name: str) -> int:
        return lay.slots[name][0]

    for block in fn.blocks:
        for ins in block.instructions:
            spec = spec_for_instruction(ins, tags.__getitem__)
            opc = risa.opcode_for(spec, rng)
            targets: tuple[str, ...] = ()
            k = ins.kind
            if k == "const":
                elems = [opc, slot(ins.result)]
            elif k == "select":
                c, a, b = ins.operands
                elems = [opc, slot(c), slot(a), slot(b), slot(ins.result)]
            elif k in ("zext", "sext", "trunc"):
                elems = [opc, slot(ins.operands[0]), slot(ins.result)]
            elif k == "alloca":
                elems = [opc]
            elif k == "load":
                base, idx = ins.operands
                start, count, _ = lay.regions[base]
                elems = [opc, start, count, slot(idx), slot(ins.result)]
            elif k == "store":
                val, base, idx = ins.operands
                start, count, _ = lay.regions[base]
                elems = [opc, slot(val), start, count, slot(idx)]
            elif k == "br":
                elems = [opc, BRANCH_PLACEHOLDER]
                targets = (ins.labels[0],)
            elif k == "brcond":
                elems = [opc, slot(ins.operands[0]),
                         BRANCH_PLACEHOLDER, BRANCH_PLACEHOLDER]
                targets = (ins.labels[0], ins.labels[1])
            elif k == "ret":
                elems = [opc] + [slot(v) for v in ins.operands]
            elif k == "call":
                try:
                    callee = callee_index[ins.callee]
                except KeyError:
                    raise LiftError(f"@{fn.name}: call target @{ins.callee} "
                                    "has no table index") from None
                elems = [opc, callee] + [slot(a) for a in ins.operands]
                if ins.result is not None:
                    elems.append(slot(ins.result))
            else:
                a, b = ins.operands
                elems = [opc, slot(a), slot(b), slot(ins.result)]
            records.append(LiftRecord(block.label, spec, elems, targets))
    return records


def record_offsets(records: list[LiftRecord]) -> list[int]:
    """Element index where each record starts in the flattened stream."""
    offs = []
    pos = 0
    for rec in records:
        offs.append(pos)
        pos += len(rec.elements)
    return offs


def resolve_branches(fn_name: str, records: list[LiftRecord]) -> None:
    """Patch branch placeholders with the element index of the first record
    of the target block.  Must run after guard placement: a guard placed at
    a block head becomes that block's entry record."""
    offs = record_offsets(records)
    first_of_block: dict[str, int] = {}
    for rec, off in zip(records, offs):
        first_of_block.setdefault(rec.block, off)

    for rec in records:
        if not rec.targets:
            continue
        resolved = []
        for label in rec.targets:
            if label not in first_of_block:
                raise LiftError(f"@{fn_name}: branch targets block "
                                f"%{label} which lowered to no records")
            resolved.append(first_of_block[label])
        if rec.spec.kind == "br":
            rec.elements[1] = resolved[0]
        else:
            rec.elements[2], rec.elements[3] = resolved


def encode(fn_name: str, records: list[LiftRecord]) -> array:
    flat: list[int] = []
    for rec in records:
        if len(rec.elements) != rec.spec.record_len:
            raise LiftError(f"@{fn_name}: {rec.spec.kind} record has "
                            f"{len(rec.elements)} elements, expected "
                            f"{rec.spec.record_len}")
        flat.extend(rec.elements)
    if len(flat) > MAX_STREAM_ELEMENTS:
        raise LiftError(f"@{fn_name}: encoded stream needs {len(flat)} "
                        f"elements, beyond the {MAX_STREAM_ELEMENTS} cap")
    bad = [e for e in flat if not 0 <= e <= 0xFFFF]
    if bad:
        raise LiftError(f"@{fn_name}: element value {bad[0]} does not fit "
                        "16 bits")
    return array("H", flat)
