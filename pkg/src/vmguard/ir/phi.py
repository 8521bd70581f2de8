"""Phi elimination by demotion to stack slots.

Each phi becomes a one-element alloca in the entry block, a store of the
matching arm value at the end of every predecessor (just before its
terminator), and a load where the phi stood.  Stores read SSA values that
were computed earlier in the predecessor, so no ordering hazards arise even
for mutually referential phis.  Functions without phis are returned
unchanged (object-identical module contents compare equal).
"""

from __future__ import annotations

from .core import Block, Instruction, IrFunction, IrModule, TypeTag

_INDEX_ID = "phi.idx0"


class PhiEliminationError(Exception):
    pass


def _fresh(base: str, taken: set[str]) -> str:
    name = base
    n = 2
    while name in taken:
        name = f"{base}.{n}"
        n += 1
    taken.add(name)
    return name


def eliminate_phis_function(fn: IrFunction) -> IrFunction:
    phis = [(b, ins) for b in fn.blocks for ins in b.instructions
            if ins.kind == "phi"]
    if not phis:
        return fn

    preds: dict[str, list[str]] = {b.label: [] for b in fn.blocks}
    for b in fn.blocks:
        for lbl in b.terminator.labels:
            preds[lbl].append(b.label)

    taken = {name for name, _ in fn.params}
    taken.update(ins.result for ins in fn.instructions()
                 if ins.result is not None)

    index_id = _fresh(_INDEX_ID, taken)
    slot_of: dict[str, str] = {}
    slot_type: dict[str, TypeTag] = {}
    # predecessor label -> stores to append before its terminator
    pending: dict[str, list[Instruction]] = {b.label: [] for b in fn.blocks}

    for block, phi in phis:
        arm_labels = [lbl for _, lbl in phi.phi_args]
        actual = preds[block.label]
        if sorted(arm_labels) != sorted(actual):
            raise PhiEliminationError(
                f"@{fn.name}: phi %{phi.result} arms {sorted(arm_labels)} "
                f"do not match predecessors {sorted(actual)} "
                f"of block %{block.label}")
        slot = _fresh(f"{phi.result}.slot", taken)
        slot_of[phi.result] = slot
        slot_type[phi.result] = phi.type
        for value, lbl in phi.phi_args:
            pending[lbl].append(Instruction(
                "store", type=phi.type, operands=(value, slot, index_id)))

    new_blocks: list[Block] = []
    for bi, block in enumerate(fn.blocks):
        instructions: list[Instruction] = []
        if bi == 0:
            instructions.append(Instruction(
                "const", result=index_id, type=TypeTag.I64, value=0))
            for block2, phi in phis:
                instructions.append(Instruction(
                    "alloca", result=slot_of[phi.result],
                    type=slot_type[phi.result], count=1))
        for ins in block.instructions[:-1]:
            if ins.kind == "phi":
                instructions.append(Instruction(
                    "load", result=ins.result, type=ins.type,
                    operands=(slot_of[ins.result], index_id)))
            else:
                instructions.append(ins)
        instructions.extend(pending[block.label])
        term = block.instructions[-1]
        if term.kind == "phi":
            raise PhiEliminationError(
                f"@{fn.name}: block %{block.label} ends with a phi")
        instructions.append(term)
        new_blocks.append(Block(block.label, tuple(instructions)))

    return IrFunction(fn.name, fn.params, fn.ret, tuple(new_blocks))


def eliminate_phis(module: IrModule) -> IrModule:
    functions = tuple(eliminate_phis_function(f) for f in module.functions)
    if all(nf is of for nf, of in zip(functions, module.functions)):
        return module
    return IrModule(functions, module.externs)
