"""Per-function randomized instruction encodings.

Every protected function carries its own opcode table: semantic handler
signatures are mapped to opcodes drawn uniformly from [0, 0xFFFE], so the
same source construct encodes differently in every function and under
every seed.  0xFFFF never names an instruction; it doubles as the branch
placeholder during lowering and as an always-invalid cell for tests.

Two instructions share a handler (and therefore an opcode) exactly when
their signature matches: operation kind, comparison predicate, operand
types and result type.  Structure-dependent facts (slot offsets, region
bounds, branch targets, callee index) live in the encoded operand stream,
not in the handler, which is what makes reuse safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir.core import TypeTag

OPCODE_SPACE = 0xFFFF          # valid opcodes are 0 .. OPCODE_SPACE - 1
BRANCH_PLACEHOLDER = 0xFFFF

# wire codes for handler kinds; order is frozen by the serialized format
KIND_NAMES = (
    "const", "add", "sub", "mul", "sdiv", "srem", "and", "or", "xor",
    "shl", "lshr", "ashr",
    "icmp.eq", "icmp.ne", "icmp.slt", "icmp.sle", "icmp.sgt", "icmp.sge",
    "icmp.ult", "icmp.ule", "icmp.ugt", "icmp.uge",
    "select", "zext", "sext", "trunc", "alloca", "load", "store",
    "br", "brcond", "ret", "call", "guard",
)
KIND_CODE = {name: i for i, name in enumerate(KIND_NAMES)}

TAG_CODE = {TypeTag.I1: 0, TypeTag.I8: 1, TypeTag.I16: 2, TypeTag.I32: 3,
            TypeTag.I64: 4}
TAG_FROM_CODE = {v: k for k, v in TAG_CODE.items()}


class RisaError(Exception):
    pass


class RisaFull(RisaError):
    """No unused opcode remains; a function would need > 0xFFFF distinct
    handler signatures to hit this."""


class MalformedStream(Exception):
    """An encoded program fails to decode as a whole number of records."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class HandlerSpec:
    """Signature of one runtime handler: what it does and on which types."""

    kind: str
    operand_types: tuple[TypeTag, ...] = ()
    result_type: TypeTag | None = None

    @property
    def record_len(self) -> int:
        """Number of 16-bit elements one encoded record occupies."""
        k = self.kind
        if k == "const":
            return 2
        if k in ("zext", "sext", "trunc"):
            return 3
        if k == "select":
            return 5
        if k == "alloca":
            return 1
        if k in ("load", "store"):
            return 5
        if k == "br":
            return 2
        if k == "brcond":
            return 4
        if k == "ret":
            return 1 + len(self.operand_types)
        if k == "call":
            return 2 + len(self.operand_types) + \
                (0 if self.result_type is None else 1)
        if k == "guard":
            return 4
        # binary arithmetic and comparisons
        return 4


def spec_for_instruction(ins, value_tag) -> HandlerSpec:
    """Handler signature for an IR instruction.  `value_tag(name)` resolves
    operand types; needed because cast sources and memory indices keep
    their own widths."""
    k = ins.kind
    if k == "const":
        return HandlerSpec("const", (), ins.type)
    if k == "icmp":
        t = value_tag(ins.operands[0])
        return HandlerSpec(f"icmp.{ins.predicate}", (t, t), TypeTag.I1)
    if k == "select":
        t = ins.type
        return HandlerSpec("select", (TypeTag.I1, t, t), t)
    if k in ("zext", "sext", "trunc"):
        return HandlerSpec(k, (value_tag(ins.operands[0]),), ins.type)
    if k == "alloca":
        return HandlerSpec("alloca")
    if k == "load":
        return HandlerSpec("load", (value_tag(ins.operands[1]),), ins.type)
    if k == "store":
        return HandlerSpec("store", (ins.type, value_tag(ins.operands[2])))
    if k == "br":
        return HandlerSpec("br")
    if k == "brcond":
        return HandlerSpec("brcond", (TypeTag.I1,))
    if k == "ret":
        if ins.operands:
            return HandlerSpec("ret", (ins.type,))
        return HandlerSpec("ret")
    if k == "call":
        args = tuple(value_tag(a) for a in ins.operands)
        return HandlerSpec("call", args, ins.type)
    # binary arithmetic
    return HandlerSpec(k, (ins.type, ins.type), ins.type)


GUARD_SPEC = HandlerSpec("guard")


@dataclass
class Risa:
    """One function's opcode table, built up during lowering."""

    opcode_of: dict[HandlerSpec, int] = field(default_factory=dict)
    spec_of: dict[int, HandlerSpec] = field(default_factory=dict)

    def opcode_for(self, spec: HandlerSpec, rng) -> int:
        """Existing opcode for `spec`, or a fresh uniform draw that collides
        with nothing already assigned."""
        opc = self.opcode_of.get(spec)
        if opc is not None:
            return opc
        if len(self.spec_of) >= OPCODE_SPACE:
            raise RisaFull(f"all {OPCODE_SPACE} opcodes are in use")
        while True:
            opc = rng.randrange(OPCODE_SPACE)
            if opc not in self.spec_of:
                break
        self.opcode_of[spec] = opc
        self.spec_of[opc] = spec
        return opc

    def __len__(self) -> int:
        return len(self.spec_of)


def walk_records(risa: Risa, vpa) -> list[tuple[int, HandlerSpec]]:
    """Split an encoded stream into records: (element index, handler spec)
    pairs.  Raises MalformedStream when an element at a record boundary
    names no handler or the final record runs off the end."""
    out = []
    i = 0
    n = len(vpa)
    spec_of = risa.spec_of
    while i < n:
        spec = spec_of.get(vpa[i])
        if spec is None:
            raise MalformedStream(
                f"element {i} holds {vpa[i]:#06x}, which is not an opcode")
        end = i + spec.record_len
        if end > n:
            raise MalformedStream(
                f"record at element {i} ({spec.kind}) needs {spec.record_len}"
                f" elements but only {n - i} remain")
        out.append((i, spec))
        i = end
    return out
