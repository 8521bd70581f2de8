"""Text-format parser for `.vir` modules.

Grammar sketch (comments run from ';' to end of line):

    module   := func*
    func     := "func" "@" NAME "(" [type "%" id ("," type "%" id)*] ")"
                "->" ("void" | type) "{" block+ "}"
    block    := LABEL ":" instr+
    instr    := "%" id "=" rhs | "store" ... | "br" %L | "brcond" %c, %Lt, %Lf
              | "ret" (type %v | "void") | "call" "void" @f(...)

Branch targets and phi predecessors are written with a '%' sigil but live in
the label namespace, separate from value ids.
"""

from __future__ import annotations

from .core import (BINARY_KINDS, CAST_KINDS, ICMP_PREDICATES, TYPE_BY_NAME,
                   Block, Instruction, IrFunction, IrModule, TypeTag)


class ParseError(Exception):
    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


_IDENT_CHARS = set("abcdefghijklmnopqrstuvwxyz"
                   "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.")


def _tokenize(text: str) -> list[tuple[str, str, int, int]]:
    """Tokens as (kind, text, line, col); kind is 'ident', 'int' or 'punct'."""
    tokens = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if text.startswith("->", i):
            tokens.append(("punct", "->", line, col))
            i += 2
            col += 2
            continue
        if ch in "(){},:=@%[]":
            tokens.append(("punct", ch, line, col))
            i += 1
            col += 1
            continue
        if ch == "-" or ch.isdigit():
            start = i
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            lit = text[start:j]
            if lit == "-":
                raise ParseError("stray '-'", line, col)
            tokens.append(("int", lit, line, col))
            col += j - i
            i = j
            continue
        if ch in _IDENT_CHARS:
            j = i
            while j < n and text[j] in _IDENT_CHARS:
                j += 1
            tokens.append(("ident", text[i:j], line, col))
            col += j - i
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    return tokens


class _Cursor:
    def __init__(self, tokens: list[tuple[str, str, int, int]]) -> None:
        self.tokens = tokens
        self.pos = 0

    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    def peek(self):
        if self.at_end():
            last = self.tokens[-1] if self.tokens else ("", "", 1, 1)
            raise ParseError("unexpected end of input", last[2], last[3])
        return self.tokens[self.pos]

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, text: str):
        kind, got, line, col = self.next()
        if got != text:
            raise ParseError(f"expected {text!r}, found {got!r}", line, col)

    def ident(self, what: str) -> str:
        kind, got, line, col = self.next()
        if kind != "ident":
            raise ParseError(f"expected {what}, found {got!r}", line, col)
        return got

    def integer(self) -> int:
        kind, got, line, col = self.next()
        if kind != "int":
            raise ParseError(f"expected integer, found {got!r}", line, col)
        return int(got)

    def value(self) -> str:
        self.expect("%")
        return self.ident("value id")

    def type_tag(self) -> TypeTag:
        kind, got, line, col = self.next()
        if got not in TYPE_BY_NAME:
            raise ParseError(f"expected type, found {got!r}", line, col)
        return TYPE_BY_NAME[got]


def _wrap_const(value: int, tag: TypeTag) -> int:
    return value & ((1 << tag.bits) - 1)


def _parse_rhs(cur: _Cursor, result: str) -> Instruction:
    kind_tok = cur.next()
    _, kind, line, col = kind_tok
    if kind == "const":
        tag = cur.type_tag()
        return Instruction("const", result=result, type=tag,
                           value=_wrap_const(cur.integer(), tag))
    if kind in BINARY_KINDS:
        tag = cur.type_tag()
        a = cur.value()
        cur.expect(",")
        b = cur.value()
        return Instruction(kind, result=result, type=tag, operands=(a, b))
    if kind == "icmp":
        pred = cur.ident("comparison predicate")
        if pred not in ICMP_PREDICATES:
            raise ParseError(f"unknown predicate {pred!r}", line, col)
        tag = cur.type_tag()
        a = cur.value()
        cur.expect(",")
        b = cur.value()
        return Instruction("icmp", result=result, type=tag, predicate=pred,
                           operands=(a, b))
    if kind == "select":
        tag = cur.type_tag()
        c = cur.value()
        cur.expect(",")
        a = cur.value()
        cur.expect(",")
        b = cur.value()
        return Instruction("select", result=result, type=tag, operands=(c, a, b))
    if kind in CAST_KINDS:
        tag = cur.type_tag()
        return Instruction(kind, result=result, type=tag,
                           operands=(cur.value(),))
    if kind == "alloca":
        tag = cur.type_tag()
        cur.expect("x")
        return Instruction("alloca", result=result, type=tag,
                           count=cur.integer())
    if kind == "load":
        tag = cur.type_tag()
        base = cur.value()
        cur.expect(",")
        idx = cur.value()
        return Instruction("load", result=result, type=tag, operands=(base, idx))
    if kind == "call":
        tag = cur.type_tag()
        cur.expect("@")
        callee = cur.ident("function name")
        args = _parse_args(cur)
        return Instruction("call", result=result, type=tag, callee=callee,
                           operands=args)
    if kind == "phi":
        tag = cur.type_tag()
        arms = []
        while True:
            cur.expect("[")
            v = cur.value()
            cur.expect(",")
            cur.expect("%")
            lbl = cur.ident("predecessor label")
            cur.expect("]")
            arms.append((v, lbl))
            if cur.at_end() or cur.peek()[1] != ",":
                break
            cur.expect(",")
        return Instruction("phi", result=result, type=tag,
                           phi_args=tuple(arms))
    raise ParseError(f"unknown instruction kind {kind!r}", line, col)


def _parse_args(cur: _Cursor) -> tuple[str, ...]:
    cur.expect("(")
    args = []
    if cur.peek()[1] != ")":
        while True:
            args.append(cur.value())
            if cur.peek()[1] == ")":
                break
            cur.expect(",")
    cur.expect(")")
    return tuple(args)


def _parse_instruction(cur: _Cursor) -> Instruction:
    kind, text, line, col = cur.peek()
    if text == "%":
        cur.next()
        result = cur.ident("value id")
        cur.expect("=")
        return _parse_rhs(cur, result)
    if text == "store":
        cur.next()
        tag = cur.type_tag()
        val = cur.value()
        cur.expect(",")
        base = cur.value()
        cur.expect(",")
        idx = cur.value()
        return Instruction("store", type=tag, operands=(val, base, idx))
    if text == "br":
        cur.next()
        cur.expect("%")
        return Instruction("br", labels=(cur.ident("label"),))
    if text == "brcond":
        cur.next()
        c = cur.value()
        cur.expect(",")
        cur.expect("%")
        t = cur.ident("label")
        cur.expect(",")
        cur.expect("%")
        f = cur.ident("label")
        return Instruction("brcond", operands=(c,), labels=(t, f))
    if text == "ret":
        cur.next()
        if cur.peek()[1] == "void":
            cur.next()
            return Instruction("ret")
        tag = cur.type_tag()
        return Instruction("ret", type=tag, operands=(cur.value(),))
    if text == "call":
        cur.next()
        cur.expect("void")
        cur.expect("@")
        callee = cur.ident("function name")
        return Instruction("call", callee=callee, operands=_parse_args(cur))
    raise ParseError(f"expected instruction, found {text!r}", line, col)


def _parse_function(cur: _Cursor) -> IrFunction:
    cur.expect("func")
    cur.expect("@")
    name = cur.ident("function name")
    cur.expect("(")
    params = []
    if cur.peek()[1] != ")":
        while True:
            tag = cur.type_tag()
            cur.expect("%")
            params.append((cur.ident("parameter name"), tag))
            if cur.peek()[1] == ")":
                break
            cur.expect(",")
    cur.expect(")")
    cur.expect("->")
    if cur.peek()[1] == "void":
        cur.next()
        ret = None
    else:
        ret = cur.type_tag()
    cur.expect("{")

    blocks: list[Block] = []
    label_tok = cur.next()
    while True:
        kind, label, line, col = label_tok
        if kind != "ident":
            raise ParseError(f"expected block label, found {label!r}", line, col)
        cur.expect(":")
        instructions: list[Instruction] = []
        while True:
            ins = _parse_instruction(cur)
            instructions.append(ins)
            if ins.is_terminator:
                break
        blocks.append(Block(label, tuple(instructions)))
        nxt = cur.next()
        if nxt[1] == "}":
            break
        label_tok = nxt

    fn = IrFunction(name, tuple(params), ret, tuple(blocks))
    _check_labels(fn, label_tok)
    return fn


def _check_labels(fn: IrFunction, near) -> None:
    defined = {b.label for b in fn.blocks}
    if len(defined) != len(fn.blocks):
        raise ParseError(f"duplicate block label in @{fn.name}", near[2], near[3])
    for block in fn.blocks:
        for ins in block.instructions:
            for lbl in ins.labels:
                if lbl not in defined:
                    raise ParseError(
                        f"undefined label %{lbl} in @{fn.name}", near[2], near[3])


def parse_module(text: str) -> IrModule:
    cur = _Cursor(_tokenize(text))
    functions: list[IrFunction] = []
    seen: set[str] = set()
    while not cur.at_end():
        tok = cur.peek()
        fn = _parse_function(cur)
        if fn.name in seen:
            raise ParseError(f"duplicate function @{fn.name}", tok[2], tok[3])
        seen.add(fn.name)
        functions.append(fn)
    return IrModule(tuple(functions))


def parse_function(text: str) -> IrFunction:
    """Parse a single standalone function definition."""
    module = parse_module(text)
    if len(module.functions) != 1:
        raise ParseError("expected exactly one function", 1, 1)
    return module.functions[0]
