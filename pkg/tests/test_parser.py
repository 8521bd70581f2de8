import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import corpus_text
from vmguard.ir import (IrModule, ParseError, TypeTag, format_module,
                        parse_function, parse_module)

TRIVIAL = """\
func @main() -> i64 {
entry:
  %a = const i64 5
  %b = const i64 7
  %c = add i64 %a, %b
  ret i64 %c
}
"""


def test_trivial_module_shape():
    module = parse_module(TRIVIAL)
    assert [f.name for f in module.functions] == ["main"]
    fn = module.functions[0]
    assert fn.params == ()
    assert fn.ret is TypeTag.I64
    assert [b.label for b in fn.blocks] == ["entry"]
    kinds = [i.kind for i in fn.blocks[0].instructions]
    assert kinds == ["const", "const", "add", "ret"]


def test_print_parse_print_is_identity_on_trivial():
    module = parse_module(TRIVIAL)
    printed = format_module(module)
    assert format_module(parse_module(printed)) == printed


@pytest.mark.parametrize("name", ["fib", "loop_sum", "qsort", "crc32",
                                  "sieve", "strsearch"])
def test_print_parse_print_is_identity_on_corpus(name):
    printed = format_module(parse_module(corpus_text(name)))
    assert format_module(parse_module(printed)) == printed


def test_negative_const_wraps_to_unsigned():
    fn = parse_function("""\
func @f() -> i64 {
entry:
  %a = const i64 -1
  ret i64 %a
}
""")
    assert fn.blocks[0].instructions[0].value == (1 << 64) - 1


def test_negative_const_roundtrips_through_printer():
    text = """\
func @f() -> i8 {
entry:
  %a = const i8 -128
  ret i8 %a
}
"""
    module = parse_module(text)
    assert format_module(module) == text


def test_all_icmp_predicates_parse():
    preds = ["eq", "ne", "slt", "sle", "sgt", "sge", "ult", "ule", "ugt",
             "uge"]
    body = "\n".join(
        f"  %c{i} = icmp {p} i64 %x, %x" for i, p in enumerate(preds))
    fn = parse_function(
        "func @f(i64 %x) -> i64 {\nentry:\n" + body + "\n  ret i64 %x\n}\n")
    got = [i.predicate for i in fn.blocks[0].instructions[:-1]]
    assert got == preds


def test_alloca_and_memory_ops_parse():
    fn = parse_function("""\
func @f(i64 %i) -> i64 {
entry:
  %buf = alloca i8 x 10
  %v = const i8 3
  store i8 %v, %buf, %i
  %r = load i8 %buf, %i
  %w = zext i64 %r
  ret i64 %w
}
""")
    alloca = fn.blocks[0].instructions[0]
    assert alloca.kind == "alloca"
    assert alloca.type is TypeTag.I8
    assert alloca.count == 10
    store = fn.blocks[0].instructions[2]
    assert store.operands == ("v", "buf", "i")


def test_phi_parses_with_multiple_arms():
    fn = parse_function("""\
func @f(i64 %n) -> i64 {
entry:
  %zero = const i64 0
  %one = const i64 1
  br %loop
loop:
  %i = phi i64 [%zero, %entry], [%next, %loop2]
  %c = icmp slt i64 %i, %n
  brcond %c, %loop2, %out
loop2:
  %next = add i64 %i, %one
  br %loop
out:
  ret i64 %i
}
""")
    phi = fn.block("loop").instructions[0]
    assert phi.kind == "phi"
    assert phi.phi_args == (("zero", "entry"), ("next", "loop2"))


def test_void_call_and_extern_parse():
    fn = parse_function("""\
func @main() -> i64 {
entry:
  %n = call i64 @read_i64()
  call void @print_i64(%n)
  ret i64 %n
}
""")
    call = fn.blocks[0].instructions[1]
    assert call.kind == "call"
    assert call.result is None
    assert call.callee == "print_i64"


def test_comments_and_blank_lines_ignored():
    module = parse_module("""\

; leading comment
func @f() -> void {  ; trailing comment
entry:
  ; a full-line comment
  ret void
}
""")
    assert module.functions[0].ret is None


@pytest.mark.parametrize("bad, fragment", [
    ("func @f() -> i64 {\nentry:\n  %a = bogus i64 %a\n  ret i64 %a\n}\n",
     "unknown instruction"),
    ("func @f() -> i64 {\nentry:\n  %c = icmp zz i64 %c, %c\n  ret i64 %c\n}\n",
     "unknown predicate"),
    ("func @f() -> i64 {\nentry:\n  %a = const i77 1\n  ret i64 %a\n}\n",
     "expected type"),
    ("func @f() -> i64 {\nentry:\n  ret i64 %a\n", "unexpected end"),
    ("func @f() -> i64 {\nentry:\n  br %gone\n}\n", "undefined label %gone"),
    ("func @f() -> void {\nentry:\n  ret void\n}\n"
     "func @f() -> void {\nentry:\n  ret void\n}\n", "duplicate function @f"),
    ("func @f() -> void {\nentry:\n  ret void\nentry:\n  ret void\n}\n",
     "duplicate block label"),
    ("func @f() -> i64 $\n", "unexpected character"),
])
def test_parse_errors_carry_context(bad, fragment):
    with pytest.raises(ParseError) as err:
        parse_module(bad)
    assert fragment in str(err.value)


def test_parse_error_reports_line_and_column():
    with pytest.raises(ParseError) as err:
        parse_module("func @f() -> i64 {\nentry:\n  %a = wat\n}\n")
    assert err.value.line == 3


def test_parse_function_rejects_multiple():
    with pytest.raises(ParseError):
        parse_function(TRIVIAL + "\n" + TRIVIAL.replace("@main", "@other"))


@given(st.integers(min_value=-(1 << 63), max_value=(1 << 63) - 1))
def test_const_i64_literals_roundtrip(value):
    fn = parse_function(
        f"func @f() -> i64 {{\nentry:\n  %a = const i64 {value}\n"
        f"  ret i64 %a\n}}\n")
    stored = fn.blocks[0].instructions[0].value
    assert stored == value % (1 << 64)
    printed = format_module(IrModule((fn,)))
    assert f"const i64 {value}" in printed
