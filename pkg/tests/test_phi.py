from vmguard.ir import (eliminate_phis, parse_module, reference_interpret,
                        validate_module)


def test_module_without_phis_is_returned_unchanged():
    module = parse_module("""\
func @f() -> i64 {
entry:
  %a = const i64 3
  ret i64 %a
}
""")
    assert eliminate_phis(module) is module


def test_elimination_is_idempotent(corpus_flat):
    for module in corpus_flat.values():
        assert eliminate_phis(module) is module


def test_no_phi_survives(corpus_raw):
    for module in corpus_raw.values():
        flat = eliminate_phis(module)
        for fn in flat.functions:
            assert all(i.kind != "phi" for i in fn.instructions()), fn.name


def test_flat_corpus_validates(corpus_raw):
    for name, module in corpus_raw.items():
        assert validate_module(eliminate_phis(module)) == [], name


def test_each_phi_becomes_one_slot_and_per_arm_stores(corpus_raw):
    module = corpus_raw["fib"]
    fn = module.function("fib_iter")
    n_phis = sum(1 for i in fn.instructions() if i.kind == "phi")
    assert n_phis == 3
    flat_fn = eliminate_phis(module).function("fib_iter")
    allocas = [i for i in flat_fn.instructions() if i.kind == "alloca"]
    assert len(allocas) == n_phis
    assert all(i.count == 1 for i in allocas)
    stores = [i for i in flat_fn.instructions() if i.kind == "store"]
    # two predecessor arms per phi
    assert len(stores) == 2 * n_phis
    loads = [i for i in flat_fn.instructions() if i.kind == "load"]
    assert len(loads) == n_phis


def test_stores_precede_the_predecessor_terminator(corpus_raw):
    flat_fn = eliminate_phis(corpus_raw["fib"]).function("fib_iter")
    for block in flat_fn.blocks:
        kinds = [i.kind for i in block.instructions]
        assert "store" not in kinds[-1:]
        for k in kinds[:-1]:
            assert k not in ("br", "brcond", "ret")


SWAP_LOOP = """\
func @main() -> i64 {
entry:
  %zero = const i64 0
  %one = const i64 1
  %ten = const i64 10
  %five = const i64 5
  br %loop
loop:
  %i = phi i64 [%zero, %entry], [%inext, %body]
  %a = phi i64 [%one, %entry], [%b, %body]
  %b = phi i64 [%zero, %entry], [%a, %body]
  %more = icmp slt i64 %i, %five
  brcond %more, %body, %out
body:
  %inext = add i64 %i, %one
  br %loop
out:
  %scaled = mul i64 %a, %ten
  %r = add i64 %scaled, %b
  ret i64 %r
}
"""


def test_parallel_swap_semantics_survive_elimination():
    # (a, b) starts at (1, 0) and swaps each of 5 iterations: final (0, 1)
    module = eliminate_phis(parse_module(SWAP_LOOP))
    assert validate_module(module) == []
    result = reference_interpret(module, "main")
    assert result.status == "normal"
    assert result.value == 1


def test_eliminated_modules_execute_identically(corpus_raw, corpus_flat,
                                                manifest):
    # flat modules are the executable form; spot-check one program end to end
    entry = next(p for p in manifest["programs"] if p["name"] == "fib")
    res = reference_interpret(corpus_flat["fib"], "main",
                              entry["inputs"]["tiny"])
    assert res.status == "normal"
    assert res.value == entry["expect"]["tiny"]["value"]
    assert res.output == entry["expect"]["tiny"]["output"]
