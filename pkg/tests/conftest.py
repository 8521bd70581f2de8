import json
import pathlib
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent))

from vmguard.ir import eliminate_phis, parse_module, validate_module

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")

CORPUS_DIR = (pathlib.Path(__file__).resolve().parents[1]
              / "src" / "vmguard" / "corpus")


def corpus_text(name: str) -> str:
    return (CORPUS_DIR / f"{name}.vir").read_text()


@pytest.fixture(scope="session")
def manifest():
    return json.loads((CORPUS_DIR / "manifest.json").read_text())


@pytest.fixture(scope="session")
def corpus_raw():
    """name -> parsed module, phis intact."""
    out = {}
    for path in sorted(CORPUS_DIR.glob("*.vir")):
        module = parse_module(path.read_text())
        assert validate_module(module) == []
        out[path.stem] = module
    return out


@pytest.fixture(scope="session")
def corpus_flat(corpus_raw):
    """name -> phi-eliminated module, ready for execution or protection."""
    out = {}
    for name, module in corpus_raw.items():
        flat = eliminate_phis(module)
        assert validate_module(flat) == []
        out[name] = flat
    return out
