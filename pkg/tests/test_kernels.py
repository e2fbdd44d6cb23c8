import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcsim import _kernels_py as py
from mcsim import kernels

cy = pytest.importorskip("mcsim._kernels", reason="compiled kernels not built")


def test_backends_are_labelled():
    assert py.BACKEND == "python"
    assert cy.BACKEND == "cython"
    assert kernels.BACKEND in ("python", "cython")


@given(st.integers(0, (1 << 64) - 1), st.integers(1, 8))
def test_xor_fold_agrees(value, width):
    assert cy.xor_fold(value, width) == py.xor_fold(value, width)


@given(st.integers(0, (1 << 48) - 1), st.lists(st.integers(0, 12), min_size=1, max_size=6))
def test_extract_fields_agrees(address, widths):
    assert list(cy.extract_fields(address, widths)) == list(py.extract_fields(address, widths))


@pytest.mark.parametrize("seed", range(5))
def test_lru_sets_agree_op_by_op(seed):
    rng = random.Random(seed)
    sets, ways = 8, 4
    a, b = cy.LruSets(sets, ways), py.LruSets(sets, ways)
    for _ in range(4000):
        s = rng.randrange(sets)
        tag = rng.randrange(24)
        wa, wb = a.find(s, tag), b.find(s, tag)
        assert wa == wb
        if wa >= 0:
            if rng.random() < 0.1:
                a.invalidate(s, wa)
                b.invalidate(s, wb)
            else:
                a.touch(s, wa)
                b.touch(s, wb)
            continue
        mask = rng.choice([0xF, 0x3, 0xC, 0x5])
        va, vb = a.victim(s, mask), b.victim(s, mask)
        assert va == vb
        assert a.install(s, va, tag) == b.install(s, vb, tag)
        assert list(a.positions(s)) == list(b.positions(s))
        assert [a.tag_at(s, w) for w in range(ways)] == [b.tag_at(s, w) for w in range(ways)]


def test_simulate_lru_agrees():
    rng = random.Random(1)
    addrs = [rng.randrange(1 << 16) for _ in range(20000)]
    assert tuple(cy.simulate_lru(addrs, 64, 4, 6)) == tuple(py.simulate_lru(addrs, 64, 4, 6))


def test_simulation_identical_on_both_backends(tmp_path):
    import os
    import subprocess
    import sys

    script = (
        "from mcsim.config import SystemConfig, validate_config\n"
        "from mcsim.engine import run\n"
        "from mcsim.trace import generate_trace\n"
        "from mcsim.kernels import BACKEND\n"
        "t = generate_trace('RandomUniform', {'threads': 2, 'events': 300, 'footprint_blocks': 200}, seed=3)\n"
        "st = run(validate_config(SystemConfig(core_count=2)), t)\n"
        "print(BACKEND)\n"
        "print(st.to_json())\n"
    )
    outs = {}
    for pure in ("0", "1"):
        env = dict(os.environ, MCSIM_PURE_PYTHON=pure)
        proc = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
        backend, _, rest = proc.stdout.partition("\n")
        outs[backend] = rest
    assert set(outs) == {"cython", "python"}
    assert outs["cython"] == outs["python"]
