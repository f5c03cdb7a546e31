from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distmdp import wireless
from distmdp.errors import ModelValidationError
from distmdp.mdp import random_mdp
from distmdp.modelspec import load_spec, parse_grid, parse_spec, spec_from_mdp, symbol

MODELS = Path(__file__).resolve().parent.parent / "models"


def same_model(a, b):
    assert a.dims == b.dims and a.actions == b.actions
    assert [ls.symbols for ls in a.locals] == [ls.symbols for ls in b.locals]
    assert np.array_equal(a.kernel, b.kernel)
    assert np.array_equal(a.reward, b.reward)
    assert np.array_equal(a.initial, b.initial)
    assert a.discount == b.discount
    assert set(a.channels) == set(b.channels)
    for k in a.channels:
        assert np.array_equal(a.channels[k], b.channels[k])


@pytest.mark.parametrize("name,cfg", [("example4", wireless.example4_config), ("example5", wireless.example5_config),
                                      ("example7", wireless.example7_config)])
def test_shipped_specs_build_the_examples(name, cfg):
    same_model(load_spec(MODELS / f"{name}.spec").build(), wireless.build_mdp(cfg()))


def test_wireless_spec_round_trip():
    spec = load_spec(MODELS / "example7.spec")
    again = parse_spec(spec.serialize())
    assert again.model == spec.model and again.run == spec.run
    same_model(again.build(), spec.build())


def test_explicit_table_round_trip_is_textual_fixed_point(ex5):
    text = spec_from_mdp(ex5).serialize()
    assert parse_spec(text).serialize() == text
    same_model(parse_spec(text).build(), ex5)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from([(2,), (2, 2), (3, 2)]), st.integers(1, 3), st.floats(0, 0.3))
def test_random_model_round_trip(seed, dims, A, sparsity):
    m = random_mdp(np.random.default_rng(seed), dims, A, sparsity=sparsity)
    back = parse_spec(spec_from_mdp(m, {"seed": 3}).serialize())
    same_model(back.build(), m)
    assert back.run == {"seed": 3}


def test_rational_numbers_stay_exact():
    spec = parse_spec("[argmax]\nsupports.1 = 0 1 2\nprobs.1 = 1/3 1/3 1/3\n")
    assert spec.model["probs"][0] == [Fraction(1, 3)] * 3
    assert "1/3" in spec.serialize()


def test_symbols_and_grids():
    assert symbol("(0,1)") == (0, 1)
    assert symbol("-2") == -2 and symbol("a") == "a"
    assert parse_grid("0:1:5") == [Fraction(k, 4) for k in range(5)]
    assert parse_grid("0, 1/2 2") == [0, Fraction(1, 2), 2]


def test_tuple_symbols_in_explicit_tables():
    text = """[mdp]
discount = 1/2
node 1 = (0,0) (0,1)
actions = x
kernel x 0 = 1:1
kernel x 1 = 1:1
reward x 0 = 1
"""
    m = parse_spec(text).build()
    assert m.locals[0].symbols == ((0, 0), (0, 1))
    assert m.expected_reward[0, 0] == 1.0


@pytest.mark.parametrize("text,line,fragment", [
    ("users = 2\n", 1, "before the first"),
    ("[wireless]\nusers = 2\nbogus = 1\n", 3, "unknown [wireless] key"),
    ("[wireless]\nusers = 2\nbuffer_max = two\n", 3, "buffer_max"),
    ("[wireless]\nusers=1\n[argmax]\nnodes = 1\nsupports = 1\n", 3, "exactly one"),
    ("[argmax]\nsupports.1 = 1 2\nprobs.1 = 1/2 1/4\n", 3, "probs"),
    ("[run]\nseed = 1\n[argmax]\nnodes = 1\nsupports = 1 2\n[run]\n", 6, "twice"),
    ("[mdp]\ndiscount = 1/2\nnode 1 = a b\nactions = 1\nkernel 1 0 = 1/2 1/4\n", 5, "kernel"),
    ("[argmax]\nnodes = 1\nsupports = 1 2\n[run]\nmethod = annealing\n", 5, "method"),
    ("[argmax]\nnodes = 1\nsupports = 1 2\nthis line has no equals\n", 4, "key = value"),
])
def test_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ModelValidationError) as info:
        parse_spec(text).build()
    assert info.value.line == line
    assert f"line {line}:" in str(info.value)
    assert fragment in str(info.value)
