import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfrbsde.dsl import (
    Binary,
    EvalDomainError,
    Num,
    ParseError,
    Unary,
    UnknownIdentifierError,
    Var,
    compile_expr,
    evaluate,
    evaluate_scalar,
    parse,
    to_source,
)
from mfrbsde.errors import ConfigError
from tests.exprgen import random_expr

ENV0 = dict(t=0.0, y=0.0, z=0.0, b=0.0, m1=0.0, am=0.0)


def test_parse_examples():
    assert parse("0") == Num(0.0)
    assert parse("0.5*m1 + 0.5*sq(z)") == Binary(
        "+", Binary("*", Num(0.5), Var("m1")), Binary("*", Num(0.5), Unary("sq", Var("z")))
    )
    assert parse("max(1 - t, y)") == Binary("max", Binary("-", Num(1.0), Var("t")), Var("y"))


def test_precedence_and_associativity():
    assert parse("-x^2".replace("x", "y")) == Unary("neg", Binary("^", Var("y"), Num(2.0)))
    assert parse("2^3^2") == Binary("^", Num(2.0), Binary("^", Num(3.0), Num(2.0)))
    assert parse("1 - 2 - 3") == Binary("-", Binary("-", Num(1.0), Num(2.0)), Num(3.0))
    assert parse("2^-1") == Binary("^", Num(2.0), Unary("neg", Num(1.0)))
    assert evaluate_scalar(parse("2^3^2")) == 512.0
    assert evaluate_scalar(parse("8 / 4 / 2")) == 1.0


def test_whitespace_insensitive():
    assert parse("  max( 1-t ,y )\n") == parse("max(1-t,y)")


def test_eval_examples():
    assert evaluate_scalar(parse("0"), **ENV0) == 0.0
    assert evaluate_scalar(parse("0.5*m1 + 0.5*sq(z)"), **{**ENV0, "m1": 2.0, "z": 1.0}) == 1.5
    assert evaluate_scalar(parse("abs(b)"), b=-3.0) == 3.0


@pytest.mark.parametrize(
    "src,offset",
    [("1 +", 3), ("(y", 2), ("y $ 2", 2), ("max(y)", 5), ("2 3", 2), ("", 0), ("sq y", 3)],
)
def test_syntax_errors_carry_offsets(src, offset):
    with pytest.raises(ParseError) as exc:
        parse(src)
    assert exc.value.offset == offset
    assert isinstance(exc.value, ConfigError)


def test_byte_offsets_count_utf8():
    with pytest.raises(ParseError) as exc:
        parse("y + é")
    assert exc.value.offset == 4


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as exc:
        parse("0.5*x + y")
    assert exc.value.name == "x" and exc.value.offset == 4


@pytest.mark.parametrize("src", ["log(y)", "1/y", "0^(0-1)", "y^0.5"])
def test_domain_errors(src):
    env = {**ENV0, "y": -1.0} if src == "y^0.5" else ENV0
    with pytest.raises(EvalDomainError) as exc:
        evaluate_scalar(parse(src), **env)
    assert exc.value.subexpr is not None


def test_no_nan_escapes():
    with pytest.raises(EvalDomainError):
        evaluate_scalar(parse("exp(y) - exp(y)"), y=1000.0)


def test_nonfinite_env_rejected():
    with pytest.raises(ArithmeticError):
        evaluate_scalar(parse("y"), y=math.inf)


def test_vectorized_evaluation():
    f = compile_expr("max(y, 0) + z*b")
    y = np.array([-1.0, 2.0])
    np.testing.assert_array_equal(f(y=y, z=2.0, b=np.array([1.0, 3.0])), [2.0, 8.0])
    assert f.free == {"y", "z", "b"}
    assert f.uses("z") and not f.uses("m1", "am")


def test_literals_are_nonnegative():
    with pytest.raises(ValueError):
        Num(-1.0)
    assert to_source(parse("1e-3")) == "0.001"
    assert to_source(parse("2.50")) == "2.5"


@pytest.mark.parametrize("seed", range(5))
def test_seeded_round_trip(seed):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        e = random_expr(rng)
        assert parse(to_source(e)) == e


@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    e = random_expr(np.random.default_rng(seed), depth=5)
    src = to_source(e)
    assert parse(src) == e
    assert to_source(parse(src)) == src


@given(st.integers(0, 2**32 - 1))
def test_evaluation_deterministic(seed):
    e = random_expr(np.random.default_rng(seed), depth=3)
    env = dict(t=0.3, y=-1.2, z=0.7, b=2.0, m1=0.1, am=0.4)
    try:
        first = evaluate(e, env)
    except EvalDomainError:
        return
    assert not np.isnan(first)
    np.testing.assert_array_equal(first, evaluate(e, env))
