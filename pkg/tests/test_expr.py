import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barrierkit.errors import ConfigError, NumericError, ParseError
from barrierkit.expr import (Binary, Const, DualScalar, Var, compile_expression,
                             decode_config_text, eval_with_gradient, evaluate, free_symbols,
                             load_system_config, parse_expression, render)
from barrierkit.fixtures import FIXTURES, academic, linear_spring, nonlinear_spring


def test_parse_academic_dynamics():
    ast = parse_expression("1 - x2^2")
    assert ast == Binary("sub", Const(1.0), Binary("pow", Var("x2"), Const(2)))


def test_parse_nonlinear_spring_expression():
    text = "-(k/m)*(x1 + x1^3) - (b/m)*x2 + u1/m"
    ast = parse_expression(text)
    env = {"k": 2.0, "m": 1.0, "b": 2.0, "x1": 1.0, "x2": 1.0, "u1": 0.0}
    assert evaluate(ast, env) == pytest.approx(-6.0)
    assert free_symbols(ast) == {"k", "m", "b", "x1", "x2", "u1"}


def test_precedence_and_associativity():
    assert evaluate(parse_expression("2 - 3 - 4"), {}) == -5
    assert evaluate(parse_expression("8 / 4 / 2"), {}) == 1
    assert evaluate(parse_expression("-2^2"), {}) == -4
    assert evaluate(parse_expression("2*3^2"), {}) == 18
    assert evaluate(parse_expression("(1 + 2)*3"), {}) == 9


def test_syntax_error_offset():
    with pytest.raises(ParseError) as err:
        parse_expression("x1 +")
    assert err.value.offset == 4
    assert "offset 4" in str(err.value)


def test_unknown_identifier_lists_symbols():
    with pytest.raises(ParseError, match="valid symbols: x1, x2"):
        parse_expression("x1 + y", symbols={"x1", "x2"})


def test_non_integer_exponent_rejected():
    with pytest.raises(ParseError):
        parse_expression("x1^0.5")
    with pytest.raises(ParseError):
        parse_expression("x1^x2")


def test_eval_with_gradient_examples():
    v, g = eval_with_gradient(parse_expression("1 - x2^2"), {"x1": 0.0, "x2": 2.0}, ["x1", "x2"])
    assert v == -3 and np.allclose(g, [0, -4])
    v, g = eval_with_gradient(parse_expression("x1 - 3"), {"x1": 3.0, "x2": 0.0}, ["x1", "x2"])
    assert v == 0 and np.allclose(g, [1, 0])
    v, g = eval_with_gradient(parse_expression("x1*x2"), {"x1": 2.0, "x2": 5.0}, ["x1"])
    assert v == 10 and np.allclose(g, [5])


def test_domain_errors_report_location():
    with pytest.raises(NumericError, match="offset 2"):
        evaluate(parse_expression("1 / x1"), {"x1": 0.0})
    with pytest.raises(NumericError, match="offset 0"):
        eval_with_gradient(parse_expression("sqrt(x1)"), {"x1": -1.0}, ["x1"])


def test_dual_rules():
    a, b = DualScalar(2.0, 1.0), DualScalar(3.0, 0.5)
    p = a * b
    assert (p.value, p.deriv) == (6.0, 1.0 * 3.0 + 2.0 * 0.5)
    q = a / b
    assert q.deriv == pytest.approx((1.0 * 3.0 - 2.0 * 0.5) / 9.0)
    assert a.sin().deriv == pytest.approx(math.cos(2.0))
    assert (a ** 3).deriv == pytest.approx(12.0)


CORPUS = [
    "1 - x2^2", "x1 - 3", "x1*x2", "-(k/m)*(x1 + x1^3) - (b/m)*x2 + u1/m", "x2",
    "-x1", "--x1", "-(x1)", "(x1)", "x1 + x2 + u1", "x1 - (x2 - u1)", "x1 - x2 - u1",
    "x1 / (x2 / u1)", "x1 / x2 / u1", "x1 * (x2 + 1)", "(x1 + 1) * (x2 - 1)", "x1^2^3",
    "(x1^2)^3", "x1^-2", "-x1^2", "(-x1)^2", "sin(x1)", "cos(x1 + x2)", "tanh(2*x1)",
    "exp(-x1^2)", "sqrt(1 + x2^2)", "abs(x1)", "sin(cos(tanh(x1)))", "1e-3*x1", "2.5e2 - x2",
    "0.5*u1", "x1*x2*u1", "x1/(1 + x2^2)", "exp(x1)*sin(x2)", "-(x1 - 2)^3",
    "1 - -x1", "x1 - -(-x2)", "3", "0", "-1", "((((x1))))", "x1 + x2^2*u1 - 1/(2 + x1^2)",
    "sqrt(x1^2 + x2^2) - 1", "x1^4 - 2*x1^2 + 1", "(x1 - 1)*(x1 + 1)", "x2*x2 - x1*x1",
    "-(2*x1)/(3 - x2)", "tanh(x1) - tanh(x2)", "exp(x1 - x2)/(1 + exp(x1 - x2))",
    "cos(x1)^2 + sin(x1)^2",
]


def test_corpus_size():
    assert len(CORPUS) == 50


@pytest.mark.parametrize("text", CORPUS)
def test_render_round_trip(text):
    ast = parse_expression(text)
    assert parse_expression(render(ast)) == ast


def _fixture_expressions():
    out = []
    for name, factory in FIXTURES.items():
        doc = decode_config_text(factory().config_text)
        params = {k: float(v) for k, v in doc.get("parameters", {}).items()}
        for text in doc["dynamics"]["f"] + doc["constraints"]["g"]:
            out.append(pytest.param(text, params, id=f"{name}:{text}"))
    return out


@pytest.mark.parametrize("text, params", _fixture_expressions())
def test_dual_matches_finite_differences(text, params):
    rng = np.random.default_rng(7)
    ast = parse_expression(text)
    wrt = ["x1", "x2", "u1"]
    fn = compile_expression(ast)
    h = 1e-6
    for _ in range(200):
        vals = dict(zip(wrt, rng.uniform(-2, 2, 3)))
        env = {**params, **vals}
        _, grad = eval_with_gradient(ast, env, wrt)
        for j, w in enumerate(wrt):
            up, dn = dict(env), dict(env)
            up[w] += h
            dn[w] -= h
            fd = (fn(up) - fn(dn)) / (2 * h)
            assert abs(grad[j] - fd) <= 1e-6 or abs(grad[j] - fd) <= 1e-5 * abs(fd)


_leaf = st.one_of(st.sampled_from(["x1", "x2", "u1"]),
                  st.integers(0, 9).map(str))


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
            lambda t: f"({t[0]} {t[1]} {t[2]})"),
        children.map(lambda c: f"-{c}"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"{t[0]}^{t[1]}"),
        st.tuples(st.sampled_from(["sin", "cos", "tanh"]), children).map(lambda t: f"{t[0]}({t[1]})"),
    )


@settings(max_examples=150, deadline=None)
@given(st.recursive(_leaf, _combine, max_leaves=8))
def test_round_trip_property(text):
    ast = parse_expression(text)
    assert parse_expression(render(ast)) == ast


def test_load_academic_config():
    sysm, cs, ctrl = load_system_config(academic().config_text)
    assert (sysm.n, sysm.m, cs.p) == (2, 1, 2)
    assert sysm.is_affine
    assert np.allclose(sysm.f([0, 2], [1]), [-3, 1])
    assert np.allclose(sysm.input_matrix([0.3, 0.1]), [[0], [1]])


def test_load_linear_spring_config():
    sysm, cs, ctrl = load_system_config(linear_spring().config_text)
    assert (sysm.n, sysm.m, cs.p) == (2, 1, 1)
    assert sysm.is_affine


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_config_matches_closures(name, rng):
    fx = FIXTURES[name]()
    sysm, cs, _ = load_system_config(fx.config_text)
    for _ in range(50):
        x = rng.uniform(-2, 2, 2)
        u = rng.uniform(-1, 1, 1)
        assert np.allclose(sysm.f(x, u), fx.system.f(x, u), atol=1e-12)
        assert np.allclose(sysm.jac(x, u), fx.system.jac(x, u), atol=1e-12)
        assert np.allclose(cs.values(x), fx.constraints.values(x), atol=1e-12)
        assert np.allclose(cs.gradients(x), fx.constraints.gradients(x), atol=1e-12)


def test_affine_detection_sound(rng):
    for name in sorted(FIXTURES):
        sysm, _, _ = load_system_config(FIXTURES[name]().config_text)
        for _ in range(100):
            x, u = rng.uniform(-3, 3, 2), rng.uniform(-1, 1, 1)
            f = sysm.f(x, u)
            assert np.linalg.norm(sysm.drift(x) + sysm.input_matrix(x) @ u - f) <= 1e-10 * (1 + np.linalg.norm(f))


def test_non_affine_detected():
    doc = {"system": {"n": 1, "m": 1}, "dynamics": {"f": ["x1 + u1^2"]},
           "constraints": {"g": ["x1 - 1"]}, "control": {"kind": "ball"}}
    sysm, _, _ = load_system_config(doc)
    assert not sysm.is_affine


def test_schema_errors_have_key_paths():
    doc = {"system": {"n": 2, "m": 1, "p": 2}, "dynamics": {"f": ["x2", "u1"]},
           "constraints": {"g": ["x1 - 1"]}}
    with pytest.raises(ConfigError, match="constraints.g"):
        load_system_config(doc)
    with pytest.raises(ConfigError, match="system.n"):
        load_system_config({"system": {"m": 1}})
    bad_kind = {"system": {"n": 1, "m": 1}, "dynamics": {"f": ["u1"]},
                "constraints": {"g": ["x1"]}, "control": {"kind": "disc"}}
    with pytest.raises(ConfigError, match="control.kind"):
        load_system_config(bad_kind)


def test_abs_rejected_in_dynamics():
    doc = {"system": {"n": 1, "m": 1}, "dynamics": {"f": ["abs(x1) + u1"]},
           "constraints": {"g": ["x1 - 1"]}}
    with pytest.raises(ConfigError):
        load_system_config(doc)


def test_parse_error_in_config_names_expression():
    doc = {"system": {"n": 1, "m": 1}, "dynamics": {"f": ["x1 +"]}, "constraints": {"g": ["x1"]}}
    with pytest.raises(ParseError, match=r"dynamics.f\[0\]"):
        load_system_config(doc)


def test_unknown_parameter_is_an_error():
    doc = {"system": {"n": 1, "m": 1}, "dynamics": {"f": ["k*x1 + u1"]}, "constraints": {"g": ["x1"]}}
    with pytest.raises(ParseError, match="unknown identifier 'k'"):
        load_system_config(doc)


def test_json_equivalent_and_box_control():
    doc = {"system": {"name": "box", "n": 2, "m": 1}, "dynamics": {"f": ["x2", "u1"]},
           "constraints": {"g": ["x1 - 1"]}, "control": {"kind": "box", "lower": [-2], "upper": [1]}}
    sysm, cs, ctrl = load_system_config(json.dumps(doc))
    assert ctrl.kind.value == "box" and np.allclose(ctrl.lo, [-2]) and np.allclose(ctrl.hi, [1])


def test_config_from_path(tmp_path):
    p = tmp_path / "spring.toml"
    p.write_text(nonlinear_spring().config_text)
    sysm, _, _ = load_system_config(p)
    assert np.allclose(sysm.f([1, 1], [0]), [1, -6])


def test_malformed_toml():
    with pytest.raises(ConfigError, match="TOML"):
        load_system_config("[system]\nn = \n")
