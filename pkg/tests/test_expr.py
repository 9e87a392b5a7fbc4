"""Parser, printer and jet tests for the expression module."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trapflow import expr as ex


def test_parse_torus_symbol():
    e = ex.parse("xi_y + sin(x)*xi_x")
    assert e == ex.Binary("add", ex.Name("xi_y"),
                          ex.Binary("mul", ex.Unary("sin", ex.Name("x")),
                                    ex.Name("xi_x")))


def test_parse_constant_zero():
    assert ex.parse("0") == ex.Num(0.0)


def test_parse_roundtrip_scattering_symbol():
    src = "cos(2*theta)*(sigma^2 - eta^2) + 2*sin(2*theta)*sigma*eta + h"
    e = ex.parse(src)
    again = ex.parse(ex.to_str(e))
    assert e == again


def test_precedence():
    # pow binds tighter than unary minus, which binds tighter than mul
    assert ex.to_str(ex.parse("-x^2")) == "-x^2"
    assert ex.evaluate(ex.parse("-x^2"), {"x": 3.0}) == -9.0
    assert ex.evaluate(ex.parse("2^3^2"), {}) == 512.0  # right associative
    assert ex.evaluate(ex.parse("2*3+4"), {}) == 10.0
    assert ex.evaluate(ex.parse("2**3"), {}) == 8.0


def test_parse_errors_carry_offset():
    with pytest.raises(ex.ParseError) as ei:
        ex.parse("sin(x")
    assert ei.value.offset == 5
    with pytest.raises(ex.ParseError):
        ex.parse("")
    with pytest.raises(ex.ParseError):
        ex.parse("foo(x)")  # unknown function


def test_unbound_name_is_an_error_not_zero():
    e = ex.parse("x + y")
    with pytest.raises(ex.UnboundNameError):
        ex.evaluate(e, {"x": 1.0})
    with pytest.raises(ex.UnboundNameError):
        ex.check_bound(e, {"x"})


def test_eval_trivial():
    assert ex.evaluate(ex.parse("sin(x)"), {"x": 0.0}) == 0.0


def test_eval_kerr_mu_horizon_root():
    # mu(r) = (r^2 + a^2)(1 - Lam r^2/3) - 2 M r has a root at r = 2 for
    # M = 1, a = 0, Lam = 0 (hand: r^2 - 2r)
    mu = ex.parse("(r^2 + a^2)*(1 - Lam*r^2/3) - 2*M*r")
    env = {"r": 2.0, "a": 0.0, "Lam": 0.0, "M": 1.0}
    assert ex.evaluate(mu, env) == pytest.approx(0.0, abs=1e-15)


def test_eval_kerr_radial_potential():
    # F(r) = ((r^2+a^2) xi_t + a xi_phi)^2 / mu at r=3, M=1, a=0, Lam=0,
    # xi_t = 1 is 81/3 = 27 by hand substitution
    F = ex.parse("((r^2 + a^2)*xi_t + a*xi_phi)^2 / ((r^2 + a^2)*(1 - Lam*r^2/3) - 2*M*r)")
    env = {"r": 3.0, "a": 0.0, "Lam": 0.0, "M": 1.0, "xi_t": 1.0, "xi_phi": 0.0}
    assert ex.evaluate(F, env) == pytest.approx(27.0, rel=1e-14)


def test_domain_errors():
    with pytest.raises(ex.EvalDomainError):
        ex.evaluate(ex.parse("sqrt(x)"), {"x": -1.0})
    with pytest.raises(ex.EvalDomainError):
        ex.evaluate(ex.parse("log(x)"), {"x": 0.0})
    with pytest.raises(ex.EvalDomainError):
        ex.evaluate(ex.parse("1/x"), {"x": 0.0})


def test_jet2_square():
    j = ex.jet2(ex.parse("x^2"), {"x": 3.0}, ["x"])
    assert j.v == 9.0
    assert np.allclose(j.g, [6.0])
    assert np.allclose(j.h, [[2.0]])


def test_jet2_hand_chain_rule():
    # e = sin(x) xi_x at (x = pi/2, xi_x = 2): value 2, d_x = cos(pi/2)*2 = 0,
    # d_xi = 1
    j = ex.jet2(ex.parse("sin(x)*xi_x"), {"x": math.pi / 2, "xi_x": 2.0},
                ["x", "xi_x"])
    assert j.v == pytest.approx(2.0)
    assert np.allclose(j.g, [0.0, 1.0], atol=1e-15)


def test_jet_kink_flagged():
    with pytest.raises(ex.NonSmoothError):
        ex.jet2(ex.parse("abs(x)"), {"x": 1e-12}, ["x"])
    with pytest.raises(ex.NonSmoothError):
        ex.jet1(ex.parse("sign(x)"), {"x": 0.0}, ["x"])
    # plain evaluation away from derivatives is fine
    assert ex.evaluate(ex.parse("sign(x)"), {"x": -0.5}) == -1.0


# ---------------------------------------------------------------------------
# finite-difference oracle on random ASTs


def _random_ast(rng, names, depth):
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.4:
            return ex.Num(round(rng.uniform(0.2, 3.0), 3))
        return ex.Name(names[rng.integers(len(names))])
    kind = rng.random()
    if kind < 0.35:
        op = ["sin", "cos", "exp"][rng.integers(3)]
        return ex.Unary(op, _random_ast(rng, names, depth - 1))
    op = ["add", "sub", "mul", "div", "pow"][rng.integers(5)]
    lhs = _random_ast(rng, names, depth - 1)
    rhs = _random_ast(rng, names, depth - 1)
    if op == "pow":
        rhs = ex.Num(float(rng.integers(1, 4)))
    if op == "div":
        # keep denominators away from zero
        rhs = ex.Binary("add", ex.Unary("exp", rhs), ex.Num(0.5))
    return ex.Binary(op, lhs, rhs)


def _fd_gradient(e, env, coords, h=1e-6):
    g = []
    for c in coords:
        up = dict(env)
        dn = dict(env)
        up[c] += h
        dn[c] -= h
        g.append((ex.evaluate(e, up) - ex.evaluate(e, dn)) / (2 * h))
    return np.array(g)


def test_jet_gradient_matches_finite_differences_on_random_asts():
    rng = np.random.default_rng(7)
    coords = ["x", "y", "z"]
    checked = 0
    while checked < 100:
        e = _random_ast(rng, coords, depth=6)
        env = {c: float(rng.uniform(-1.0, 1.0)) for c in coords}
        try:
            j = ex.jet2(e, env, coords)
        except ex.ExprError:
            continue
        # keep the central-difference oracle in its validity range: steep
        # exp chains have third derivatives that dominate the h^2 truncation
        if abs(j.v) > 100 or np.max(np.abs(j.g)) > 100 or np.max(np.abs(j.h)) > 1e4:
            continue
        fd = _fd_gradient(e, env, coords)
        scale = 1.0 + np.max(np.abs(fd))
        assert np.max(np.abs(np.asarray(j.g) - fd)) / scale < 1e-6
        # round-trip while we are here
        assert ex.parse(ex.to_str(e)) == e
        checked += 1


def test_jet2_hessian_symmetry_and_fd():
    rng = np.random.default_rng(11)
    coords = ["x", "y"]
    e = ex.parse("sin(x*y) + exp(x - y^2)/(2 + cos(x))")
    for _ in range(20):
        env = {c: float(rng.uniform(-1.5, 1.5)) for c in coords}
        j = ex.jet2(e, env, coords)
        asym = np.max(np.abs(j.h - j.h.T))
        assert asym <= 1e-12 * max(1.0, np.max(np.abs(j.h)))
        # Hessian against finite differences of the exact gradient
        h = 1e-6
        for k, c in enumerate(coords):
            up = dict(env); up[c] += h
            dn = dict(env); dn[c] -= h
            col = (np.asarray(ex.jet1(e, up, coords).g)
                   - np.asarray(ex.jet1(e, dn, coords).g)) / (2 * h)
            assert np.max(np.abs(j.h[:, k] - col)) < 1e-5 * (1 + np.max(np.abs(col)))


def test_symbolic_diff_matches_jets():
    rng = np.random.default_rng(13)
    coords = ["x", "y", "z"]
    checked = 0
    while checked < 60:
        e = _random_ast(rng, coords, depth=5)
        env = {c: float(rng.uniform(-1.0, 1.0)) for c in coords}
        try:
            j = ex.jet1(e, env, coords)
            dx = ex.evaluate(ex.diff(e, "x"), env)
        except ex.ExprError:
            continue
        if abs(j.v) > 1e6:
            continue
        assert dx == pytest.approx(j.g[0], rel=1e-10, abs=1e-10)
        checked += 1


# ---------------------------------------------------------------------------
# hypothesis: print/parse round trip on generated sources

_name = st.sampled_from(["x", "y", "xi_x", "tau", "sigma"])
_leaf = st.one_of(_name.map(ex.Name),
                  st.floats(min_value=0.0, max_value=9.0,
                            allow_nan=False).map(lambda v: ex.Num(round(v, 3))))


def _trees(depth):
    if depth == 0:
        return _leaf
    sub = _trees(depth - 1)
    return st.one_of(
        _leaf,
        st.tuples(st.sampled_from(["sin", "cos", "exp", "neg", "abs"]), sub)
          .map(lambda t: ex.Unary(*t)),
        st.tuples(st.sampled_from(["add", "sub", "mul", "div", "pow"]), sub, sub)
          .map(lambda t: ex.Binary(*t)),
    )


@settings(max_examples=150, deadline=None)
@given(_trees(4))
def test_print_parse_identity(tree):
    assert ex.parse(ex.to_str(tree)) == tree
    # canonical strings are a fixed point of print(parse(.))
    s = ex.to_str(tree)
    assert ex.to_str(ex.parse(s)) == s
