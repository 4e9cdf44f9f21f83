import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slopeflow.func_model import (
    Max,
    Min,
    ParseError,
    Poly,
    Scale,
    Sum,
    active_pieces,
    active_signature,
    eval_expr,
    format_expr,
    parse_expr,
    piece_gradient,
)

FIG_TEXT = "max(x1+x2, abs(x1-x2)) + x1*(x1+1) + x2*(x2+1) + 100"
EX_TEXT = "-x1 + min(x2, 0)"


@pytest.fixture(scope="module")
def fig():
    return parse_expr(FIG_TEXT, 2)


@pytest.fixture(scope="module")
def ex():
    return parse_expr(EX_TEXT, 2)


class TestParse:
    def test_single_monomial(self):
        e = parse_expr("x1^2", 1)
        assert isinstance(e, Poly)
        assert e.monomials == ((1.0, (2,)),)

    def test_fig_structure(self, fig):
        assert isinstance(fig, Sum)
        assert any(isinstance(ch, Max) for ch in fig.children)

    def test_example_structure(self, ex):
        assert isinstance(ex, Sum)
        assert any(isinstance(ch, Min) for ch in ex.children)

    def test_abs_desugars_to_max(self):
        e = parse_expr("abs(x1)", 1)
        assert isinstance(e, Max)
        assert len(e.children) == 2

    def test_syntax_error_position(self):
        with pytest.raises(ParseError) as ei:
            parse_expr("max(x1,,x2)", 2)
        assert ei.value.pos == 7

    def test_dimension_mismatch(self):
        with pytest.raises(ParseError):
            parse_expr("x3", 2)

    def test_negative_exponent(self):
        with pytest.raises(ParseError):
            parse_expr("x1^-2", 1)

    def test_nonpoly_product_rejected(self):
        with pytest.raises(ParseError):
            parse_expr("max(x1,x2)*max(x1,0)", 2)

    def test_single_arg_extremum_rejected(self):
        with pytest.raises(ParseError):
            parse_expr("max(x1)", 1)

    def test_roundtrip_corpus(self):
        for text, n in ((FIG_TEXT, 2), (EX_TEXT, 2), ("x1^2", 1)):
            e = parse_expr(text, n)
            assert parse_expr(format_expr(e), n) == e


class TestEval:
    def test_fig_values(self, fig):
        assert eval_expr(fig, np.array([0.0, 0.0])) == 100.0
        assert eval_expr(fig, np.array([-0.5, -0.5])) == 99.5

    def test_example_value(self, ex):
        assert eval_expr(ex, np.array([3.0, 0.0])) == -3.0

    def _all_selection_values(self, e, x):
        """Brute-force oracle: evaluate every full max/min selection."""
        if isinstance(e, Poly):
            return [eval_expr(e, x)]
        if isinstance(e, Sum):
            vals = [0.0]
            for ch in e.children:
                vals = [v + w for v in vals for w in self._all_selection_values(ch, x)]
            return vals
        if isinstance(e, Scale):
            return [e.c * v for v in self._all_selection_values(e.child, x)]
        if isinstance(e, (Max, Min)):
            agg = max if isinstance(e, Max) else min
            per_child = [self._all_selection_values(ch, x) for ch in e.children]
            return [agg(v for vs in per_child for v in vs)]
        raise TypeError(type(e))

    def test_eval_matches_selection_oracle(self, fig, ex):
        rng = np.random.default_rng(0)
        for e in (fig, ex):
            for _ in range(50):
                x = rng.uniform(-3, 3, size=2)
                assert eval_expr(e, x) == self._all_selection_values(e, x)[0]


class TestActivePieces:
    def test_fig_origin_three_pieces(self, fig):
        assert len(active_pieces(fig, np.zeros(2), 0.0)) == 3

    def test_example_min_tie(self, ex):
        assert len(active_pieces(ex, np.array([0.7, 0.0]), 0.0)) == 2

    def test_example_strict(self, ex):
        assert len(active_pieces(ex, np.array([0.7, 1.0]), 0.0)) == 1

    def test_piece_gradients_at_origin(self, fig):
        grads = {tuple(p.gradient(np.zeros(2))) for p in active_pieces(fig, np.zeros(2), 0.0)}
        assert grads == {(2.0, 2.0), (2.0, 0.0), (0.0, 2.0)}

    def test_example_piece_gradient(self, ex):
        grads = {tuple(p.gradient(np.array([0.7, 0.0]))) for p in active_pieces(ex, np.array([0.7, 0.0]), 0.0)}
        assert grads == {(-1.0, 1.0), (-1.0, 0.0)}

    def test_piece_value_matches_f(self, fig):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.uniform(-2, 2, size=2)
            for p in active_pieces(fig, x):
                assert p.value(x) == pytest.approx(eval_expr(fig, x), abs=1e-8)

    def test_gradient_finite_difference(self, fig, ex):
        rng = np.random.default_rng(2)
        h = 1e-5
        for e in (fig, ex):
            checked = 0
            while checked < 10:
                x = rng.uniform(-2, 2, size=2)
                pcs = active_pieces(e, x, 1e-3)
                if len(pcs) != 1:
                    continue
                g = piece_gradient(pcs[0], x)
                for i in range(2):
                    d = np.zeros(2)
                    d[i] = h
                    fd = (eval_expr(e, x + d) - eval_expr(e, x - d)) / (2 * h)
                    assert fd == pytest.approx(g[i], rel=1e-6, abs=1e-6)
                checked += 1

    def test_signature_is_hashable_and_stable(self, fig):
        x = np.array([0.3, -0.7])
        assert active_signature(fig, x) == active_signature(fig, x.copy())


@st.composite
def poly_texts(draw):
    n = draw(st.integers(1, 3))
    terms = []
    for _ in range(draw(st.integers(1, 3))):
        c = draw(st.integers(1, 9))
        v = draw(st.integers(1, n))
        p = draw(st.integers(1, 3))
        terms.append(f"{c}*x{v}^{p}")
    return " + ".join(terms), n


@settings(max_examples=50, deadline=None, derandomize=True)
@given(poly_texts())
def test_parse_print_roundtrip_random(tn):
    text, n = tn
    e = parse_expr(text, n)
    assert parse_expr(format_expr(e), n) == e
