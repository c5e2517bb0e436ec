import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lstmdep.autodiff import (Graph, NonFiniteError, ParameterStore, ShapeError, glorot,
                              numeric_gradient)


def test_tanh_of_zero_is_zero():
    g = Graph()
    assert np.array_equal(g.tanh(g.constant(np.zeros(3))).value, np.zeros(3))


def test_concat():
    g = Graph()
    out = g.concat([g.constant([1.0, 2.0]), g.constant([3.0])])
    assert out.value.tolist() == [1.0, 2.0, 3.0]


def test_identity_matvec():
    g = Graph()
    out = g.matvec(g.constant(np.eye(2)), g.constant([5.0, 7.0]))
    assert out.value.tolist() == [5.0, 7.0]


def test_shape_mismatch_names_both_shapes():
    g = Graph()
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)"):
        g.matvec(g.constant(np.zeros((2, 3))), g.constant(np.zeros(2)))
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        g.add(g.constant(np.zeros(2)), g.constant(np.zeros(3)))


def test_rank_three_rejected():
    with pytest.raises(ShapeError):
        Graph().constant(np.zeros((2, 2, 2)))


def test_gradient_of_linear_map_has_rows_equal_to_x():
    x = np.array([1.0, -2.0, 0.5])
    g = Graph({"W": np.ones((4, 3))})
    loss = g.sum(g.matvec(g.parameter("W"), g.constant(x)))
    grad = g.backward(loss)["W"]
    assert np.array_equal(grad, np.tile(x, (4, 1)))


def test_pick_gradient_is_one_hot():
    g = Graph({"v": np.arange(5.0)})
    grad = g.backward(g.pick(g.parameter("v"), 2))["v"]
    assert grad.tolist() == [0, 0, 1, 0, 0]


def test_non_scalar_loss_rejected():
    g = Graph({"v": np.zeros(3)})
    with pytest.raises(ShapeError):
        g.backward(g.parameter("v"))


def test_unreachable_parameter_gets_zero_gradient():
    g = Graph({"a": np.ones(2), "b": np.ones(3)})
    grads = g.backward(g.sum(g.parameter("a")))
    assert np.array_equal(grads["b"], np.zeros(3))


def test_max_ties_go_to_lowest_index():
    g = Graph()
    node = g.max(g.constant([1.0, 3.0, 3.0, 0.0]))
    assert node.argmax == 1
    node = g.max(g.constant([1.0, 3.0, 3.0, 0.0]), [3, 2, 0])
    assert node.argmax == 2


def test_hinge():
    g = Graph()
    assert g.hinge(g.constant(-2.0)).value.tolist() == [0.0]
    assert g.hinge(g.constant(1.5)).value.tolist() == [1.5]


def test_outer_add_layout():
    g = Graph()
    a = g.constant([[1.0, 10.0], [2.0, 20.0]])
    b = g.constant([[100.0, 0.0], [200.0, 0.0], [300.0, 0.0]])
    out = g.outer_add(a, b).value
    assert out.shape == (6, 2)
    assert out[1 * 3 + 2].tolist() == [302.0, 20.0]


def test_op_counts():
    g = Graph({"W": np.eye(2)})
    w = g.parameter("W")
    x = g.constant([1.0, 1.0])
    g.matvec(w, g.matvec(w, x))
    assert g.op_counts()["matvec"] == 2
    assert g.parameter("W") is w  # parameters are cached per graph


# -- finite-difference checks, one per differentiable op ---------------------------

def _check(build, shapes, seed=0):
    """Compare backward() with central differences for ``build(g, *params)``."""
    rng = np.random.default_rng(seed)
    params = {f"p{i}": rng.normal(size=s) for i, s in enumerate(shapes)}

    def loss_value():
        g = Graph(params)
        return float(build(g, *(g.parameter(k) for k in params)).value[0])

    g = Graph(params)
    grads = g.backward(build(g, *(g.parameter(k) for k in params)))
    for name, value in params.items():
        numeric = numeric_gradient(loss_value, value)
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-6, atol=1e-8, err_msg=name)


def _weighted(g, node, seed=1):
    # sum(node * r) for a fixed random r, so every entry matters differently
    r = np.random.default_rng(seed).normal(size=node.shape)
    flat = node if node.value.ndim == 1 else g.concat([g.pick(node, i) for i in range(node.shape[0])])
    return g.sum(g.mul(flat, g.constant(r.reshape(-1))))


@pytest.mark.parametrize("name,build,shapes", [
    ("add", lambda g, a, b: _weighted(g, g.add(a, b)), [(4,), (4,)]),
    ("add_broadcast", lambda g, a, b: _weighted(g, g.add(a, b)), [(3, 4), (4,)]),
    ("add_all", lambda g, a, b: _weighted(g, g.add_all([a, b, a])), [(4,), (4,)]),
    ("sub", lambda g, a, b: _weighted(g, g.sub(a, b)), [(4,), (4,)]),
    ("mul", lambda g, a, b: _weighted(g, g.mul(a, b)), [(4,), (4,)]),
    ("scalar_add", lambda g, a: _weighted(g, g.scalar_add(a, 2.5)), [(4,)]),
    ("scalar_mul", lambda g, a: _weighted(g, g.scalar_mul(a, -1.5)), [(4,)]),
    ("tanh", lambda g, a: _weighted(g, g.tanh(a)), [(5,)]),
    ("sigmoid", lambda g, a: _weighted(g, g.sigmoid(a)), [(5,)]),
    ("matvec", lambda g, m, x: _weighted(g, g.matvec(m, x)), [(3, 4), (4,)]),
    ("matvec_shared", lambda g, m, x: _weighted(g, g.matvec(m, g.tanh(g.matvec(m, x)))), [(4, 4), (4,)]),
    ("concat", lambda g, a, b: _weighted(g, g.concat([a, b, a])), [(2,), (3,)]),
    ("slice", lambda g, a: _weighted(g, g.add(g.slice(a, 1, 3), g.slice(a, 2, 4))), [(5,)]),
    ("columns", lambda g, m, x: _weighted(g, g.matvec(g.columns(m, 1, 3), x)), [(3, 4), (2,)]),
    ("stack", lambda g, a, b: _weighted(g, g.stack([a, b, a])), [(3,), (3,)]),
    ("outer_add", lambda g, a, b: _weighted(g, g.tanh(g.outer_add(a, b))), [(2, 3), (4, 3)]),
    ("pick_vector", lambda g, a: g.scalar_mul(g.pick(a, 2), 3.0), [(4,)]),
    ("pick_row", lambda g, m: _weighted(g, g.pick(m, 1)), [(3, 4)]),
    ("gather_sum", lambda g, a: g.gather_sum(g.tanh(a), [0, 3, 3]), [(5,)]),
    ("max", lambda g, a: g.max(a), [(5,)]),
    ("max_subset", lambda g, a: g.max(g.tanh(a), [1, 2, 4]), [(5,)]),
    ("sum", lambda g, a: g.sum(g.tanh(a)), [(5,)]),
    ("hinge", lambda g, a: g.hinge(g.scalar_add(g.sum(a), 10.0)), [(3,)]),
])
def test_finite_differences(name, build, shapes):
    _check(build, shapes)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_matvec_gradient_property(rows, cols, seed):
    _check(lambda g, m, x: _weighted(g, g.tanh(g.matvec(m, x)), seed), [(rows, cols), (cols,)], seed)


def test_deferred_weight_gradient_through_columns():
    # the same matrix feeds several matvecs, directly and through a column view
    rng = np.random.default_rng(3)
    params = {"W": rng.normal(size=(3, 6)), "x": rng.normal(size=3)}

    def build(g):
        w, x = g.parameter("W"), g.parameter("x")
        left = g.matvec(g.columns(w, 0, 3), x)
        right = g.matvec(g.columns(w, 3, 6), g.tanh(left))
        full = g.matvec(w, g.concat([left, right]))
        return g.sum(g.tanh(full))

    g = Graph(params)
    grads = g.backward(build(g))
    for name in params:
        numeric = numeric_gradient(lambda: float(build(Graph(params)).value[0]), params[name])
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-6, atol=1e-9)


def test_backward_twice_gives_same_gradients():
    g = Graph({"W": np.arange(6.0).reshape(2, 3)})
    loss = g.sum(g.tanh(g.matvec(g.parameter("W"), g.constant([0.1, 0.2, 0.3]))))
    first = {k: v.copy() for k, v in g.backward(loss).items()}
    second = g.backward(loss)
    assert np.array_equal(first["W"], second["W"])


def test_sigmoid_is_stable_at_extremes():
    g = Graph()
    out = g.sigmoid(g.constant([-1000.0, 0.0, 1000.0])).value
    assert out.tolist() == [0.0, 0.5, 1.0]


# -- parameters and Adam ---------------------------------------------------------

def test_glorot_bounds():
    w = glorot(np.random.default_rng(0), 30, 20)
    assert np.abs(w).max() <= np.sqrt(6 / 50)


def test_adam_first_step_moves_by_lr():
    store = ParameterStore()
    store.add("p", 0.0)
    store.adam_step({"p": np.array([1.0])})
    # mhat = 1, vhat = 1, so the step is lr / (1 + eps)
    assert store["p"][0] == pytest.approx(-0.001, abs=1e-10)


def test_zero_gradient_leaves_parameters_unchanged():
    store = ParameterStore()
    start = store.add("w", np.random.default_rng(0).normal(size=(3, 2))).copy()
    for _ in range(5):
        store.adam_step({"w": np.zeros((3, 2))})
    assert np.array_equal(store["w"], start)


def _adam_reference(p, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    p = p.copy()
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_matches_textbook_recomputation():
    rng = np.random.default_rng(4)
    p0 = rng.normal(size=(4, 3))
    grads = [rng.normal(size=(4, 3)) for _ in range(7)]
    store = ParameterStore()
    store.add("w", p0)
    for gr in grads:
        store.adam_step({"w": gr})
    np.testing.assert_allclose(store["w"], _adam_reference(p0, grads), rtol=0, atol=1e-15)


def test_adam_two_stores_same_history_identical():
    rng = np.random.default_rng(5)
    p0, grads = rng.normal(size=5), [rng.normal(size=5) for _ in range(2)]
    a, b = ParameterStore(), ParameterStore()
    a.add("w", p0)
    b.add("w", p0)
    for gr in grads:
        a.adam_step({"w": gr})
        b.adam_step({"w": gr})
    assert np.array_equal(a["w"], b["w"])


def test_nan_gradient_refused_with_name():
    store = ParameterStore()
    store.add("good", np.zeros(2))
    store.add("bad", np.zeros(2))
    with pytest.raises(NonFiniteError, match="bad"):
        store.adam_step({"good": np.ones(2), "bad": np.array([np.nan, 0.0])})
    # nothing moved, not even the finite one
    assert np.array_equal(store["good"], np.zeros(2))
    assert store.step == 0


def test_adam_rejects_wrong_shape_and_unknown_name():
    store = ParameterStore()
    store.add("w", np.zeros(2))
    with pytest.raises(ShapeError):
        store.adam_step({"w": np.zeros(3)})
    with pytest.raises(KeyError):
        store.adam_step({"nope": np.zeros(2)})


def test_snapshot_is_read_only_copy():
    store = ParameterStore()
    store.add("w", np.zeros(2))
    snap = store.snapshot()
    with pytest.raises(ValueError):
        snap["w"][0] = 1.0
    store.adam_step({"w": np.ones(2)})
    assert np.array_equal(snap["w"], np.zeros(2))


def test_duplicate_parameter_rejected():
    store = ParameterStore()
    store.add("w", np.zeros(2))
    with pytest.raises(KeyError):
        store.add("w", np.zeros(2))
