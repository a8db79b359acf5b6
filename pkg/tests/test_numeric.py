import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from flowrecon.numeric import (AdamHyper, ParamStore, ShapeError, Tensor, add_linear, adam_step, concat, conv2d,
                               exp, gradients, grad_check, grad_check_report, linear, log, lr_at, mean, no_grad, relative_error, relu,
                               reshape, set_max, softplus, square, std_normal_logpdf, take, tanh, tsum)


def leaf(x):
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


# -- forward_backward -----------------------------------------------------------
def test_identity_graph_passes_seed_through():
    x = leaf([1.0, -2.0, 3.0])
    seed = np.array([0.5, 7.0, -1.0])
    x.backward(seed)
    np.testing.assert_array_equal(x.grad, seed)


def test_sum_of_squares_value_and_gradient():
    x = leaf([1.0, 2.0, 3.0])
    y = tsum(square(x))
    assert float(y.data) == 14.0
    y.backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_random_three_layer_mlp_matches_finite_differences(rng):
    store = ParamStore(np.float64)
    for k, (a, b) in enumerate([(5, 7), (7, 6), (6, 1)]):
        add_linear(store, rng, f"l{k}", a, b)
        store[f"l{k}.b"].data[:] = rng.normal(size=b) * 0.1
    x = Tensor(rng.normal(size=(4, 5)))

    def f():
        h = tanh(linear(x, store["l0.w"], store["l0.b"]))
        h = softplus(linear(h, store["l1.w"], store["l1.b"]))
        return mean(linear(h, store["l2.w"], store["l2.b"]))

    assert grad_check(f, store.tensors()) < 1e-5


def test_shape_mismatch_names_the_primitive():
    with pytest.raises(ShapeError, match="add"):
        leaf(np.ones(3)) + leaf(np.ones(4))
    with pytest.raises(ShapeError, match="linear"):
        linear(leaf(np.ones((2, 3))), leaf(np.ones((4, 5))))


def test_gradient_accumulates_over_shared_subexpression():
    x = leaf([2.0])
    y = tsum(x * x + x * 3.0)
    y.backward()
    np.testing.assert_allclose(x.grad, [2 * 2.0 + 3.0])


def test_no_grad_builds_no_graph():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = tsum(exp(x))
    assert not y.requires_grad and y._parents == ()


def test_unreached_leaves_get_zero_gradient():
    x, y = leaf([1.0]), leaf([2.0, 3.0])
    gx, gy = gradients(tsum(square(x)), [x, y])
    np.testing.assert_array_equal(gy, [0.0, 0.0])
    np.testing.assert_array_equal(gx, [2.0])


def test_forward_backward_is_deterministic(rng):
    w = rng.normal(size=(8, 4))
    x = rng.normal(size=(16, 8))
    outs = []
    for _ in range(2):
        wt = Tensor(w.copy(), requires_grad=True)
        y = mean(relu(linear(Tensor(x), wt)))
        outs.append((y.data.copy(), gradients(y, [wt])[0]))
    assert outs[0][0].tobytes() == outs[1][0].tobytes()
    assert outs[0][1].tobytes() == outs[1][1].tobytes()


def test_float32_stays_float32():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    y = 0.5 * (x * 2.0 + 1.0) - 3.0
    assert y.dtype == np.float32


# -- per-primitive gradient properties -------------------------------------------
# stay off stationary points: there the true gradient is below the
# finite-difference noise floor and the relative error is meaningless
arrays = hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=4),
                    elements=st.floats(-2, 2).filter(lambda v: abs(v) > 1e-3))

UNARY = {
    "exp": exp,
    "tanh": tanh,
    "softplus": softplus,
    "square": square,
    "log": lambda t: log(t * t + 0.5),
    "neg_div": lambda t: 1.0 / (t * t + 1.0) - t,
    "std_normal_logpdf": std_normal_logpdf,
    "relu": relu,
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(x=arrays)
def test_unary_primitive_gradients(name, x):
    if name == "relu":
        # keep away from the kink so central differences are valid
        x = np.where(np.abs(x) < 1e-2, x + 0.05, x)
    t = Tensor(x.copy(), requires_grad=True)
    w = np.linspace(0.3, 1.7, UNARY[name](Tensor(x)).data.size).reshape(UNARY[name](Tensor(x)).shape)
    assert grad_check(lambda: tsum(UNARY[name](t) * w), [t]) < 1e-5


@given(a=hnp.arrays(np.float64, (3, 4), elements=st.floats(-2, 2)),
       b=hnp.arrays(np.float64, (4,), elements=st.floats(0.5, 2)))
def test_broadcast_arithmetic_gradients(a, b):
    ta, tb = Tensor(a.copy(), requires_grad=True), Tensor(b.copy(), requires_grad=True)
    assert grad_check(lambda: tsum((ta * tb + ta) / tb - tb), [ta, tb]) < 1e-5


@given(x=hnp.arrays(np.float64, (2, 5, 3), elements=st.floats(-3, 3)))
def test_reductions_and_structure_gradients(x):
    t = Tensor(x.copy(), requires_grad=True)
    w = np.arange(1, 7, dtype=np.float64).reshape(2, 3)

    def f():
        a = mean(t, axis=1) * w
        b = take(t, np.array([2, 0]))
        c = concat([b, reshape(tsum(t, axis=-1, keepdims=True), (2, 5, 1))], axis=-1)
        return tsum(a) + mean(square(c))

    assert grad_check(f, [t]) < 1e-5


def test_set_max_value_is_permutation_invariant(rng):
    x = rng.normal(size=(2, 9, 4))
    perm = rng.permutation(9)
    np.testing.assert_array_equal(set_max(Tensor(x), axis=1).data, set_max(Tensor(x[:, perm]), axis=1).data)


def test_set_max_routes_gradient_to_lowest_index_on_ties():
    x = leaf([[1.0, 5.0], [5.0, 5.0], [3.0, 5.0]])
    set_max(x, axis=0).backward(np.array([1.0, 1.0]))
    np.testing.assert_array_equal(x.grad, [[0, 1], [1, 0], [0, 0]])


def test_set_max_gradient_with_ties_nudged_apart(rng):
    x = rng.normal(size=(3, 6, 5))
    x[:, 1] = x[:, 4]  # exact ties
    x[:, 4] += 1e-3    # nudge so finite differences see a smooth max
    t = Tensor(x, requires_grad=True)
    w = rng.normal(size=(3, 5))
    assert grad_check(lambda: tsum(set_max(t, axis=1) * w), [t]) < 1e-5


def test_conv2d_matches_direct_loop_and_gradients(rng):
    x = rng.normal(size=(2, 7, 6, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    b = rng.normal(size=4)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, pad=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((2, 4, 3, 4))
    for i in range(4):
        for j in range(3):
            patch = xp[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
            ref[:, i, j] = np.einsum("bhwc,hwco->bo", patch, w) + b
    np.testing.assert_allclose(out, ref, atol=1e-12)
    tx, tw, tb = (Tensor(a.copy(), requires_grad=True) for a in (x, w, b))
    assert grad_check(lambda: tsum(square(conv2d(tx, tw, tb, stride=2, pad=1))), [tx, tw, tb]) < 1e-5


# -- grad_check ---------------------------------------------------------------
def test_grad_check_linear_layer(rng):
    x = Tensor(rng.normal(size=(5, 4)))
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    assert grad_check(lambda: tsum(linear(x, w, b) * np.arange(3.0)), [w, b]) < 1e-6


def test_grad_check_tanh_mlp(rng):
    x = Tensor(rng.normal(size=(5, 4)))
    w1 = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(8, 1)), requires_grad=True)
    assert grad_check(lambda: mean(tanh(linear(tanh(linear(x, w1)), w2))), [w1, w2]) < 1e-5


def test_grad_check_detects_wrong_gradient():
    from flowrecon.numeric.tensor import _make
    t = leaf([0.3, 0.7])

    def f():
        # cube with the backward of a square: deliberately wrong
        return tsum(_make(t.data ** 3, (t,), lambda g: (g * 2.0 * t.data,), "bad"))

    assert grad_check(f, [t]) > 0.1


def test_grad_check_kink_exclusion():
    t = leaf([3e-5, 0.5])  # the first entry sits within one step of the ReLU kink
    f = lambda: tsum(relu(t))
    assert grad_check(f, [t]) > 0.1
    rep = grad_check_report(f, [t], exclude_kinks=True)
    assert rep.kinks == 1 and rep.checked == 1 and rep.worst < 1e-10


def test_grad_check_kink_exclusion_still_catches_wrong_gradients():
    from flowrecon.numeric.tensor import _make
    t = leaf([3e-5, 0.5])

    def f():
        # ReLU with twice the true slope on its backward pass
        return tsum(_make(np.maximum(t.data, 0), (t,), lambda g: (2.0 * g * (t.data > 0),), "bad"))

    rep = grad_check_report(f, [t], exclude_kinks=True)
    assert rep.kinks == 1 and rep.checked == 1 and rep.worst > 0.1  # the smooth entry still fails


def test_grad_check_rejects_single_precision():
    t = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        grad_check(lambda: tsum(t), [t])


def test_relative_error_definition():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(1.0, 3.0) == pytest.approx(0.5)
    assert relative_error(0.0, 1e-12) == pytest.approx(1e-4)


# -- Adam and the learning-rate schedule -----------------------------------------
def _scalar_store(value=1.0):
    s = ParamStore(np.float64)
    s.add("p", np.array([value]))
    return s


def test_adam_zero_gradient_leaves_parameters():
    s = _scalar_store()
    adam_step(s, {"p": np.zeros(1)}, AdamHyper(lr=0.1))
    assert s["p"].data[0] == 1.0 and s.step == 1


def test_adam_first_step_is_learning_rate():
    s = _scalar_store()
    adam_step(s, {"p": np.ones(1)}, AdamHyper(lr=0.1))
    # closed form: m_hat = 1, v_hat = 1, step = lr / (1 + eps)
    assert s["p"].data[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)


def test_adam_matches_reference_recursion(rng):
    s = _scalar_store(0.0)
    grads = rng.normal(size=20)
    hyper = AdamHyper(lr=0.01)
    p, m, v = 0.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        adam_step(s, {"p": np.array([g])}, hyper)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert s["p"].data[0] == pytest.approx(p, rel=1e-12)


def test_adam_is_deterministic(rng):
    g = rng.normal(size=(3, 2))
    runs = []
    for _ in range(2):
        s = ParamStore(np.float64)
        s.add("w", np.ones((3, 2)))
        for _ in range(2):
            adam_step(s, {"w": g}, AdamHyper())
        runs.append((s["w"].data.tobytes(), s.m["w"].tobytes(), s.v["w"].tobytes()))
    assert runs[0] == runs[1]


def test_adam_rejects_misaligned_gradients():
    s = _scalar_store()
    with pytest.raises(KeyError):
        adam_step(s, {"q": np.ones(1)}, AdamHyper())
    with pytest.raises(ValueError):
        adam_step(s, {"p": np.ones(2)}, AdamHyper())


@pytest.mark.parametrize("bad", [dict(lr=0.0), dict(beta1=1.0), dict(beta2=0.0), dict(eps=0.0)])
def test_adam_hyper_validation(bad):
    with pytest.raises(ValueError):
        AdamHyper(**bad)


@pytest.mark.parametrize("epoch,expected", [(0, 2.56e-4), (19, 2.56e-4), (20, 6.4e-5), (25, 6.4e-5)])
def test_lr_schedule(epoch, expected):
    assert lr_at(epoch, 2.56e-4) == pytest.approx(expected, rel=1e-15)


def test_lr_schedule_rejects_negative_epoch():
    with pytest.raises(ValueError):
        lr_at(-1, 1e-3)


def test_param_store_names_unique_and_moments_shaped(rng):
    s = ParamStore(np.float64)
    add_linear(s, rng, "a", 3, 4)
    with pytest.raises(KeyError):
        s.add("a.w", np.zeros((3, 4)))
    for n, t in s.items():
        assert s.m[n].shape == t.shape and s.v[n].shape == t.shape
    assert s.num_scalars() == 3 * 4 + 4


def test_glorot_bounds_and_zero_bias(rng):
    s = ParamStore(np.float64)
    add_linear(s, rng, "a", 30, 20)
    limit = math.sqrt(6.0 / 50.0)
    assert np.all(np.abs(s["a.w"].data) <= limit)
    assert np.all(s["a.b"].data == 0.0)
