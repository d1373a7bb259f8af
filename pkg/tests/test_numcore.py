import numpy as np
import pytest

from opcrash.numcore import (
    MLP,
    DimensionError,
    Linear,
    NumericError,
    Tensor,
    backward,
    check_gradients,
    concat,
    exp,
    gelu,
    getitem,
    l2norm,
    layer_norm,
    log,
    matmul,
    mlp_apply,
    no_grad,
    parameter,
    precision,
    sigmoid,
    softmax,
    stack,
    tanh,
    track_memory,
)


def t64(a, name=""):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True, name=name, dtype=np.float64)


# -- matmul ---------------------------------------------------------------

def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((Tensor(np.eye(2)) @ Tensor(a)).data, a)


def test_matmul_hand_sum():
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_triple_loop_oracle(rng):
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    ref = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    with precision(np.float64):
        out = (Tensor(a) @ Tensor(b)).data
    assert np.abs(out - ref).max() < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_associativity(rng):
    with precision(np.float64):
        for _ in range(10):
            a, b, c = (Tensor(rng.standard_normal(s)) for s in ((6, 5), (5, 4), (4, 3)))
            assert np.abs(((a @ b) @ c).data - (a @ (b @ c)).data).max() < 1e-10


# -- softmax --------------------------------------------------------------

def test_softmax_uniform():
    with precision(np.float64):
        assert np.allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=1e-15)


def test_softmax_shift_invariance(rng):
    x = rng.standard_normal((4, 5))
    with precision(np.float64):
        a = softmax(Tensor(x), axis=1).data
        b = softmax(Tensor(x + 7.5), axis=1).data
    assert np.abs(a - b).max() < 1e-12


def test_softmax_direct_formula():
    frozen = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219]
    with precision(np.float64):
        out = softmax(Tensor([1.0, 2.0, 3.0])).data
    assert np.abs(out - frozen).max() < 1e-12


def test_softmax_rows_sum_to_one(rng):
    x = rng.standard_normal((20, 9)) * 10
    assert np.abs(softmax(Tensor(x), axis=1).data.sum(axis=1) - 1).max() < 1e-6
    with precision(np.float64):
        assert np.abs(softmax(Tensor(x), axis=0).data.sum(axis=0) - 1).max() < 1e-12


def test_softmax_large_values_stable():
    out = softmax(Tensor([1000.0, 1000.0]))
    assert np.all(np.isfinite(out.data))


def test_softmax_nan_is_numeric_error():
    with pytest.raises(NumericError):
        softmax(Tensor([0.0, np.nan]))


# -- mlp ------------------------------------------------------------------

def test_mlp_zero_weights_gives_bias(rng):
    net = MLP((4, 6, 3), rng)
    for layer in net.layers:
        layer.weight.data = np.zeros_like(layer.weight.data)
    net.layers[-1].bias.data = np.array([1.0, -2.0, 0.5], dtype=np.float32)
    out = net(Tensor(rng.standard_normal((5, 4))))
    assert np.array_equal(out.data, np.tile([1.0, -2.0, 0.5], (5, 1)).astype(np.float32))


def test_single_layer_is_affine(rng):
    with precision(np.float64):
        lin = Linear(4, 3, rng)
        lin.bias.data = rng.standard_normal(3)
        x = rng.standard_normal((2, 4))
        out = mlp_apply([lin], Tensor(x))
        assert np.abs(out.data - (x @ lin.weight.data + lin.bias.data)).max() < 1e-14


def test_mlp_forward_oracle(rng):
    with precision(np.float64):
        net = MLP((3, 5, 2), rng)
        for layer in net.layers:
            layer.bias.data = rng.standard_normal(layer.bias.shape)
        x = rng.standard_normal((4, 3))
        w1, b1 = net.layers[0].weight.data, net.layers[0].bias.data
        w2, b2 = net.layers[1].weight.data, net.layers[1].bias.data
        h = x @ w1 + b1
        h = 0.5 * h * (1 + np.tanh(np.sqrt(2 / np.pi) * (h + 0.044715 * h ** 3)))
        ref = h @ w2 + b2
        assert np.abs(net(Tensor(x)).data - ref).max() < 1e-12


def test_mlp_width_mismatch(rng):
    with pytest.raises(DimensionError):
        MLP((3, 4), rng)(Tensor(np.ones((2, 5))))


# -- backward -------------------------------------------------------------

def test_backward_sum_of_linear_map(rng):
    with precision(np.float64):
        w = t64(rng.standard_normal((3, 2)))
        x = rng.standard_normal((4, 3))
        backward((Tensor(x) @ w).sum())
        assert np.allclose(w.grad, np.tile(x.sum(axis=0)[:, None], (1, 2)))


def test_disconnected_parameter_has_zero_gradient(rng):
    a, b = t64(rng.standard_normal(3)), t64(rng.standard_normal(3))
    backward((a * a).sum())
    assert b.grad is None or not np.any(b.grad)


def test_backward_requires_scalar():
    with pytest.raises(DimensionError):
        backward(t64([1.0, 2.0]) * 2.0)


def test_gradients_accumulate_across_calls():
    a = t64([1.0, 2.0])
    backward((a * 3.0).sum())
    backward((a * 3.0).sum())
    assert a.grad.tolist() == [6.0, 6.0]


def test_no_grad_builds_no_graph():
    a = t64([1.0])
    with no_grad():
        y = a * 2.0
    assert not y.requires_grad


def test_tensor_data_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_tensor_copies_input():
    a = np.ones(3)
    t = Tensor(a)
    a[0] = 7.0
    assert t.data[0] == 1.0


OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
    "broadcast_add": lambda a, b: a + b[0],
    "neg": lambda a, b: -a,
    "pow": lambda a, b: (a * a + 1.0) ** 1.5,
    "exp": lambda a, b: exp(a),
    "log": lambda a, b: log(a * a + 1.0),
    "tanh": lambda a, b: tanh(a),
    "sigmoid": lambda a, b: sigmoid(a),
    "matmul": lambda a, b: a @ b.T,
    "batched_matmul": lambda a, b: a.reshape(2, 2, 3) @ b.reshape(2, 3, 2),
    "sum_axis": lambda a, b: a.sum(axis=0) * b.sum(axis=1, keepdims=True).sum(),
    "mean": lambda a, b: a.mean(axis=1) + b.mean(),
    "reshape": lambda a, b: a.reshape(3, 4) * b.reshape(3, 4),
    "transpose": lambda a, b: a.transpose(1, 0) * b.T,
    "getitem": lambda a, b: getitem(a, (slice(1, 3), np.array([0, 2, 2]))) * 2.0,
    "concat": lambda a, b: concat([a, b], axis=1) * concat([b, a], axis=1),
    "stack": lambda a, b: stack([a, b], axis=0) * stack([b, a], axis=0),
    "softmax": lambda a, b: softmax(a, axis=1) * b,
    "softmax_axis0": lambda a, b: softmax(a, axis=0) * b,
    "gelu": lambda a, b: gelu(a) * b,
    "layer_norm": lambda a, b: layer_norm(a, b[0], b[1]),
    "l2norm": lambda a, b: l2norm(a - b, axis=(1,)),
    "l2norm_all": lambda a, b: l2norm(a * b),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradient_check_every_op(name):
    op = OPS[name]
    for seed in range(10):
        r = np.random.default_rng(seed)
        a, b = t64(r.standard_normal((4, 3)), "a"), t64(r.standard_normal((4, 3)), "b")
        w = r.standard_normal(op(a, b).shape)
        errs = check_gradients(lambda: (op(a, b) * Tensor(w, dtype=np.float64)).sum(), [a, b])
        assert max(errs.values()) < 1e-4, (name, seed, errs)


# -- layer norm -----------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    out = layer_norm(Tensor(np.full((1, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((1, 4), dtype=np.float32))


def test_layer_norm_moments(rng):
    with precision(np.float64):
        out = layer_norm(Tensor(rng.standard_normal((6, 16)) * 5 + 2), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert np.abs(out.mean(axis=1)).max() < 1e-6
    assert np.abs(out.var(axis=1) - 1).max() < 1e-5


def test_layer_norm_formula_oracle():
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    frozen = (x - 2.5) / np.sqrt(1.25 + 1e-5)
    with precision(np.float64):
        out = layer_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    assert np.abs(out - frozen).max() < 1e-10


def test_layer_norm_width_mismatch():
    with pytest.raises(ValueError):
        layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


# -- determinism and memory ------------------------------------------------

def _run(seed):
    r = np.random.default_rng(seed)
    net = MLP((5, 8, 2), r)
    x = Tensor(r.standard_normal((7, 5)))
    y = net(x)
    backward((y * y).sum())
    return y.data.copy(), [p.grad.copy() for p in net.parameters().values()]


def test_bit_identical_runs():
    y1, g1 = _run(3)
    y2, g2 = _run(3)
    assert y1.tobytes() == y2.tobytes()
    assert all(a.tobytes() == b.tobytes() for a, b in zip(g1, g2))


def test_memory_tracker_counts_and_releases():
    with track_memory("t") as scope:
        a = Tensor(np.zeros((100, 10), dtype=np.float32))
        assert scope.live == 4000
        del a
    assert scope.live == 0 and scope.peak == 4000


def test_memory_tracker_ignores_outside_scope():
    a = Tensor(np.zeros(10))
    with track_memory() as scope:
        pass
    assert scope.peak == 0 and a.data.size == 10


def test_precision_context_restores_default():
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
