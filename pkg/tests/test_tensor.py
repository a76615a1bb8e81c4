import numpy as np
import pytest

from attencopt import tensor as tn
from attencopt.tensor import (
    MASK_VALUE,
    CheckpointError,
    ParameterStore,
    Tensor,
    adam_step,
    concat,
    load_checkpoint,
    masked_add,
    matmul,
    no_grad,
    save_checkpoint,
    softmax,
)


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        hi = f(x)
        x[idx] = old - eps
        lo = f(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def check_op(build, *shapes, seed=0, positive=False, tol=1e-6):
    """Compare autodiff with central differences of sum(build(...) * w)."""
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s) for s in shapes]
    out_shape = build(*[Tensor(x) for x in xs]).shape
    w = rng.standard_normal(out_shape)

    def f_of(k):
        def f(xk):
            args = [Tensor(x) for x in xs]
            args[k] = Tensor(xk)
            return float((build(*args).data * w).sum())

        return f

    params = [Tensor(x.copy(), requires_grad=True) for x in xs]
    (build(*params) * Tensor(w)).sum().backward()
    for k, x in enumerate(xs):
        num = numeric_grad(f_of(k), x.copy())
        assert np.allclose(params[k].grad, num, rtol=tol, atol=tol), f"argument {k}"


# -- forward values -----------------------------------------------------------


def test_softmax_examples():
    assert np.allclose(softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    out = softmax(Tensor([[1000.0, 0.0, -1000.0]])).data
    assert np.isfinite(out).all() and out[0, 0] == 1.0
    masked = softmax(masked_add(Tensor([[3.0, 1.0, 2.0]]), [[0.0, MASK_VALUE, MASK_VALUE]])).data
    assert masked.tolist() == [[1.0, 0.0, 0.0]]


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(1).standard_normal((7, 5, 9)) * 30
    assert np.max(np.abs(softmax(Tensor(x)).data.sum(axis=-1) - 1)) <= 1e-12


def test_fully_masked_row_raises():
    with pytest.raises(ValueError):
        softmax(masked_add(Tensor([[1.0, 2.0]]), [[MASK_VALUE, MASK_VALUE]]))


def test_matmul_hand_fixture():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    assert matmul(a, b).data.tolist() == [[17.0], [39.0]]


def test_sigmoid_tails_keep_precision():
    out = Tensor([-40.0, 0.0, 40.0]).sigmoid().data
    assert out[1] == 0.5
    assert out[0] == pytest.approx(np.exp(-40.0), rel=1e-12)


# -- gradients ----------------------------------------------------------------


def test_grad_matmul_batched_weight():
    check_op(lambda a, b: a @ b, (2, 3, 4), (4, 5))


def test_grad_matmul_batched_both():
    check_op(lambda a, b: a @ b, (2, 3, 4), (2, 4, 5))


def test_grad_matmul_broadcast_batch():
    check_op(lambda a, b: a @ b, (2, 3, 4), (1, 4, 2))


def test_grad_add_mul_broadcast():
    check_op(lambda a, b: a * b + b, (3, 4), (4,))


def test_grad_sub_div_pow():
    check_op(lambda a, b: (a - b) / b + a.pow(3.0), (3,), (3,), positive=True)


def test_grad_softmax():
    check_op(lambda a: softmax(a), (3, 5))


def test_grad_masked_softmax():
    mask = np.zeros((2, 4))
    mask[0, 1] = mask[1, 3] = MASK_VALUE
    check_op(lambda a: softmax(masked_add(a, mask)), (2, 4))


def test_grad_sigmoid_tanh_log_exp():
    check_op(lambda a: a.sigmoid() + a.tanh() + a.log() + a.exp(), (4,), positive=True)


def test_grad_concat():
    check_op(lambda a, b: concat([a, b], axis=-1), (2, 3), (2, 2))
    check_op(lambda a, b: concat([a, b], axis=0), (1, 3), (2, 3))


def test_grad_getitem():
    check_op(lambda a: a[:, 1], (3, 4))
    check_op(lambda a: a[np.array([0, 0, 2]), np.array([1, 1, 3])], (3, 4))


def test_grad_shape_ops():
    check_op(lambda a: a.reshape(3, 4).swapaxes(0, 1), (2, 6))
    check_op(lambda a: a.transpose(2, 0, 1), (2, 3, 4))


def test_grad_reductions():
    check_op(lambda a: a.sum(axis=1), (3, 4))
    check_op(lambda a: a.mean(axis=0, keepdims=True), (3, 4))
    check_op(lambda a: a.mean(), (3, 4))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    assert x.grad.tolist() == [8.0]


# -- graph behaviour ----------------------------------------------------------


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_second_backward_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = (x * 2.0).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    assert tn.is_grad_enabled()


def test_constants_get_no_grad():
    x = Tensor(np.ones(2), requires_grad=True)
    c = Tensor(np.ones(2))
    (x * c).sum().backward()
    assert c.grad is None and x.grad.tolist() == [1.0, 1.0]


# -- Adam -----------------------------------------------------------------------


def scalar_store(value=1.0):
    store = ParameterStore()
    store.add("w", np.array(value))
    return store


def test_adam_first_step_closed_form():
    store = scalar_store()
    assert adam_step(store, {"w": np.array(1.0)}, lr=0.1)
    assert float(store["w"].data) == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_is_noop():
    store = scalar_store()
    adam_step(store, {"w": np.array(0.0)}, lr=0.1)
    assert float(store["w"].data) == 1.0


def test_adam_two_steps_hand_recurrence():
    b1, b2, lr, eps = 0.9, 0.999, 0.05, 1e-8
    g1, g2 = 0.5, -2.0
    m1, v1 = (1 - b1) * g1, (1 - b2) * g1**2
    w1 = 1.0 - lr * (m1 / (1 - b1)) / (np.sqrt(v1 / (1 - b2)) + eps)
    m2, v2 = b1 * m1 + (1 - b1) * g2, b2 * v1 + (1 - b2) * g2**2
    w2 = w1 - lr * (m2 / (1 - b1**2)) / (np.sqrt(v2 / (1 - b2**2)) + eps)
    store = scalar_store()
    adam_step(store, {"w": np.array(g1)}, lr=lr)
    adam_step(store, {"w": np.array(g2)}, lr=lr)
    assert float(store["w"].data) == pytest.approx(w2, abs=1e-14)
    assert store.step_count == 2


def test_adam_skips_non_finite():
    store = scalar_store()
    assert not adam_step(store, {"w": np.array(np.nan)})
    assert float(store["w"].data) == 1.0 and store.step_count == 0


# -- checkpoints ----------------------------------------------------------------


def test_checkpoint_bit_exact_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    store = ParameterStore()
    store.add("a.weight", rng.standard_normal((3, 4)))
    store.add("b", rng.standard_normal(5))
    store.add("scalar", np.array(np.pi))
    store["a.weight"].grad = rng.standard_normal((3, 4))
    adam_step(store, lr=0.01)
    save_checkpoint(store, tmp_path / "c.ckpt")
    back = ParameterStore.from_arrays(load_checkpoint(tmp_path / "c.ckpt"))
    assert back.names() == store.names()
    for name, p in store:
        assert back[name].shape == p.shape
        assert back[name].data.tobytes() == p.data.tobytes()
        assert all(x.tobytes() == y.tobytes() for x, y in zip(back.moments[name], store.moments[name]))
    assert back.step_count == 1
    save_checkpoint(back, tmp_path / "d.ckpt")
    assert (tmp_path / "c.ckpt").read_bytes() == (tmp_path / "d.ckpt").read_bytes()


def test_checkpoint_header(tmp_path):
    save_checkpoint({"x": np.array([1.0, 2.0])}, tmp_path / "x.ckpt")
    raw = (tmp_path / "x.ckpt").read_bytes()
    assert raw[:8] == b"ATCOCKPT"
    assert raw[8:16] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert raw[-16:] == np.array([1.0, 2.0], dtype="<f8").tobytes()


def test_checkpoint_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad")
    save_checkpoint({"x": np.ones(10)}, tmp_path / "t.ckpt")
    raw = (tmp_path / "t.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.ckpt")


def test_duplicate_parameter_rejected():
    store = scalar_store()
    with pytest.raises(KeyError):
        store.add("w", 1.0)
