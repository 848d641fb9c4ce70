import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchormae import numerics as nm
from anchormae.errors import InvalidArgument
from helpers import finite_diff_grad, grad_matches


def test_matmul_identity():
    a = nm.Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = a @ nm.Tensor(np.eye(2))
    assert np.array_equal(out.data, a.data)


def test_matmul_hand_oracle():
    a = nm.Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = nm.Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal((a @ b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(InvalidArgument) as exc:
        nm.matmul(nm.Tensor(np.zeros((2, 3))), nm.Tensor(np.zeros((2, 3))))
    assert "(2, 3)" in str(exc.value)


def test_broadcast_rejects_non_suffix():
    with pytest.raises(InvalidArgument):
        nm.add(nm.Tensor(np.zeros((4, 1))), nm.Tensor(np.zeros((1, 5))))


def test_suffix_broadcast_bias_add():
    x = nm.Tensor(np.ones((3, 4)), requires_grad=True)
    b = nm.Tensor(np.arange(4.0), requires_grad=True)
    with nm.Tape() as tape:
        loss = nm.sum_(nm.add(x, b))
        tape.backward(loss)
    assert np.array_equal(b.grad, np.full(4, 3.0))


def test_softmax_constant_row_is_uniform():
    out = nm.softmax(nm.Tensor(np.full((2, 5), 3.7)))
    assert np.allclose(out.data, 0.2)


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=2, max_value=9),
       st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_sum_to_one(rows, cols, seed):
    x = np.random.default_rng(seed).normal(size=(rows, cols)) * 5
    out = nm.softmax(nm.Tensor(x))
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)


@given(st.integers(min_value=4, max_value=32), st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_layernorm_moments(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, n)) * (1.0 + rng.random()) + rng.normal()
    out = nm.layernorm(nm.Tensor(x)).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-9)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-6)


def test_mse_matches_explicit_loop():
    rng = np.random.default_rng(0)
    pred = rng.normal(size=(6, 4))
    target = rng.normal(size=(6, 4))
    mask = rng.integers(0, 2, size=(6, 4))
    out = nm.mse(nm.Tensor(pred), target, mask)
    total, count = 0.0, 0
    for i in range(6):
        for j in range(4):
            if mask[i, j]:
                total += (pred[i, j] - target[i, j]) ** 2
                count += 1
    assert out.item() == pytest.approx(total / count, rel=1e-12)


def test_mse_row_mask_ignores_unmasked_rows():
    rng = np.random.default_rng(1)
    pred = rng.normal(size=(5, 3))
    target = rng.normal(size=(5, 3))
    mask = np.array([1, 0, 1, 0, 0])
    base = nm.mse(nm.Tensor(pred), target, mask).item()
    target2 = target.copy()
    target2[1] += 100.0  # visible row: must not matter
    assert nm.mse(nm.Tensor(pred), target2, mask).item() == base
    target3 = target.copy()
    target3[0] += 1.0  # masked row: must matter
    assert nm.mse(nm.Tensor(pred), target3, mask).item() != base


def test_mse_empty_mask_rejected():
    with pytest.raises(InvalidArgument):
        nm.mse(nm.Tensor(np.ones((2, 2))), np.ones((2, 2)), np.zeros((2, 2)))


def test_backward_sum_gives_ones():
    x = nm.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with nm.Tape() as tape:
        loss = nm.sum_(x)
        tape.backward(loss)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_scalar_mse_grad():
    v = 1.7
    x = nm.Tensor(np.array([v]), requires_grad=True)
    with nm.Tape() as tape:
        loss = nm.mse(x, np.zeros(1), np.ones(1))
        tape.backward(loss)
    assert x.grad[0] == pytest.approx(2 * v, rel=1e-12)


def test_backward_twice_errors():
    x = nm.Tensor(np.ones(3), requires_grad=True)
    with nm.Tape() as tape:
        loss = nm.sum_(x)
        tape.backward(loss)
        with pytest.raises(InvalidArgument):
            tape.backward(loss)


def test_backward_rejects_non_scalar():
    x = nm.Tensor(np.ones(3), requires_grad=True)
    with nm.Tape() as tape:
        y = nm.mul(x, x)
        with pytest.raises(InvalidArgument):
            tape.backward(y)


def test_grad_accumulates_across_tapes():
    x = nm.Tensor(np.ones(2), requires_grad=True)
    for _ in range(3):
        with nm.Tape() as tape:
            tape.backward(nm.sum_(x))
    assert np.array_equal(x.grad, np.full(2, 3.0))


def _composite(leaves):
    """A graph touching most ops; returns the scalar loss value."""
    a, b, w = leaves["a"], leaves["b"], leaves["w"]
    h = nm.gelu(nm.add(nm.matmul(a, w), b))
    h = nm.layernorm(h)
    att = nm.softmax(nm.matmul(h, nm.transpose(h)), axis=-1)
    out = nm.matmul(att, h)
    out = nm.concat([nm.slice_rows(out, 0, 2), nm.slice_rows(out, 2, 4)], axis=0)
    out = nm.gather(out, [3, 1, 0, 2, 1], axis=0)
    return nm.mse(out, np.ones(out.shape), np.ones(out.shape[0])).item()


def test_composite_graph_matches_finite_differences():
    rng = np.random.default_rng(7)
    leaves = {
        "a": nm.Tensor(rng.normal(size=(4, 3)), requires_grad=True),
        "b": nm.Tensor(rng.normal(size=(5,)), requires_grad=True),
        "w": nm.Tensor(rng.normal(size=(3, 5)), requires_grad=True),
    }
    with nm.Tape() as tape:
        a, b, w = leaves["a"], leaves["b"], leaves["w"]
        h = nm.gelu(nm.add(nm.matmul(a, w), b))
        h = nm.layernorm(h)
        att = nm.softmax(nm.matmul(h, nm.transpose(h)), axis=-1)
        out = nm.matmul(att, h)
        out = nm.concat([nm.slice_rows(out, 0, 2), nm.slice_rows(out, 2, 4)], axis=0)
        out = nm.gather(out, [3, 1, 0, 2, 1], axis=0)
        loss = nm.mse(out, np.ones(out.shape), np.ones(out.shape[0]))
        tape.backward(loss)
    for name in leaves:
        fd = finite_diff_grad(_composite, leaves, name)
        assert grad_matches(leaves[name].grad, fd), name


def test_adamw_zero_grads_no_decay_is_identity():
    p = nm.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    params = {"p": p}
    state = nm.adamw_init(params, lr=0.1)
    nm.adamw_step(params, {"p": np.zeros(2)}, state)
    assert np.array_equal(p.data, [1.0, -2.0])
    assert state.step == 1


def test_adamw_pure_decay_scales_params():
    p = nm.Tensor(np.array([2.0]), requires_grad=True)
    params = {"p": p}
    state = nm.adamw_init(params, lr=0.5, weight_decay=0.1)
    nm.adamw_step(params, {"p": np.zeros(1)}, state)
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.5 * 0.1), rel=1e-12)


def test_adamw_matches_scalar_recurrence():
    lr, b1, b2, eps, g = 0.01, 0.9, 0.999, 1e-8, 0.3
    p = nm.Tensor(np.array([1.0]), requires_grad=True)
    params = {"p": p}
    state = nm.adamw_init(params, lr=lr)
    # hand-rolled Adam recurrences
    x, m, v = 1.0, 0.0, 0.0
    for t in range(1, 4):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        x -= lr * mh / (np.sqrt(vh) + eps)
        nm.adamw_step(params, {"p": np.array([g])}, state)
        assert p.data[0] == pytest.approx(x, rel=1e-12)


def test_adamw_equals_adam_when_no_decay():
    rng = np.random.default_rng(5)
    init = rng.normal(size=4)
    trajs = []
    for _ in range(2):
        p = nm.Tensor(init.copy(), requires_grad=True)
        params = {"p": p}
        state = nm.adamw_init(params, lr=0.05, weight_decay=0.0)
        for step in range(5):
            nm.adamw_step(params, {"p": rng.normal(size=4) * 0 + step + 1.0}, state)
        trajs.append(p.data.copy())
    assert np.array_equal(trajs[0], trajs[1])


def test_adamw_rejects_nan_grad():
    p = nm.Tensor(np.ones(2), requires_grad=True)
    params = {"p": p}
    state = nm.adamw_init(params, lr=0.1)
    with pytest.raises(InvalidArgument):
        nm.adamw_step(params, {"p": np.array([np.nan, 0.0])}, state)


def test_cosine_lr_anchors():
    assert nm.cosine_lr(10, 110, 1e-4, warmup_steps=10) == pytest.approx(1e-4)
    assert nm.cosine_lr(110, 110, 1e-4, warmup_steps=10) == pytest.approx(0.0, abs=1e-20)
    assert nm.cosine_lr(60, 110, 1e-4, warmup_steps=10) == pytest.approx(0.5e-4)
    assert nm.cosine_lr(0, 100, 1e-4, warmup_steps=0) == pytest.approx(1e-4)
    assert nm.cosine_lr(5, 100, 2e-4, warmup_steps=10) == pytest.approx(1e-4)


def test_cosine_lr_range_errors():
    with pytest.raises(InvalidArgument):
        nm.cosine_lr(-1, 10, 1e-4)
    with pytest.raises(InvalidArgument):
        nm.cosine_lr(11, 10, 1e-4)
    with pytest.raises(InvalidArgument):
        nm.cosine_lr(0, 10, 1e-4, warmup_steps=10)
