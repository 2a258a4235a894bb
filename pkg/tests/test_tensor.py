import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from gemnet_oc import checkpoint
from gemnet_oc.errors import ContractViolation
from gemnet_oc.tensor import (
    ACTIVATIONS,
    affine,
    backward,
    central_difference,
    concatenate,
    gather_rows,
    hadamard,
    he_orthogonal_,
    relative_error,
    scaled_silu,
    segment_sum,
    set_precision,
    tensor,
)

FD_STEP = 1e-6
FD_TOL = 1e-6


def fd_check(fn, *arrays):
    """Compare reverse-mode gradients of the scalar ``fn(*tensors)`` with central differences."""
    tracked = [tensor(a, requires_grad=True) for a in arrays]
    grads = backward(fn(*tracked), tracked)
    for k, a in enumerate(arrays):
        def scalar(x, k=k):
            args = [tensor(x) if i == k else tensor(b) for i, b in enumerate(arrays)]
            return float(fn(*args))

        numeric = central_difference(scalar, a, FD_STEP)
        assert relative_error(grads[k].detach().numpy(), numeric) <= FD_TOL


def uniform(rng, *shape):
    return rng.uniform(-2.0, 2.0, shape)


# --------------------------------------------------------------------------- examples


def test_segment_sum_example():
    out = segment_sum(tensor([1.0, 2.0, 3.0]), [0, 0, 1], 2)
    assert out.tolist() == [3.0, 3.0]


def test_gather_rows_permutes_identity():
    out = gather_rows(tensor(np.eye(3)), [2, 0])
    assert np.array_equal(out.numpy(), np.eye(3)[[2, 0]])


def test_affine_zero_weight_gives_bias():
    rng = np.random.default_rng(0)
    b = tensor([0.5, -1.5])
    for _ in range(5):
        out = affine(tensor(uniform(rng, 4, 3)), tensor(np.zeros((2, 3))), b)
        assert np.array_equal(out.numpy(), np.tile([0.5, -1.5], (4, 1)))


def test_backward_sum_of_squares():
    x = tensor([1.0, 2.0], requires_grad=True)
    (g,) = backward((x * x).sum(), [x])
    assert g.tolist() == [2.0, 4.0]


def test_backward_of_segment_sum_is_all_ones():
    x = tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    (g,) = backward(segment_sum(x, [1, 0, 1], 2).sum(), [x])
    assert np.array_equal(g.numpy(), np.ones((3, 2)))


def test_unused_input_gets_zero_gradient():
    x = tensor([1.0, 2.0], requires_grad=True)
    y = tensor([3.0], requires_grad=True)
    gx, gy = backward((x**3).sum(), [x, y])
    assert gy.tolist() == [0.0]


# --------------------------------------------------------------------------- contracts


def test_non_scalar_backward_rejected():
    x = tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractViolation):
        backward(x * 2, [x])


def test_segment_id_out_of_range_is_index_error():
    with pytest.raises(IndexError):
        segment_sum(tensor([1.0, 2.0]), [0, 2], 2)
    with pytest.raises(IndexError):
        segment_sum(tensor([1.0, 2.0]), [-1, 0], 2)


def test_segment_ids_length_mismatch():
    with pytest.raises(ContractViolation):
        segment_sum(tensor([1.0, 2.0]), [0], 2)


def test_shape_mismatches_rejected():
    with pytest.raises(ContractViolation):
        affine(tensor(np.ones((2, 3))), tensor(np.ones((4, 2))))
    with pytest.raises(ContractViolation):
        affine(tensor(np.ones((2, 3))), tensor(np.ones((4, 3))), tensor(np.ones(3)))
    with pytest.raises(ContractViolation):
        hadamard(tensor(np.ones(3)), tensor(np.ones(4)))
    with pytest.raises(ContractViolation):
        concatenate([tensor(np.ones((2, 3))), tensor(np.ones((3, 3)))], axis=1)
    with pytest.raises(IndexError):
        gather_rows(tensor(np.ones((2, 3))), [2])


def test_unknown_precision_rejected():
    with pytest.raises(ContractViolation):
        set_precision("half")


# --------------------------------------------------------------------------- finite-difference checks


def test_fd_affine():
    rng = np.random.default_rng(1)
    fd_check(lambda x, w, b: (affine(x, w, b) ** 2).sum(), uniform(rng, 3, 4), uniform(rng, 2, 4), uniform(rng, 2))


@pytest.mark.parametrize("name", sorted(ACTIVATIONS))
def test_fd_activations(name):
    rng = np.random.default_rng(2)
    act = ACTIVATIONS[name]
    fd_check(lambda x: (act(x) * tensor(np.linspace(-1, 1, 7))).sum(), uniform(rng, 7))


def test_fd_elementwise_sum_and_product():
    rng = np.random.default_rng(3)
    fd_check(lambda a, b: ((a + b) * a).sum(), uniform(rng, 5), uniform(rng, 5))


def test_fd_hadamard():
    rng = np.random.default_rng(4)
    fd_check(lambda a, b: (hadamard(a, b) ** 2).sum(), uniform(rng, 3, 2), uniform(rng, 3, 2))


def test_fd_gather_rows_with_repeats():
    rng = np.random.default_rng(5)
    w = tensor(uniform(rng, 4, 3))
    fd_check(lambda x: (gather_rows(x, [3, 0, 0, 2]) * w).sum() ** 2, uniform(rng, 4, 3))


def test_fd_segment_sum():
    rng = np.random.default_rng(6)
    fd_check(lambda x: (segment_sum(x, [2, 0, 2, 1, 0], 3) ** 3).sum(), uniform(rng, 5, 2))


def test_fd_concatenate():
    rng = np.random.default_rng(7)
    w = tensor(uniform(rng, 2, 5))
    fd_check(lambda a, b: (scaled_silu(concatenate([a, b], axis=1)) * w).sum(), uniform(rng, 2, 2), uniform(rng, 2, 3))


def test_fd_random_five_op_composite():
    rng = np.random.default_rng(8)

    def composite(x, w, b):
        h = scaled_silu(affine(x, w, b))  # 1-2
        h = gather_rows(h, [0, 2, 1, 2])  # 3
        h = segment_sum(hadamard(h, h), [0, 1, 1, 0], 2)  # 4-5
        return h.sum()

    fd_check(composite, uniform(rng, 3, 4), uniform(rng, 3, 4), uniform(rng, 3))


@given(st.integers(0, 2**32 - 1))
def test_fd_property_random_inputs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    ids = rng.integers(0, 3, n)
    fd_check(lambda x, w: segment_sum(scaled_silu(affine(x, w)), ids, 3).pow(2).sum(),
             uniform(rng, n, 3), uniform(rng, 2, 3))


@given(st.integers(0, 2**32 - 1))
def test_backward_is_linear(seed):
    rng = np.random.default_rng(seed)
    a = uniform(rng, 4)
    x = tensor(a, requires_grad=True)
    f1 = lambda t: (scaled_silu(t) ** 2).sum()  # noqa: E731
    f2 = lambda t: (t * t * t).sum()  # noqa: E731
    (g_sum,) = backward(f1(x) + f2(x), [x])
    (g1,) = backward(f1(x), [x])
    (g2,) = backward(f2(x), [x])
    assert np.allclose(g_sum.numpy(), (g1 + g2).numpy(), rtol=0, atol=1e-14)


def test_segment_sum_is_bitwise_reproducible():
    rng = np.random.default_rng(9)
    x = tensor(rng.normal(size=(1000, 8)) * 1e3)
    ids = rng.integers(0, 17, 1000)
    first = segment_sum(x, ids, 17).numpy().tobytes()
    for _ in range(3):
        assert segment_sum(x, ids, 17).numpy().tobytes() == first


def test_he_orthogonal_is_seeded_and_fan_in_scaled():
    w1 = he_orthogonal_(torch.empty(64, 32, dtype=torch.float64), torch.Generator().manual_seed(3))
    w2 = he_orthogonal_(torch.empty(64, 32, dtype=torch.float64), torch.Generator().manual_seed(3))
    assert torch.equal(w1, w2)
    assert float(w1.var(dim=1, unbiased=False).mean()) == pytest.approx(1 / 32, rel=1e-9)


# --------------------------------------------------------------------------- checkpoint archive


def test_checkpoint_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(10)
    params = {"b.weight": rng.normal(size=(3, 4)), "a": np.array(np.pi), "c/deep": rng.normal(size=(2, 0, 5))}
    path = tmp_path / "x.ckpt"
    digest = checkpoint.save(path, params, {"config": {"k": 1}})
    loaded, meta = checkpoint.load(path)
    assert meta == {"config": {"k": 1}}
    assert sorted(loaded) == sorted(params)
    for name, value in params.items():
        assert loaded[name].shape == value.shape
        assert loaded[name].tobytes() == value.astype("<f8").tobytes()
    assert checkpoint.digest(path) == digest


def test_checkpoint_bytes_independent_of_insertion_order():
    a = {"x": np.ones(2), "y": np.zeros((1, 2))}
    b = {"y": np.zeros((1, 2)), "x": np.ones(2)}
    assert checkpoint.dumps(a) == checkpoint.dumps(b)


def test_checkpoint_header_and_corruption():
    data = checkpoint.dumps({"x": np.ones(2)})
    assert data[:8] == checkpoint.MAGIC
    with pytest.raises(ContractViolation):
        checkpoint.loads(b"XXXXXXXX" + data[8:])
    with pytest.raises(ContractViolation):
        checkpoint.loads(data + b"\0")
