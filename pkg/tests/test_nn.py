"""
Tensor ops, gradients, Adam and checkpoints.
"""
import numpy as np
import pytest

from app.exceptions import CheckpointError, EmptyInputError, NonFiniteError, ShapeMismatchError
from app.services.nn import ops
from app.services.nn.checkpoint import BLOB, load_params, save_params
from app.services.nn.optim import AdamState, LossTerms, adam_step
from app.services.nn.tensor import Tensor, grad


def numeric_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(x)
    for index in np.ndindex(*x.shape):
        plus, minus = x.copy(), x.copy()
        plus[index] += eps
        minus[index] -= eps
        out[index] = (f(plus) - f(minus)) / (2 * eps)
    return out


def check_gradient(op, *arrays, seed: int = 0):
    """Compare grad() of sum(op(...) * weights) with central differences, for every input."""
    weights = np.random.default_rng(seed).normal(size=op(*[Tensor(a) for a in arrays]).shape)

    def scalar(values):
        return float(np.sum(op(*[Tensor(v) for v in values]).data * weights))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    analytic = grad(ops.total(ops.mul(op(*leaves), Tensor(weights))), leaves)
    for i, a in enumerate(arrays):
        def f(value, i=i):
            values = list(arrays)
            values[i] = value
            return scalar(values)
        np.testing.assert_allclose(analytic[i], numeric_gradient(f, a), rtol=1e-5, atol=1e-7)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestGradients:

    def test_linear_and_relu(self, rng):
        check_gradient(lambda x, w, b: ops.relu(ops.linear(x, w, b)),
                       rng.normal(size=(4, 3)), rng.normal(size=(3, 5)), rng.normal(size=5))

    def test_sigmoid(self, rng):
        check_gradient(ops.sigmoid, rng.normal(size=(3, 4)))

    def test_broadcast_add_and_mul(self, rng):
        check_gradient(lambda a, b: ops.mul(ops.add(a, b), a), rng.normal(size=(2, 3, 4)), rng.normal(size=(1, 4)))

    def test_concat_reshape(self, rng):
        check_gradient(lambda a, b: ops.reshape(ops.concat([a, b]), (-1,)), rng.normal(size=(2, 3)), rng.normal(size=(2, 2)))

    def test_mean_and_square_mean(self, rng):
        check_gradient(lambda x: ops.mean(x, axis=1), rng.normal(size=(3, 4, 2)))
        check_gradient(ops.square_mean, rng.normal(size=(3, 4)))

    def test_max_reduce(self, rng):
        check_gradient(lambda x: ops.max_reduce(x, (1, 2)), rng.normal(size=(2, 3, 3, 4)))

    def test_elementwise_maximum(self, rng):
        check_gradient(ops.maximum, rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))

    def test_conv3d(self, rng):
        for padding in ("same", "valid"):
            check_gradient(lambda x, k: ops.conv3d(x, k, padding),
                           rng.normal(size=(1, 4, 4, 4, 2)), rng.normal(size=(3, 3, 3, 2, 3)))

    def test_deconv3d(self, rng):
        for padding in ("same", "valid"):
            check_gradient(lambda y, k: ops.deconv3d(y, k, padding),
                           rng.normal(size=(1, 3, 3, 3, 3)), rng.normal(size=(3, 3, 3, 2, 3)))

    def test_scatter_max(self, rng):
        cells = np.array([[0, 2, 2, 1, 0], [3, 3, 3, 0, 1]])
        check_gradient(lambda x: ops.scatter_max(x, cells, 4), rng.normal(size=(2, 5, 3)))

    def test_masked_mean(self, rng):
        mask = np.array([[1, 0, 1, 1], [0, 0, 0, 0]], dtype=bool)
        check_gradient(lambda x: ops.masked_mean(x, mask), rng.normal(size=(2, 4, 3)))

    def test_gather_rows(self, rng):
        check_gradient(lambda x: ops.gather_rows(x, np.array([2, 0, 2])), rng.normal(size=(3, 4)))

    def test_bce(self, rng):
        labels = np.array([[1.0], [0.0], [1.0]])
        check_gradient(lambda p: ops.bce_loss(ops.sigmoid(p), labels), rng.normal(size=(3, 1)))


class TestOps:

    def test_deconv_is_the_adjoint_of_conv(self, rng):
        kernel = Tensor(rng.normal(size=(3, 3, 3, 2, 5)))
        for padding, size in (("same", 4), ("valid", 5)):
            x = rng.normal(size=(2, size, size, size, 2))
            y_shape = ops.conv3d(Tensor(x), kernel, padding).shape
            y = rng.normal(size=y_shape)
            lhs = np.sum(ops.conv3d(Tensor(x), kernel, padding).data * y)
            rhs = np.sum(x * ops.deconv3d(Tensor(y), kernel, padding).data)
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_valid_conv_shrinks(self, rng):
        out = ops.conv3d(Tensor(rng.normal(size=(1, 6, 6, 6, 2))), Tensor(rng.normal(size=(3, 3, 3, 2, 4))), "valid")
        assert out.shape == (1, 4, 4, 4, 4)

    def test_conv_channel_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            ops.conv3d(Tensor(rng.normal(size=(1, 4, 4, 4, 3))), Tensor(rng.normal(size=(3, 3, 3, 2, 4))))

    def test_scatter_max_empty_cells_are_zero(self):
        x = Tensor(np.array([[[1.0], [-2.0], [5.0]]]))
        out = ops.scatter_max(x, np.array([[0, 0, 2]]), 4)
        assert out.data[0, :, 0].tolist() == [1.0, 0.0, 5.0, 0.0]

    def test_masked_mean_of_empty_mask_is_zero(self):
        out = ops.masked_mean(Tensor(np.ones((1, 3, 2))), np.zeros((1, 3), dtype=bool))
        assert out.data.tolist() == [[0.0, 0.0]]

    def test_mlp_forward_matches_numpy(self, rng):
        x = rng.normal(size=(5, 3))
        layers = [(rng.normal(size=(3, 4)), rng.normal(size=4)), (rng.normal(size=(4, 2)), rng.normal(size=2))]
        hidden = np.maximum(x @ layers[0][0] + layers[0][1], 0.0)
        out = hidden @ layers[1][0] + layers[1][1]
        tensors = [(Tensor(w), Tensor(b)) for w, b in layers]
        assert np.allclose(ops.mlp_forward(Tensor(x), tensors, final_linear=True).data, out)
        assert np.allclose(ops.mlp_forward(Tensor(x), tensors).data, np.maximum(out, 0.0))

    def test_mlp_forward_shape_chain(self, rng):
        layers = [(Tensor(rng.normal(size=(3, 4))), Tensor(np.zeros(4))), (Tensor(rng.normal(size=(5, 2))), Tensor(np.zeros(2)))]
        with pytest.raises(ShapeMismatchError):
            ops.mlp_forward(Tensor(rng.normal(size=(2, 3))), layers)

    def test_square_mean_divides_the_squared_norm_by_the_element_count(self, rng):
        x = rng.normal(size=(2, 3, 3, 3, 4))
        assert ops.square_mean(Tensor(x)).item() == pytest.approx(np.linalg.norm(x) ** 2 / x.size, rel=1e-12)
        assert ops.square_mean(Tensor(np.full((4, 4), 2.0))).item() == pytest.approx(4.0)

    def test_bce_is_clamped(self):
        loss = ops.bce_loss(Tensor(np.array([[0.0], [1.0]])), np.array([[1.0], [0.0]]))
        assert loss.item() == pytest.approx(-np.log(1e-7))

    def test_sigmoid_stays_inside_the_unit_interval(self):
        out = ops.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
        assert 0.0 < out[0] < out[1] < out[2] < 1.0

    def test_mean_of_nothing(self):
        with pytest.raises(EmptyInputError):
            ops.mean(Tensor(np.zeros((0, 3))))

    def test_non_finite_values_are_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([1.0, np.nan]))

    def test_grad_needs_a_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeMismatchError):
            grad(ops.scale(x, 2.0), [x])

    def test_unused_inputs_get_zero_gradients(self):
        x = Tensor(np.ones(3), requires_grad=True)
        unused = Tensor(np.ones(2), requires_grad=True)
        gx, gu = grad(ops.total(ops.mul(x, x)), [x, unused])
        assert gx.tolist() == [2.0, 2.0, 2.0]
        assert gu.tolist() == [0.0, 0.0]


class TestAdam:

    def test_first_step_moves_by_the_learning_rate(self):
        params = {"w": np.array([1.0, -1.0])}
        state = AdamState(lr=0.1)
        updated = adam_step(params, {"w": np.array([3.0, -0.5])}, state)
        np.testing.assert_allclose(updated["w"], [0.9, -0.9], atol=1e-6)
        assert params["w"].tolist() == [1.0, -1.0]
        assert state.step == 1

    def test_minimises_a_quadratic(self):
        params = {"x": np.array([3.0])}
        state = AdamState(lr=0.05)
        for _ in range(500):
            params = adam_step(params, {"x": 2 * params["x"]}, state)
        assert abs(params["x"][0]) < 0.1

    def test_non_finite_gradient(self):
        with pytest.raises(NonFiniteError):
            adam_step({"w": np.zeros(2)}, {"w": np.array([np.inf, 0.0])}, AdamState())

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())

    def test_loss_terms(self):
        terms = LossTerms(bce=0.7, reg=0.2, alpha=0.5)
        assert terms.total == pytest.approx(0.8)
        assert LossTerms(bce=0.7, reg=0.2, alpha=0.0).total == 0.7


class TestCheckpoint:

    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        params = {"enc.w": rng.normal(size=(3, 4)), "enc.b": rng.normal(size=4), "scalar": np.array(1.5)}
        save_params(params, tmp_path / "ckpt")
        loaded = load_params(tmp_path / "ckpt")
        assert sorted(loaded) == sorted(params)
        for name, array in params.items():
            assert loaded[name].shape == array.shape
            assert loaded[name].tobytes() == array.tobytes()

    def test_truncated_blob(self, tmp_path, rng):
        directory = save_params({"w": rng.normal(size=10)}, tmp_path / "ckpt")
        blob = directory / BLOB
        blob.write_bytes(blob.read_bytes()[:40])
        with pytest.raises(CheckpointError):
            load_params(directory)

    def test_missing_files(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_params(tmp_path)
