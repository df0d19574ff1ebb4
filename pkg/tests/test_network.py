import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgdenoise import autodiff as ad
from pgdenoise.errors import CheckpointError, ConfigurationError
from pgdenoise.network import Mlp, load_checkpoint, n_params_for, save_checkpoint


class TestForward:
    def test_zero_net_maps_to_zero(self):
        net = Mlp(
            layer_sizes=(2, 4, 1),
            activations=("tanh", "identity"),
            dropout_rate=0.0,
            params=np.zeros(n_params_for([2, 4, 1])),
            input_shift=np.zeros(2),
            input_scale=np.ones(2),
        )
        x = np.random.default_rng(0).normal(size=(7, 2))
        assert np.all(net.predict(x) == 0.0)

    def test_single_sine_unit(self):
        net = Mlp(
            layer_sizes=(1, 1),
            activations=("sine",),
            dropout_rate=0.0,
            params=np.array([1.0, 0.0]),  # w=1, b=0
            input_shift=np.zeros(1),
            input_scale=np.ones(1),
        )
        out = net.predict(np.array([[np.pi / 2]]))
        assert out[0] == pytest.approx(1.0)

    def test_eval_equals_train_without_dropout(self):
        net = Mlp.create([3, 8, 8, 1], "tanh", dropout_rate=0.0, seed=1)
        x = np.random.default_rng(2).normal(size=(5, 3))
        rng = np.random.default_rng(0)
        a = net.forward(x, mode="eval")
        b = net.forward(x, mode="train", rng=rng)
        np.testing.assert_array_equal(a, b)

    def test_dimension_mismatch_rejected(self):
        net = Mlp.create([3, 4, 1], "tanh", seed=0)
        with pytest.raises(ConfigurationError):
            net.forward(np.zeros((5, 2)))
        with pytest.raises(ConfigurationError):
            net.forward_cols([np.zeros(5)])

    def test_param_count_invariant(self):
        with pytest.raises(ConfigurationError):
            Mlp(
                layer_sizes=(2, 3, 1),
                activations=("tanh", "identity"),
                dropout_rate=0.0,
                params=np.zeros(5),
                input_shift=np.zeros(2),
                input_scale=np.ones(2),
            )

    def test_nonpositive_input_scale_rejected(self):
        with pytest.raises(ConfigurationError):
            Mlp.create([1, 1], "identity", input_norm=(np.zeros(1), np.zeros(1)))

    def test_input_norm_applied(self):
        # identity 1-1 net: output = (x - shift) / scale
        net = Mlp(
            layer_sizes=(1, 1),
            activations=("identity",),
            dropout_rate=0.0,
            params=np.array([1.0, 0.0]),
            input_shift=np.array([2.0]),
            input_scale=np.array([4.0]),
        )
        assert net.predict(np.array([[10.0]]))[0] == pytest.approx(2.0)

    def test_output_norm_applied(self):
        net = Mlp.create([1, 1], ["identity"], output_norm=(25.0, 100.0))
        net.params[:] = [1.0, 0.0]
        assert net.predict(np.array([[0.5]]))[0] == pytest.approx(75.0)

    def test_forward_cols_matches_matrix_forward(self):
        net = Mlp.create([3, 6, 1], "sine", seed=5)
        x = np.random.default_rng(3).normal(size=(9, 3))
        a = net.predict(x)
        b = net.forward_cols([x[:, 0], x[:, 1], x[:, 2]])
        np.testing.assert_allclose(a, b, rtol=1e-15)


class TestDropout:
    def test_expected_train_output_matches_eval(self):
        # single hidden layer: dropout is followed by a linear map, so the
        # mask expectation is exact and the sample mean must match eval output
        net = Mlp.create([2, 16, 1], "tanh", dropout_rate=0.3, seed=7)
        x = np.array([[0.3, -1.2]])
        eval_out = net.predict(x)[0]
        rng = np.random.default_rng(123)
        draws = np.array(
            [net.forward(x, mode="train", rng=rng)[0, 0] for _ in range(10_000)]
        )
        se = draws.std(ddof=1) / np.sqrt(draws.size)
        assert abs(draws.mean() - eval_out) < 3 * se + 1e-12

    def test_train_mode_requires_rng(self):
        net = Mlp.create([2, 4, 1], "tanh", dropout_rate=0.5, seed=0)
        with pytest.raises(ConfigurationError):
            net.forward(np.zeros((1, 2)), mode="train")

    def test_dropout_deterministic_given_rng_seed(self):
        net = Mlp.create([2, 8, 1], "tanh", dropout_rate=0.5, seed=0)
        x = np.random.default_rng(1).normal(size=(4, 2))
        a = net.forward(x, mode="train", rng=np.random.default_rng(42))
        b = net.forward(x, mode="train", rng=np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)


class TestSineSmoothness:
    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_dual2_over_sine_net_is_finite(self, seed):
        rng = np.random.default_rng(seed)
        net = Mlp.create([2, 10, 10, 1], "sine", seed=seed)
        net.params = np.clip(net.params, -10, 10)
        x = rng.uniform(-3, 3, size=(8, 2))

        out = ad.dual2_eval(
            lambda cols: net.forward_cols(cols),
            [x[:, 0], x[:, 1]],
            seeds=[0, 1],
        )
        for payload in (out.val, *out.grad, *out.hess):
            assert np.all(np.isfinite(payload))

    def test_dual2_matches_finite_difference_of_forward(self):
        # trained-or-not, derivative values must agree with FD of the plain pass
        net = Mlp.create([1, 12, 12, 1], "sine", seed=3)
        t0 = 0.7
        out = ad.dual2_eval(lambda cols: net.forward_cols(cols), [np.array([t0])], [0])
        h = 1e-4
        f = lambda t: net.predict(np.array([[t]]))[0]
        d1 = (f(t0 + h) - f(t0 - h)) / (2 * h)
        d2 = (f(t0 + h) - 2 * f(t0) + f(t0 - h)) / (h * h)
        assert out.val[0] == pytest.approx(f(t0), rel=1e-12)
        assert out.grad[0][0] == pytest.approx(d1, rel=1e-5)
        assert out.hess[0][0] == pytest.approx(d2, rel=1e-4)


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        net = Mlp.create(
            [3, 24, 24, 1],
            "sine",
            dropout_rate=0.15,
            seed=11,
            input_norm=(np.array([0.0, 1.0, -2.0]), np.array([1.0, 3.0, 0.5])),
            output_norm=(25.0, 1330.0),
        )
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path, meta={"seed": 11, "iterations": 100})
        loaded = load_checkpoint(path)
        x = np.random.default_rng(0).normal(size=(50, 3))
        np.testing.assert_array_equal(net.predict(x), loaded.predict(x))
        assert loaded.meta["iterations"] == 100
        assert loaded.dropout_rate == net.dropout_rate

    def test_corrupt_parameter_byte_detected(self, tmp_path):
        net = Mlp.create([2, 6, 1], "tanh", seed=0)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        text = path.read_text()
        i = text.index("params=") + len("params=") + 5
        corrupted = text[:i] + ("0" if text[i] != "0" else "1") + text[i + 1 :]
        path.write_text(corrupted)
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_unknown_version_names_both_versions(self, tmp_path):
        net = Mlp.create([1, 2, 1], "tanh", seed=0)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        text = path.read_text().replace("pgdnet-checkpoint v1", "pgdnet-checkpoint v9")
        path.write_text(text)
        with pytest.raises(CheckpointError) as err:
            load_checkpoint(path)
        assert "v9" in str(err.value) and "v1" in str(err.value)

    def test_truncated_file_rejected(self, tmp_path):
        net = Mlp.create([1, 2, 1], "tanh", seed=0)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
